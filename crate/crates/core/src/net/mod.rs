//! Feed-forward ReLU regressor with exact reverse-mode gradients.
//!
//! The network maps a standardized operating point to a standardized damping
//! ratio: `z_0 = x`, `zhat_k = W_k z_{k-1} + b_k`, `z_k = max(zhat_k, 0)` for
//! the hidden layers, and an affine output layer.

mod train;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Standardizer;
use crate::error::{Error, Result};
use crate::sampling::LabeledSample;
use crate::seeding;

pub use train::{train, Adam, EpochLosses, TrainConfig, TrainReport, Trainer};

/// Dense ReLU network plus the standardizer it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `[4, N_1, ..., N_K, 1]`
    widths: Vec<usize>,
    /// `weights[k]` has shape `[widths[k + 1], widths[k]]`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    pub standardizer: Standardizer,
}

/// Glorot-uniform weights, zero biases, drawn layer by layer in row-major order.
pub fn init_params(widths: &[usize], seed: u64) -> Result<(Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    validate_widths(widths)?;
    let mut rng = seeding::rng(seed);
    let mut weights = Vec::with_capacity(widths.len() - 1);
    let mut biases = Vec::with_capacity(widths.len() - 1);
    for k in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[k], widths[k + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok((weights, biases))
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths[0] == 0 || *widths.last().unwrap() != 1 || widths.contains(&0) {
        return Err(Error::Argument(format!(
            "widths must be [d_in, N_1, ..., 1] with positive entries, got {widths:?}"
        )));
    }
    Ok(())
}

/// Standardized inputs, outputs and gradients for a set of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub grad: Array2<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[LabeledSample], st: &Standardizer) -> Self {
        let n = samples.len();
        let mut x = Array2::zeros((n, 4));
        let mut grad = Array2::zeros((n, 4));
        let mut y = Array1::zeros(n);
        for (j, s) in samples.iter().enumerate() {
            let xs = st.x_to_std(&s.x);
            let gs = st.transform_gradient(&s.grad);
            for i in 0..4 {
                x[[j, i]] = xs[i];
                grad[[j, i]] = gs[i];
            }
            y[j] = st.y_to_std(s.zeta);
        }
        Batch { x, y, grad }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Parameter gradients, laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Data and Jacobian terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub data: f64,
    pub jacobian: f64,
}

impl Losses {
    pub fn objective(&self, alpha_j: f64) -> f64 {
        if alpha_j == 0.0 {
            self.data
        } else {
            self.data + alpha_j * self.jacobian
        }
    }
}

struct Tape {
    /// Post-activations `z_0 .. z_K` (z_0 is the input).
    acts: Vec<Array2<f64>>,
    /// Hidden-layer masks `zhat_k > 0`, k = 1..K.
    masks: Vec<Array2<f64>>,
    out: Array1<f64>,
}

impl Mlp {
    pub fn new(widths: &[usize], seed: u64, standardizer: Standardizer) -> Result<Self> {
        let (weights, biases) = init_params(widths, seed)?;
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            standardizer,
        })
    }

    /// `hidden` layers of `width` neurons on a 4-input, 1-output network.
    pub fn with_shape(hidden: usize, width: usize, seed: u64, standardizer: Standardizer) -> Result<Self> {
        let mut widths = vec![4];
        widths.extend(std::iter::repeat(width).take(hidden));
        widths.push(1);
        Self::new(&widths, seed, standardizer)
    }

    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        standardizer: Standardizer,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Argument("need one bias vector per weight matrix".into()));
        }
        let mut widths = vec![weights[0].ncols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *widths.last().unwrap() || w.nrows() != b.len() {
                return Err(Error::Argument(format!("layer {k} shape mismatch")));
            }
            widths.push(w.nrows());
        }
        validate_widths(&widths)?;
        if weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) || biases.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(Mlp {
            widths,
            weights,
            biases,
            standardizer,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Standardized output for a standardized input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Argument(format!("expected {} inputs, got {}", self.input_dim(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut z: Vec<f64> = x.to_vec();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next: Vec<f64> = b.to_vec();
            for (r, row) in w.outer_iter().enumerate() {
                next[r] += row.iter().zip(&z).map(|(a, v)| a * v).sum::<f64>();
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            z = next;
        }
        Ok(z[0])
    }

    /// Batched forward pass over rows of standardized inputs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut z = x.to_owned();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = z.dot(&w.t());
            next += b;
            if k < last {
                next.mapv_inplace(|v| v.max(0.0));
            }
            z = next;
        }
        z.column(0).to_owned()
    }

    /// Predicted damping ratio (percent) at a physical operating point.
    pub fn predict(&self, x: &[f64; 4]) -> f64 {
        let xs = self.standardizer.x_to_std(x);
        self.standardizer.y_from_std(self.forward(&xs).expect("finite input"))
    }

    /// Predicted damping ratios (percent) at physical operating points.
    pub fn predict_many(&self, xs: &[[f64; 4]]) -> Vec<f64> {
        const CHUNK: usize = 8192;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            let mut m = Array2::zeros((chunk.len(), 4));
            for (j, x) in chunk.iter().enumerate() {
                let s = self.standardizer.x_to_std(x);
                for i in 0..4 {
                    m[[j, i]] = s[i];
                }
            }
            out.extend(self.forward_batch(m.view()).iter().map(|&y| self.standardizer.y_from_std(y)));
        }
        out
    }

    /// `d yhat / d x` in standardized units; ReLU derivative at 0 is taken as 0.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Argument(format!("expected {} inputs, got {}", self.input_dim(), x.len())));
        }
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row shape");
        let tape = self.tape(xm.view());
        Ok(self.jacobian_rows(&tape).row(0).to_vec())
    }

    fn tape(&self, x: ArrayView2<f64>) -> Tape {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.to_owned()];
        let mut masks = Vec::with_capacity(last);
        for k in 0..last {
            let mut zhat = acts[k].dot(&self.weights[k].t());
            zhat += &self.biases[k];
            masks.push(zhat.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            zhat.mapv_inplace(|v| v.max(0.0));
            acts.push(zhat);
        }
        let mut out = acts[last].dot(&self.weights[last].t());
        out += &self.biases[last];
        Tape {
            acts,
            masks,
            out: out.column(0).to_owned(),
        }
    }

    /// Forward-mode tangents of the hidden layers for input direction `i`.
    fn tangents(&self, tape: &Tape, i: usize) -> Vec<Array2<f64>> {
        let n = tape.out.len();
        let hidden = self.weights.len() - 1;
        let mut ts = Vec::with_capacity(hidden);
        let col = self.weights[0].column(i);
        let mut t = Array2::zeros((n, self.widths[1]));
        t.assign(&col.broadcast((n, self.widths[1])).expect("broadcast"));
        t *= &tape.masks[0];
        ts.push(t);
        for k in 1..hidden {
            let mut next = ts[k - 1].dot(&self.weights[k].t());
            next *= &tape.masks[k];
            ts.push(next);
        }
        ts
    }

    fn jacobian_rows(&self, tape: &Tape) -> Array2<f64> {
        let n = tape.out.len();
        let d = self.input_dim();
        let last = self.weights.len() - 1;
        let mut jac = Array2::zeros((n, d));
        if last == 0 {
            for j in 0..n {
                jac.row_mut(j).assign(&self.weights[0].row(0));
            }
            return jac;
        }
        for i in 0..d {
            let ts = self.tangents(tape, i);
            let col = ts[last - 1].dot(&self.weights[last].row(0));
            jac.column_mut(i).assign(&col);
        }
        jac
    }

    /// Data and Jacobian losses on a batch (no gradients).
    pub fn loss(&self, batch: &Batch, with_jacobian: bool) -> Result<Losses> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let tape = self.tape(batch.x.view());
        let n = batch.len() as f64;
        let data = (&tape.out - &batch.y).mapv(|r| r * r).sum() / n;
        let jacobian = if with_jacobian {
            let jac = self.jacobian_rows(&tape);
            (&jac - &batch.grad).mapv(|r| r * r).sum() / n
        } else {
            0.0
        };
        Ok(Losses { data, jacobian })
    }

    /// Losses and the gradient of `L_y + alpha_j L_J` with respect to all parameters.
    pub fn loss_and_grad(&self, batch: &Batch, alpha_j: f64) -> Result<(Losses, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let n = batch.len() as f64;
        let last = self.weights.len() - 1;
        let tape = self.tape(batch.x.view());
        let resid = &tape.out - &batch.y;
        let data = resid.mapv(|r| r * r).sum() / n;

        let mut gw: Vec<Array2<f64>> = self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let mut gb: Vec<Array1<f64>> = self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();

        // data term
        let mut delta = (resid * (2.0 / n)).insert_axis(Axis(1));
        for k in (0..=last).rev() {
            gw[k] += &delta.t().dot(&tape.acts[k]);
            gb[k] += &delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.weights[k]);
                prev *= &tape.masks[k - 1];
                delta = prev;
            }
        }

        // Jacobian term; masks are piecewise constant so only the weights carry gradient
        let mut jacobian = 0.0;
        if alpha_j != 0.0 {
            let d = self.input_dim();
            if last == 0 {
                for j in 0..batch.len() {
                    for i in 0..d {
                        let r = self.weights[0][[0, i]] - batch.grad[[j, i]];
                        jacobian += r * r;
                        gw[0][[0, i]] += alpha_j * 2.0 * r / n;
                    }
                }
                jacobian /= n;
            } else {
                for i in 0..d {
                    let ts = self.tangents(&tape, i);
                    let ji = ts[last - 1].dot(&self.weights[last].row(0));
                    let r = &ji - &batch.grad.column(i);
                    jacobian += r.mapv(|v| v * v).sum();
                    let r = r * (alpha_j * 2.0 / n);
                    // output layer
                    gw[last].row_mut(0).scaled_add(1.0, &ts[last - 1].t().dot(&r));
                    // adjoint of the last tangent, already masked
                    let mut v = r.insert_axis(Axis(1)).dot(&self.weights[last].slice(s![0..1, ..]));
                    v *= &tape.masks[last - 1];
                    for k in (1..last).rev() {
                        gw[k] += &v.t().dot(&ts[k - 1]);
                        let mut prev = v.dot(&self.weights[k]);
                        prev *= &tape.masks[k - 1];
                        v = prev;
                    }
                    let colsum = v.sum_axis(Axis(0));
                    gw[0].column_mut(i).scaled_add(1.0, &colsum);
                }
                jacobian /= n;
            }
        }

        let losses = Losses { data, jacobian };
        if !losses.data.is_finite() || !losses.jacobian.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok((losses, Gradients { weights: gw, biases: gb }))
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    /// Re-expresses the network under a new standardizer without changing
    /// the function it computes in physical units.
    pub fn restandardize(&mut self, new: Standardizer) {
        let old = self.standardizer;
        if old == new || self.input_dim() != 4 {
            self.standardizer = new;
            return;
        }
        // x_old = (x_new * s_new + m_new - m_old) / s_old
        let scale: [f64; 4] = std::array::from_fn(|i| new.sigma_x[i] / old.sigma_x[i]);
        let shift: [f64; 4] = std::array::from_fn(|i| (new.mu_x[i] - old.mu_x[i]) / old.sigma_x[i]);
        let w0 = &mut self.weights[0];
        let mut db = Array1::zeros(w0.nrows());
        for (r, mut row) in w0.outer_iter_mut().enumerate() {
            for i in 0..4 {
                db[r] += row[i] * shift[i];
                row[i] *= scale[i];
            }
        }
        self.biases[0] += &db;
        // y_new = (y_old * s_old + m_old - m_new) / s_new
        let last = self.weights.len() - 1;
        let ratio = old.sigma_y / new.sigma_y;
        self.weights[last].mapv_inplace(|v| v * ratio);
        let b = &mut self.biases[last];
        Zip::from(b).for_each(|v| *v = (*v * old.sigma_y + old.mu_y - new.mu_y) / new.sigma_y);
        self.standardizer = new;
    }

    pub fn to_file(&self, meta: Option<&ModelMeta>) -> ModelFile {
        ModelFile {
            widths: self.widths.clone(),
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            standardizer: self.standardizer,
            meta: meta.cloned(),
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.weights.len() + 1 != f.widths.len() || f.biases.len() + 1 != f.widths.len() {
            return Err(Error::Parse("model file layer count mismatch".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..f.weights.len() {
            let w = Array2::from_shape_vec((f.widths[k + 1], f.widths[k]), f.weights[k].clone())
                .map_err(|e| Error::Parse(format!("layer {k} weights: {e}")))?;
            weights.push(w);
            biases.push(Array1::from(f.biases[k].clone()));
        }
        Mlp::from_parts(weights, biases, f.standardizer)
    }

    pub fn save(&self, path: &Path, meta: Option<&ModelMeta>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file(meta))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<ModelMeta>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ModelFile = serde_json::from_str(&text)?;
        Ok((Mlp::from_file(&f)?, f.meta))
    }
}

/// Training metadata stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config: TrainConfig,
    pub best_epoch: usize,
}

/// On-disk model: widths, row-major weights, biases and standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ModelMeta>,
}

#[cfg(test)]
mod tests;
