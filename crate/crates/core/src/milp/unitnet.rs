use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::net::Mlp;
use crate::sampling::Hypercube;

/// A network re-expressed on unit-box inputs.
///
/// The min-max map from the unit box to physical units and the input
/// standardization are folded into the first layer; the output stays
/// standardized, so physical thresholds go through [`UnitBoxNet::threshold_std`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBoxNet {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl UnitBoxNet {
    pub fn from_mlp(net: &Mlp, cube: &Hypercube) -> Result<Self> {
        if net.input_dim() != 4 {
            return Err(Error::Argument("expected a four-input network".into()));
        }
        let st = &net.standardizer;
        let mut weights: Vec<Array2<f64>> = net.weights().to_vec();
        let mut biases: Vec<Array1<f64>> = net.biases().to_vec();
        let w0 = &mut weights[0];
        for (r, mut row) in w0.outer_iter_mut().enumerate() {
            for i in 0..4 {
                let a = row[i];
                biases[0][r] += a * (cube.lower[i] - st.mu_x[i]) / st.sigma_x[i];
                row[i] = a * cube.width(i) / st.sigma_x[i];
            }
        }
        Ok(UnitBoxNet {
            weights,
            biases,
            mu_y: st.mu_y,
            sigma_y: st.sigma_y,
        })
    }

    /// Builds directly from unit-box weights and biases with an identity output map.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        let net = Mlp::from_parts(weights, biases, crate::dataset::Standardizer::identity())?;
        Ok(UnitBoxNet {
            weights: net.weights().to_vec(),
            biases: net.biases().to_vec(),
            mu_y: 0.0,
            sigma_y: 1.0,
        })
    }

    /// Drops inputs with a fixed value, folding them into the first-layer bias.
    pub fn fix_inputs(&self, fixed: &[Option<f64>]) -> Result<Self> {
        if fixed.len() != self.input_dim() {
            return Err(Error::Argument("one entry per input required".into()));
        }
        let free: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i].is_none()).collect();
        if free.is_empty() {
            return Err(Error::Argument("at least one input must stay free".into()));
        }
        let w0 = &self.weights[0];
        let mut b0 = self.biases[0].clone();
        for (i, v) in fixed.iter().enumerate() {
            if let Some(v) = v {
                for r in 0..w0.nrows() {
                    b0[r] += w0[[r, i]] * v;
                }
            }
        }
        let nw = Array2::from_shape_fn((w0.nrows(), free.len()), |(r, c)| w0[[r, free[c]]]);
        let mut out = self.clone();
        out.weights[0] = nw;
        out.biases[0] = b0;
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    /// Widths of the hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1].iter().map(|w| w.nrows()).collect()
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn threshold_std(&self, physical: f64) -> f64 {
        (physical - self.mu_y) / self.sigma_y
    }

    pub fn to_physical(&self, y_std: f64) -> f64 {
        y_std * self.sigma_y + self.mu_y
    }

    /// Standardized output and the hidden pre-activations, layer by layer.
    pub fn forward_full(&self, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        assert_eq!(x.len(), self.input_dim());
        let last = self.weights.len() - 1;
        let mut z: Vec<f64> = x.to_vec();
        let mut pre = Vec::with_capacity(last);
        for k in 0..=last {
            let w = &self.weights[k];
            let mut next: Vec<f64> = self.biases[k].to_vec();
            for (r, v) in next.iter_mut().enumerate() {
                let row = w.row(r);
                *v += row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            }
            if k < last {
                pre.push(next.clone());
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            z = next;
        }
        (z[0], pre)
    }

    /// Standardized output at a unit-box point.
    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_full(x).0
    }

    /// Prediction in physical output units.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.to_physical(self.forward(x))
    }

    /// Activation pattern (pre-activation strictly positive) in global neuron order.
    pub fn pattern(&self, x: &[f64]) -> Vec<bool> {
        self.forward_full(x).1.into_iter().flatten().map(|v| v > 0.0).collect()
    }
}
