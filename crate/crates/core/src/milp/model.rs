use serde::{Deserialize, Serialize};

use super::bounds::{Fix, NeuronBounds};
use super::lp::{Lp, Sense};
use super::UnitBoxNet;
use crate::error::{Error, Result};

/// Affine expression over LP variables, stored densely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            coef: Vec::new(),
            constant: c,
        }
    }

    pub fn var(j: usize) -> Self {
        let mut coef = vec![0.0; j + 1];
        coef[j] = 1.0;
        Affine { coef, constant: 0.0 }
    }

    pub fn add_scaled(&mut self, a: f64, other: &Affine) {
        if a == 0.0 {
            return;
        }
        if self.coef.len() < other.coef.len() {
            self.coef.resize(other.coef.len(), 0.0);
        }
        for (s, o) in self.coef.iter_mut().zip(&other.coef) {
            *s += a * o;
        }
        self.constant += a * other.constant;
    }

    pub fn terms(&self) -> Vec<(usize, f64)> {
        self.coef
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, &a)| (j, a))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }
}

/// How a hidden neuron is represented in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// Never active over the box: output fixed at zero.
    Inactive,
    /// Always active over the box: output equals its pre-activation.
    Active,
    /// Needs a continuous output `z` and a binary `b`.
    Unstable { z: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Minimize the infinity-norm radius around the anchor.
    Epsilon,
    MinOutput,
    MaxOutput,
}

/// Constraint on the standardized network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub sense: Sense,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub anchor: Option<Vec<f64>>,
    pub threshold: Option<Threshold>,
    pub objective: Objective,
    /// Also emit rows that the bounds already imply, such as `zhat <= zhat_max`
    /// for every neuron. Useful to expose inconsistent bounds.
    pub redundant_rows: bool,
}

impl ModelSpec {
    pub fn unit_box(dim: usize) -> Self {
        ModelSpec {
            box_lo: vec![0.0; dim],
            box_hi: vec![1.0; dim],
            anchor: None,
            threshold: None,
            objective: Objective::MinOutput,
            redundant_rows: false,
        }
    }
}

/// Big-M MILP encoding of a ReLU network over an input box.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub lp: Lp,
    pub net: UnitBoxNet,
    pub bounds: NeuronBounds,
    pub spec: ModelSpec,
    pub x_vars: Vec<usize>,
    pub eps_var: Option<usize>,
    pub encodings: Vec<Encoding>,
    pub output: Affine,
    /// Constant added to the LP objective to give the model objective.
    pub objective_offset: f64,
}

impl MilpModel {
    pub fn build(net: &UnitBoxNet, bounds: &NeuronBounds, spec: ModelSpec) -> Result<Self> {
        let d = net.input_dim();
        if spec.box_lo.len() != d || spec.box_hi.len() != d {
            return Err(Error::Argument("box dimension does not match the network".into()));
        }
        if (0..d).any(|i| !(spec.box_lo[i] <= spec.box_hi[i])) {
            return Err(Error::Argument("empty input box".into()));
        }
        if spec.objective == Objective::Epsilon && spec.anchor.is_none() {
            return Err(Error::Argument("the radius objective needs an anchor".into()));
        }
        if let Some(a) = &spec.anchor {
            if a.len() != d {
                return Err(Error::Argument("anchor dimension does not match the network".into()));
            }
        }
        let hidden = net.hidden_widths();
        if bounds.lower.len() != hidden.len() || bounds.lower.iter().zip(&hidden).any(|(l, &w)| l.len() != w) {
            return Err(Error::Argument("bounds do not match the network".into()));
        }

        let mut lp = Lp::new();
        let x_vars: Vec<usize> = (0..d)
            .map(|i| lp.add_var(spec.box_lo[i], spec.box_hi[i], 0.0, format!("x{i}")))
            .collect();
        let eps_var = if spec.objective == Objective::Epsilon {
            let e = lp.add_var(0.0, 1.0, 1.0, "eps");
            let x0 = spec.anchor.as_ref().unwrap();
            for i in 0..d {
                if x0[i] < spec.box_hi[i] {
                    lp.add_row(&[(x_vars[i], 1.0), (e, -1.0)], Sense::Le, x0[i], format!("ball_hi{i}"));
                }
                if x0[i] > spec.box_lo[i] {
                    lp.add_row(&[(x_vars[i], 1.0), (e, 1.0)], Sense::Ge, x0[i], format!("ball_lo{i}"));
                }
            }
            Some(e)
        } else {
            None
        };

        let mut prev: Vec<Affine> = x_vars.iter().map(|&j| Affine::var(j)).collect();
        let mut encodings = Vec::new();
        let last = net.weights.len() - 1;
        let mut g = 0usize;
        for k in 0..last {
            let w = &net.weights[k];
            let mut next = Vec::with_capacity(w.nrows());
            for r in 0..w.nrows() {
                let mut zhat = Affine::constant(net.biases[k][r]);
                for (c, &a) in w.row(r).iter().enumerate() {
                    zhat.add_scaled(a, &prev[c]);
                }
                let (l, u) = (bounds.lower[k][r], bounds.upper[k][r]);
                let terms = zhat.terms();
                if spec.redundant_rows {
                    lp.add_row(&terms, Sense::Le, u - zhat.constant, format!("zhat_max{g}"));
                    lp.add_row(&terms, Sense::Ge, l - zhat.constant, format!("zhat_min{g}"));
                }
                let (enc, post) = if u <= 0.0 {
                    (Encoding::Inactive, Affine::constant(0.0))
                } else if l >= 0.0 {
                    (Encoding::Active, zhat)
                } else {
                    let z = lp.add_var(0.0, u, 0.0, format!("z{g}"));
                    let b = lp.add_var(0.0, 1.0, 0.0, format!("b{g}"));
                    let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, -a)).collect();
                    let mut row = neg.clone();
                    row.push((z, 1.0));
                    lp.add_row(&row, Sense::Ge, zhat.constant, format!("relu_lo{g}"));
                    let mut row = neg;
                    row.push((z, 1.0));
                    row.push((b, -l));
                    lp.add_row(&row, Sense::Le, zhat.constant - l, format!("relu_hi{g}"));
                    lp.add_row(&[(z, 1.0), (b, -u)], Sense::Le, 0.0, format!("relu_on{g}"));
                    (Encoding::Unstable { z, b }, Affine::var(z))
                };
                encodings.push(enc);
                next.push(post);
                g += 1;
            }
            prev = next;
        }
        let mut output = Affine::constant(net.biases[last][0]);
        for (c, &a) in net.weights[last].row(0).iter().enumerate() {
            output.add_scaled(a, &prev[c]);
        }
        output.coef.resize(lp.num_vars(), 0.0);
        let out_terms = output.terms();
        if let Some(t) = spec.threshold {
            lp.add_row(&out_terms, t.sense, t.value - output.constant, "threshold");
        }
        let objective_offset = match spec.objective {
            Objective::Epsilon => 0.0,
            Objective::MinOutput => {
                for &(j, a) in &out_terms {
                    lp.cost[j] += a;
                }
                output.constant
            }
            Objective::MaxOutput => {
                for &(j, a) in &out_terms {
                    lp.cost[j] -= a;
                }
                -output.constant
            }
        };
        Ok(MilpModel {
            lp,
            net: net.clone(),
            bounds: bounds.clone(),
            spec,
            x_vars,
            eps_var,
            encodings,
            output,
            objective_offset,
        })
    }

    pub fn num_binaries(&self) -> usize {
        self.encodings.iter().filter(|e| matches!(e, Encoding::Unstable { .. })).count()
    }

    /// Fixings implied by the root encoding: stable neurons are fixed, the rest free.
    pub fn root_fixes(&self) -> Vec<Fix> {
        self.encodings
            .iter()
            .map(|e| match e {
                Encoding::Inactive => Fix::Inactive,
                Encoding::Active => Fix::Active,
                Encoding::Unstable { .. } => Fix::Free,
            })
            .collect()
    }

    /// Input coordinates of an LP solution.
    pub fn inputs(&self, sol: &[f64]) -> Vec<f64> {
        self.x_vars.iter().map(|&j| sol[j]).collect()
    }

    /// Textual listing of the model for debugging.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "# inputs {} hidden {:?} binaries {} rows {}\n",
            self.net.input_dim(),
            self.net.hidden_widths(),
            self.num_binaries(),
            self.lp.num_rows()
        );
        if self.objective_offset != 0.0 {
            s.push_str(&format!("# objective offset {}\n", self.objective_offset));
        }
        s.push_str(&self.lp.dump());
        s
    }
}
