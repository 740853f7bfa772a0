use serde::{Deserialize, Serialize};

use super::UnitBoxNet;

/// Pre-activation intervals per hidden layer plus the output interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub output: (f64, f64),
}

impl NeuronBounds {
    /// Bounds of neuron `j` in global order.
    pub fn get(&self, j: usize) -> (f64, f64) {
        let mut j = j;
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if j < lo.len() {
                return (lo[j], hi[j]);
            }
            j -= lo.len();
        }
        panic!("neuron index out of range");
    }

    pub fn flat(&self) -> Vec<(f64, f64)> {
        self.lower
            .iter()
            .zip(&self.upper)
            .flat_map(|(lo, hi)| lo.iter().copied().zip(hi.iter().copied()))
            .collect()
    }

    pub fn set(&mut self, j: usize, lo: f64, hi: f64) {
        let mut j = j;
        for k in 0..self.lower.len() {
            if j < self.lower[k].len() {
                self.lower[k][j] = lo;
                self.upper[k][j] = hi;
                return;
            }
            j -= self.lower[k].len();
        }
        panic!("neuron index out of range");
    }
}

/// Activation state imposed on a neuron during search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fix {
    Free,
    Inactive,
    Active,
}

/// Widens an interval endpoint to absorb rounding in the sign-split sums.
fn pad(scale: f64) -> f64 {
    1e-12 * (1.0 + scale)
}

/// Interval bound propagation over the box `[lo, hi]`.
pub fn propagate_bounds(net: &UnitBoxNet, lo: &[f64], hi: &[f64]) -> NeuronBounds {
    propagate_with(net, lo, hi, None, None).expect("unconstrained propagation never empties")
}

/// Bound propagation honouring neuron fixings and intersecting with
/// previously known bounds. Returns `None` when some interval becomes empty,
/// meaning no input in the box is compatible with the fixings.
///
/// Each layer first gets interval bounds; every layer after the first is then
/// tightened by substituting linear ReLU relaxations back to the inputs and
/// optimizing the resulting affine function over the box.
pub fn propagate_with(
    net: &UnitBoxNet,
    lo: &[f64],
    hi: &[f64],
    fixes: Option<&[Fix]>,
    known: Option<&NeuronBounds>,
) -> Option<NeuronBounds> {
    assert_eq!(lo.len(), net.input_dim());
    assert_eq!(hi.len(), net.input_dim());
    let last = net.weights.len() - 1;
    let mut zl: Vec<f64> = lo.to_vec();
    let mut zu: Vec<f64> = hi.to_vec();
    let mut out = NeuronBounds {
        lower: Vec::with_capacity(last),
        upper: Vec::with_capacity(last),
        output: (0.0, 0.0),
    };
    // relaxations a >= sl z, a <= su z + tu for the layers done so far
    let mut relax: Vec<Relaxation> = Vec::with_capacity(last);
    let mut g = 0usize;
    for k in 0..=last {
        let w = &net.weights[k];
        let b = &net.biases[k];
        let rows = w.nrows();
        let mut nl = vec![0.0; rows];
        let mut nu = vec![0.0; rows];
        for r in 0..rows {
            let mut l = b[r];
            let mut u = b[r];
            let mut scale = b[r].abs();
            for (c, &a) in w.row(r).iter().enumerate() {
                if a >= 0.0 {
                    l += a * zl[c];
                    u += a * zu[c];
                } else {
                    l += a * zu[c];
                    u += a * zl[c];
                }
                scale += a.abs() * zl[c].abs().max(zu[c].abs());
            }
            nl[r] = l - pad(scale);
            nu[r] = u + pad(scale);
        }
        if k > 0 {
            let (bl, bu) = back_substitute(net, k, &relax, lo, hi);
            for r in 0..rows {
                nl[r] = nl[r].max(bl[r]);
                nu[r] = nu[r].min(bu[r]);
            }
        }
        if k == last {
            out.output = (nl[0], nu[0]);
            if nl[0] > nu[0] {
                return None;
            }
            break;
        }
        let mut post_l = vec![0.0; rows];
        let mut post_u = vec![0.0; rows];
        let mut layer = Relaxation {
            lower_slope: vec![0.0; rows],
            upper_slope: vec![0.0; rows],
            upper_offset: vec![0.0; rows],
        };
        for r in 0..rows {
            if let Some(kb) = known {
                nl[r] = nl[r].max(kb.lower[k][r]);
                nu[r] = nu[r].min(kb.upper[k][r]);
            }
            let fix = fixes.map_or(Fix::Free, |f| f[g + r]);
            match fix {
                Fix::Inactive => nu[r] = nu[r].min(0.0),
                Fix::Active => nl[r] = nl[r].max(0.0),
                Fix::Free => {}
            }
            if nl[r] > nu[r] {
                return None;
            }
            let (l, u) = (nl[r], nu[r]);
            if fix == Fix::Inactive || u <= 0.0 {
                // a = 0
            } else if fix == Fix::Active || l >= 0.0 {
                layer.lower_slope[r] = 1.0;
                layer.upper_slope[r] = 1.0;
            } else {
                let s = u / (u - l);
                layer.upper_slope[r] = s;
                layer.upper_offset[r] = -s * l;
                layer.lower_slope[r] = if u >= -l { 1.0 } else { 0.0 };
            }
            match fix {
                Fix::Inactive => {}
                Fix::Active => {
                    post_l[r] = l;
                    post_u[r] = u;
                }
                Fix::Free => {
                    post_l[r] = l.max(0.0);
                    post_u[r] = u.max(0.0);
                }
            }
        }
        relax.push(layer);
        g += rows;
        out.lower.push(nl);
        out.upper.push(nu);
        zl = post_l;
        zu = post_u;
    }
    Some(out)
}

/// Linear relaxation of one hidden layer's activations in terms of its
/// pre-activations.
struct Relaxation {
    lower_slope: Vec<f64>,
    upper_slope: Vec<f64>,
    upper_offset: Vec<f64>,
}

/// Lower and upper bounds of layer `k`'s pre-activations from the
/// relaxations of all earlier layers.
fn back_substitute(net: &UnitBoxNet, k: usize, relax: &[Relaxation], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rows = net.weights[k].nrows();
    let mut lower = vec![0.0; rows];
    let mut upper = vec![0.0; rows];
    for (sign, target) in [(1.0, &mut upper), (-1.0, &mut lower)] {
        // bound sign * z_k from above: coefficients on the current layer's activations
        let w = &net.weights[k];
        let mut coef: Vec<Vec<f64>> = (0..rows).map(|r| w.row(r).iter().map(|a| sign * a).collect()).collect();
        let mut cst: Vec<f64> = (0..rows).map(|r| sign * net.biases[k][r]).collect();
        let mut scale: Vec<f64> = cst.iter().map(|c| c.abs()).collect();
        for j in (0..k).rev() {
            let rl = &relax[j];
            let wj = &net.weights[j];
            let bj = &net.biases[j];
            for r in 0..rows {
                // activations -> pre-activations of layer j
                let mut zc = vec![0.0; coef[r].len()];
                for (i, &lam) in coef[r].iter().enumerate() {
                    if lam >= 0.0 {
                        zc[i] = lam * rl.upper_slope[i];
                        cst[r] += lam * rl.upper_offset[i];
                        scale[r] += (lam * rl.upper_offset[i]).abs();
                    } else {
                        zc[i] = lam * rl.lower_slope[i];
                    }
                }
                // pre-activations -> activations of layer j - 1 (or inputs)
                let mut next = vec![0.0; wj.ncols()];
                for (i, &c) in zc.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    cst[r] += c * bj[i];
                    scale[r] += (c * bj[i]).abs();
                    for (n, &a) in next.iter_mut().zip(wj.row(i)) {
                        *n += c * a;
                    }
                }
                coef[r] = next;
            }
        }
        for r in 0..rows {
            let mut v = cst[r];
            let mut sc = scale[r];
            for (i, &c) in coef[r].iter().enumerate() {
                let x = if c >= 0.0 { hi[i] } else { lo[i] };
                v += c * x;
                sc += (c * x).abs();
            }
            target[r] = sign * (v + 1e3 * pad(sc));
        }
    }
    (lower, upper)
}
