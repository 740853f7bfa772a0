use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::bnb::{branch_and_bound, BnbConfig, BnbStatus, Incumbent};
use super::bounds::{propagate_bounds, NeuronBounds};
use super::lp::Sense;
use super::model::{MilpModel, ModelSpec, Objective, Threshold};
use super::UnitBoxNet;
use crate::error::{Error, Result};
use crate::sampling::{classify, StabilityClass};
use crate::seeding;
use crate::walks::TARGET_ZETA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    Certified,
    SkippedMarginal,
    InfeasibleInBox,
    SolverLimit,
    InfeasibleAnchor,
}

impl CertStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertStatus::Certified => "certified",
            CertStatus::SkippedMarginal => "skipped_marginal",
            CertStatus::InfeasibleInBox => "infeasible_in_box",
            CertStatus::SolverLimit => "solver_limit",
            CertStatus::InfeasibleAnchor => "infeasible_anchor",
        }
    }

    /// Whether the certificate carries a sound radius.
    pub fn is_sound(self) -> bool {
        matches!(self, CertStatus::Certified | CertStatus::InfeasibleInBox)
    }
}

/// Which side of the threshold the anchor sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Anchor above the threshold; search for predictions `<= threshold`.
    Stable,
    /// Anchor below the threshold; search for predictions `>= threshold`.
    Unstable,
}

impl Side {
    /// Threshold in percent for margin width `delta`.
    pub fn threshold(self, delta: f64) -> f64 {
        match self {
            Side::Stable => TARGET_ZETA + delta,
            Side::Unstable => TARGET_ZETA - delta,
        }
    }

    /// Whether a physical prediction has crossed `threshold`.
    pub fn crosses(self, prediction: f64, threshold: f64) -> bool {
        match self {
            Side::Stable => prediction <= threshold,
            Side::Unstable => prediction >= threshold,
        }
    }

    fn sense(self) -> Sense {
        match self {
            Side::Stable => Sense::Le,
            Side::Unstable => Sense::Ge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub bnb: BnbConfig,
    /// Uniform samples drawn to seed the incumbent before branching.
    pub warm_samples: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            bnb: BnbConfig::default(),
            warm_samples: 2000,
            seed: 0x5eed,
        }
    }
}

/// Outcome of a radius verification around an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Anchor in unit-box coordinates of the free inputs.
    pub anchor: Vec<f64>,
    pub anchor_prediction: f64,
    pub side: Option<Side>,
    pub delta: f64,
    /// Threshold in percent.
    pub threshold: f64,
    pub epsilon_star: f64,
    pub lower_bound: f64,
    pub witness: Option<Vec<f64>>,
    pub witness_prediction: Option<f64>,
    pub status: CertStatus,
    pub nodes: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl Certificate {
    fn skipped(anchor: &[f64], pred: f64, delta: f64, status: CertStatus) -> Self {
        Certificate {
            anchor: anchor.to_vec(),
            anchor_prediction: pred,
            side: None,
            delta,
            threshold: f64::NAN,
            epsilon_star: 0.0,
            lower_bound: 0.0,
            witness: None,
            witness_prediction: None,
            status,
            nodes: 0,
            wall_time_s: 0.0,
        }
    }
}

/// Infinity-norm distance.
pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cheapest crossing found by sampling the box and bisecting toward the anchor.
fn sampled_incumbent(
    net: &UnitBoxNet,
    anchor: &[f64],
    side: Side,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Option<Incumbent> {
    let mut rng = seeding::rng(seed);
    let d = anchor.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut p = vec![0.0; d];
    for _ in 0..samples {
        p.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let dist = linf(&p, anchor);
        if best.as_ref().map_or(false, |(b, _)| dist >= *b) {
            continue;
        }
        if side.crosses(net.predict(&p), threshold) {
            best = Some((dist, p.clone()));
        }
    }
    let (_, far) = best?;
    // bisection on the segment keeps a crossing end point
    let at = |t: f64| -> Vec<f64> { anchor.iter().zip(&far).map(|(a, f)| a + t * (f - a)).collect() };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if side.crosses(net.predict(&at(mid)), threshold) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let inputs = at(hi);
    Some(Incumbent {
        objective: linf(&inputs, anchor),
        inputs,
    })
}

/// Smallest infinity-norm radius around `anchor` (unit coordinates) at which
/// the prediction crosses `threshold` (percent) in the direction given by `side`.
pub fn verify_anchor(
    net: &UnitBoxNet,
    anchor: &[f64],
    side: Side,
    delta: f64,
    cfg: &VerifyConfig,
) -> Result<Certificate> {
    let start = Instant::now();
    let d = net.input_dim();
    if anchor.len() != d || anchor.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument("anchor must lie in the unit box".into()));
    }
    let threshold = side.threshold(delta);
    let pred = net.predict(anchor);
    let mut cert = Certificate {
        anchor: anchor.to_vec(),
        anchor_prediction: pred,
        side: Some(side),
        delta,
        threshold,
        epsilon_star: 0.0,
        lower_bound: 0.0,
        witness: None,
        witness_prediction: None,
        status: CertStatus::Certified,
        nodes: 0,
        wall_time_s: 0.0,
    };
    if side.crosses(pred, threshold) {
        cert.witness = Some(anchor.to_vec());
        cert.witness_prediction = Some(pred);
        cert.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(cert);
    }

    let warm = sampled_incumbent(net, anchor, side, threshold, cfg.warm_samples, cfg.seed);
    let radius = warm.as_ref().map_or(1.0, |w| w.objective);
    let box_lo: Vec<f64> = anchor.iter().map(|a| (a - radius).max(0.0)).collect();
    let box_hi: Vec<f64> = anchor.iter().map(|a| (a + radius).min(1.0)).collect();
    let bounds = propagate_bounds(net, &box_lo, &box_hi);
    let spec = ModelSpec {
        box_lo,
        box_hi,
        anchor: Some(anchor.to_vec()),
        threshold: Some(Threshold {
            sense: side.sense(),
            value: net.threshold_std(threshold),
        }),
        objective: Objective::Epsilon,
        redundant_rows: false,
    };
    let model = MilpModel::build(net, &bounds, spec)?;
    let res = branch_and_bound(&model, &cfg.bnb, warm);
    cert.nodes = res.nodes;
    match res.status {
        BnbStatus::Optimal => {
            let w = res.inputs.expect("optimal result carries a point");
            cert.epsilon_star = res.objective;
            cert.lower_bound = res.lower_bound;
            cert.witness_prediction = Some(net.predict(&w));
            cert.witness = Some(w);
        }
        BnbStatus::Infeasible => {
            cert.status = CertStatus::InfeasibleInBox;
            cert.epsilon_star = 1.0;
            cert.lower_bound = 1.0;
        }
        BnbStatus::NodeLimit | BnbStatus::LpFailure => {
            cert.status = CertStatus::SolverLimit;
            cert.epsilon_star = res.objective.min(1.0);
            cert.lower_bound = res.lower_bound.min(1.0);
            if let Some(w) = res.inputs {
                cert.witness_prediction = Some(net.predict(&w));
                cert.witness = Some(w);
            }
        }
    }
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok(cert)
}

/// Class of the network's prediction at a unit-box point.
pub fn predicted_class(net: &UnitBoxNet, x: &[f64]) -> Result<StabilityClass> {
    classify(net.predict(x))
}

/// Verifies the region around a hypercube corner.
///
/// Clearly stable corners search for predictions at or below `3 + delta`,
/// clearly unstable ones for predictions at or above `3 - delta`; corners in
/// the three marginal classes are skipped.
pub fn verify_corner(
    net: &UnitBoxNet,
    corner: &[f64],
    class: StabilityClass,
    delta: f64,
    cfg: &VerifyConfig,
) -> Result<Certificate> {
    if corner.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument("corner coordinates must be 0 or 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument("margin width must be positive".into()));
    }
    match class {
        StabilityClass::Stable => verify_anchor(net, corner, Side::Stable, delta, cfg),
        StabilityClass::Unstable => verify_anchor(net, corner, Side::Unstable, delta, cfg),
        _ => Ok(Certificate::skipped(corner, net.predict(corner), delta, CertStatus::SkippedMarginal)),
    }
}

/// The 16 unit-box corners, bit `i` of the index selecting coordinate `i`.
pub fn unit_corners() -> Vec<Vec<f64>> {
    (0..16u32)
        .map(|m| (0..4).map(|i| if m >> i & 1 == 1 { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Largest gap between the MILP output at a fixed input and the forward pass.
///
/// Bounds are propagated over the whole unit box and every implied row is
/// kept, so inconsistent bounds surface as an encoding error.
pub fn check_forward_consistency(net: &UnitBoxNet, x: &[f64]) -> Result<f64> {
    let d = net.input_dim();
    let bounds = propagate_bounds(net, &vec![0.0; d], &vec![1.0; d]);
    check_forward_consistency_with(net, &bounds, x)
}

/// As [`check_forward_consistency`] with caller-supplied neuron bounds.
pub fn check_forward_consistency_with(net: &UnitBoxNet, bounds: &NeuronBounds, x: &[f64]) -> Result<f64> {
    if x.len() != net.input_dim() {
        return Err(Error::Argument("input dimension mismatch".into()));
    }
    let reference = net.forward(x);
    let mut worst: f64 = 0.0;
    for objective in [Objective::MinOutput, Objective::MaxOutput] {
        let spec = ModelSpec {
            box_lo: x.to_vec(),
            box_hi: x.to_vec(),
            anchor: None,
            threshold: None,
            objective,
            redundant_rows: true,
        };
        let model = MilpModel::build(net, bounds, spec)?;
        let res = branch_and_bound(&model, &BnbConfig::default(), None);
        match res.status {
            BnbStatus::Optimal => {
                let y = if objective == Objective::MaxOutput {
                    -res.objective
                } else {
                    res.objective
                };
                worst = worst.max((y - reference).abs());
            }
            BnbStatus::Infeasible => {
                return Err(Error::Encoding(format!("model infeasible at a valid input {x:?}")));
            }
            s => return Err(Error::Solver(format!("consistency check ended with {s:?}"))),
        }
    }
    Ok(worst)
}
