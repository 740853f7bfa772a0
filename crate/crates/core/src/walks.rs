//! Directed walks toward the 3% damping boundary.
//!
//! A walk takes steepest-descent steps on the binding-mode damping gradient,
//! first over the power set points with the droop gains frozen, then (again
//! from the start point) over the droop gains with power frozen.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, Hypercube, LabeledSample, Origin};

/// Damping level the walks steer toward, percent.
pub const TARGET_ZETA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    /// Walks start only from points with `|zeta - 3| <= trigger_halfwidth`.
    pub trigger_halfwidth: f64,
    /// A walk converges once `|zeta - 3| <= target_halfwidth`.
    pub target_halfwidth: f64,
    /// Largest step, in unit-hypercube coordinates.
    pub alpha0: f64,
    pub max_iters: usize,
    pub min_grad_norm: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            trigger_halfwidth: 6.0,
            target_halfwidth: 0.25,
            alpha0: 0.05,
            max_iters: 50,
            min_grad_norm: 1e-8,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) {
            return Err(Error::Argument("alpha0 must be positive".into()));
        }
        if !(self.target_halfwidth > 0.0 && self.target_halfwidth <= self.trigger_halfwidth) {
            return Err(Error::Argument("target band must lie inside the trigger band".into()));
        }
        Ok(())
    }

    pub fn triggers(&self, zeta: f64) -> bool {
        (zeta - TARGET_ZETA).abs() <= self.trigger_halfwidth
    }

    pub fn on_target(&self, zeta: f64) -> bool {
        (zeta - TARGET_ZETA).abs() <= self.target_halfwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Move `(P_ref, Q_ref)`, hold the droop gains.
    Power,
    /// Move `(K_pf, K_v)`, hold the power set points.
    Control,
}

impl Phase {
    fn active(self, i: usize) -> bool {
        match self {
            Phase::Power => i < 2,
            Phase::Control => i >= 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkStatus {
    Converged,
    NotTriggered,
    Stalled,
    IterCap,
    LeftBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkResult {
    pub phase: Phase,
    pub path: Vec<([f64; 4], f64)>,
    pub status: WalkStatus,
}

impl WalkResult {
    pub fn steps(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    pub fn terminal(&self) -> Option<&([f64; 4], f64)> {
        self.path.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub x: [f64; 4],
    /// Whether any coordinate had to be clipped to the box.
    pub clipped: bool,
}

/// Signed step length: toward 3%, shrinking linearly inside a 3-point distance.
pub fn step_size(zeta: f64, alpha0: f64) -> f64 {
    let gap = zeta - TARGET_ZETA;
    if gap == 0.0 {
        return 0.0;
    }
    -gap.signum() * alpha0 * (gap.abs() / TARGET_ZETA).min(1.0)
}

/// One steepest-descent step. Returns `None` when the phase-masked gradient
/// (in unit-hypercube coordinates) is below `min_grad_norm`.
pub fn walk_step(
    h: &Hypercube,
    x: &[f64; 4],
    grad: &[f64; 4],
    zeta: f64,
    phase: Phase,
    cfg: &WalkConfig,
) -> Option<Step> {
    let g: [f64; 4] = std::array::from_fn(|i| if phase.active(i) { grad[i] * h.width(i) } else { 0.0 });
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= cfg.min_grad_norm) {
        return None;
    }
    let alpha = step_size(zeta, cfg.alpha0);
    if alpha == 0.0 {
        return Some(Step { x: *x, clipped: false });
    }
    let u = h.normalize(x);
    let moved: [f64; 4] = std::array::from_fn(|i| {
        if phase.active(i) {
            h.lower[i] + (u[i] + alpha * g[i] / norm) * h.width(i)
        } else {
            x[i]
        }
    });
    let clipped_x = h.clip(&moved);
    Some(Step {
        clipped: clipped_x != moved,
        x: clipped_x,
    })
}

fn run_phase(h: &Hypercube, start: &LabeledSample, phase: Phase, cfg: &WalkConfig) -> Result<WalkResult> {
    let mut path = vec![(start.x, start.zeta)];
    let (mut x, mut zeta, mut grad) = (start.x, start.zeta, start.grad);
    let mut clipped_run = 0;
    for _ in 0..cfg.max_iters {
        if cfg.on_target(zeta) {
            return Ok(WalkResult { phase, path, status: WalkStatus::Converged });
        }
        let Some(step) = walk_step(h, &x, &grad, zeta, phase, cfg) else {
            return Ok(WalkResult { phase, path, status: WalkStatus::Stalled });
        };
        let s = sampling::label_one(&step.x, Origin::Dw)?;
        x = s.x;
        zeta = s.zeta;
        grad = s.grad;
        path.push((x, zeta));
        clipped_run = if step.clipped { clipped_run + 1 } else { 0 };
        if clipped_run >= 2 && !cfg.on_target(zeta) {
            return Ok(WalkResult { phase, path, status: WalkStatus::LeftBox });
        }
    }
    let status = if cfg.on_target(zeta) {
        WalkStatus::Converged
    } else {
        WalkStatus::IterCap
    };
    Ok(WalkResult { phase, path, status })
}

/// Both phases of a directed walk from one labeled start point.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWalk {
    pub power: WalkResult,
    pub control: WalkResult,
    /// Converged termini (origin `dw`), excluding zero-step walks.
    pub emitted: Vec<LabeledSample>,
}

pub fn directed_walk(h: &Hypercube, x0: &LabeledSample, cfg: &WalkConfig) -> Result<DirectedWalk> {
    cfg.validate()?;
    if !cfg.triggers(x0.zeta) {
        let idle = |phase| WalkResult {
            phase,
            path: vec![(x0.x, x0.zeta)],
            status: WalkStatus::NotTriggered,
        };
        return Ok(DirectedWalk {
            power: idle(Phase::Power),
            control: idle(Phase::Control),
            emitted: Vec::new(),
        });
    }
    let power = run_phase(h, x0, Phase::Power, cfg)?;
    let control = run_phase(h, x0, Phase::Control, cfg)?;
    let mut emitted = Vec::new();
    for walk in [&power, &control] {
        if walk.status == WalkStatus::Converged && walk.steps() > 0 {
            let (x, _) = walk.terminal().expect("non-empty path");
            emitted.push(sampling::label_one(x, Origin::Dw)?);
        }
    }
    Ok(DirectedWalk { power, control, emitted })
}

/// Runs directed walks from every triggering sample and collects the converged termini.
pub fn enrich_dw(h: &Hypercube, base: &[LabeledSample], cfg: &WalkConfig) -> Result<Vec<LabeledSample>> {
    let walks: Vec<DirectedWalk> = base
        .par_iter()
        .filter(|s| cfg.triggers(s.zeta))
        .map(|s| directed_walk(h, s, cfg))
        .collect::<Result<_>>()?;
    Ok(walks.into_iter().flat_map(|w| w.emitted).collect())
}

/// Writes a walk path as CSV with columns `step,x1,x2,x3,x4,zeta`.
pub fn write_path_csv(path: &Path, walk: &WalkResult) -> Result<()> {
    let mut out = String::from("step,x1,x2,x3,x4,zeta\n");
    for (i, (x, z)) in walk.path.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{},{z}\n", x[0], x[1], x[2], x[3]));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::label_one;

    #[test]
    fn step_law() {
        assert_eq!(step_size(3.0, 0.05), 0.0);
        assert!((step_size(9.0, 0.05) + 0.05).abs() < 1e-15);
        assert!((step_size(4.5, 0.05) + 0.025).abs() < 1e-15);
        assert!((step_size(-10.0, 0.05) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_step_at_the_boundary() {
        let h = Hypercube::default();
        let x = [1.0, 0.1, 30.0, 20.0];
        let s = walk_step(&h, &x, &[1.0, 1.0, 1.0, 1.0], 3.0, Phase::Power, &WalkConfig::default()).unwrap();
        assert_eq!(s.x, x);
    }

    #[test]
    fn phase_mask_freezes_inactive_coordinates() {
        let h = Hypercube::default();
        let x = [1.0, 0.1, 30.0, 20.0];
        let g = [0.5, -2.0, 0.3, 0.1];
        let s = walk_step(&h, &x, &g, 8.0, Phase::Power, &WalkConfig::default()).unwrap();
        assert_eq!(s.x[2], x[2]);
        assert_eq!(s.x[3], x[3]);
        assert_ne!(s.x[0], x[0]);
        let s = walk_step(&h, &x, &g, 8.0, Phase::Control, &WalkConfig::default()).unwrap();
        assert_eq!(&s.x[..2], &x[..2]);
    }

    #[test]
    fn step_length_in_unit_coordinates() {
        let h = Hypercube::default();
        let x = [1.0, 0.0, 30.0, 20.0];
        let s = walk_step(&h, &x, &[0.0, 0.0, 1.0, 0.0], 9.0, Phase::Control, &WalkConfig::default()).unwrap();
        // zeta above target: move against the gradient by alpha0 in unit coordinates
        assert!((h.normalize(&s.x)[2] - (h.normalize(&x)[2] - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn tiny_gradient_stalls() {
        let h = Hypercube::default();
        let x = [1.0, 0.0, 30.0, 20.0];
        let g = [0.0, 0.0, 1e-12, 0.0];
        assert!(walk_step(&h, &x, &g, 5.0, Phase::Control, &WalkConfig::default()).is_none());
        assert!(walk_step(&h, &x, &g, 5.0, Phase::Power, &WalkConfig::default()).is_none());
    }

    #[test]
    fn far_points_do_not_trigger() {
        let h = Hypercube::default();
        let mut s = label_one(&[0.0; 4], Origin::Grid).unwrap();
        s.zeta = 20.0;
        let w = directed_walk(&h, &s, &WalkConfig::default()).unwrap();
        assert_eq!(w.power.status, WalkStatus::NotTriggered);
        assert_eq!(w.control.status, WalkStatus::NotTriggered);
        assert!(w.emitted.is_empty());
    }

    #[test]
    fn on_target_start_converges_in_zero_steps() {
        let h = Hypercube::default();
        let mut s = label_one(&[0.0; 4], Origin::Grid).unwrap();
        s.zeta = 3.1;
        let w = directed_walk(&h, &s, &WalkConfig::default()).unwrap();
        assert_eq!(w.power.status, WalkStatus::Converged);
        assert_eq!(w.power.steps(), 0);
        assert_eq!(w.control.steps(), 0);
    }

    #[test]
    fn walk_from_origin_is_consistent() {
        let h = Hypercube::default();
        let cfg = WalkConfig::default();
        let s = label_one(&[0.0; 4], Origin::Grid).unwrap();
        assert!(cfg.triggers(s.zeta));
        let w = directed_walk(&h, &s, &cfg).unwrap();
        for walk in [&w.power, &w.control] {
            let (x, z) = *walk.terminal().unwrap();
            assert!(h.contains(&x));
            match walk.status {
                WalkStatus::Converged => assert!((2.75..=3.25).contains(&z)),
                WalkStatus::Stalled | WalkStatus::IterCap | WalkStatus::LeftBox => assert!(!cfg.on_target(z)),
                WalkStatus::NotTriggered => panic!("origin is inside the trigger band"),
            }
            assert!(walk.path.iter().all(|(p, _)| h.contains(p)));
        }
        for e in &w.emitted {
            assert!((2.75..=3.25).contains(&e.zeta));
            assert_eq!(e.origin, Origin::Dw);
        }
        assert_eq!(directed_walk(&h, &s, &cfg).unwrap(), w);
    }
}
