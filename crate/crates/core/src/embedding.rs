//! Region certification with part of the operating point held fixed.
//!
//! A droop query holds the power set-points and certifies a ball of droop
//! gains around an anchor; a power query does the converse. Fixed inputs are
//! folded into the first layer before encoding, so the MILP only carries the
//! two free coordinates.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{verify_anchor, CertStatus, Certificate, Side, UnitBoxNet, VerifyConfig};
use crate::walks::TARGET_ZETA;
use crate::sampling::Hypercube;

/// Predictions this far below the threshold count as a crossing anchor.
const ANCHOR_TOL: f64 = 1e-9;

/// The pair of inputs held constant, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPair {
    /// `(P_ref, Q_ref)` fixed; the droop gains are free.
    Power { p_ref: f64, q_ref: f64 },
    /// `(K_pf, K_v)` fixed; the power set-points are free.
    Droop { k_pf: f64, k_v: f64 },
}

impl FixedPair {
    /// Input indices of the fixed and of the free coordinates.
    pub fn dims(&self) -> ([usize; 2], [usize; 2]) {
        match self {
            FixedPair::Power { .. } => ([0, 1], [2, 3]),
            FixedPair::Droop { .. } => ([2, 3], [0, 1]),
        }
    }

    pub fn values(&self) -> [f64; 2] {
        match *self {
            FixedPair::Power { p_ref, q_ref } => [p_ref, q_ref],
            FixedPair::Droop { k_pf, k_v } => [k_pf, k_v],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingQuery {
    pub fixed: FixedPair,
    /// Centre of the free pair in physical units.
    pub anchor: [f64; 2],
    /// Margin above the 3% target, in percent.
    pub delta: f64,
}

impl EmbeddingQuery {
    /// Checks that fixed values and anchor lie in the hypercube.
    pub fn validate(&self, cube: &Hypercube) -> Result<()> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Argument(format!("delta must be non-negative, got {}", self.delta)));
        }
        let (fixed, free) = self.fixed.dims();
        for (i, v) in fixed.iter().zip(self.fixed.values()).chain(free.iter().zip(self.anchor)) {
            if !(cube.lower[*i]..=cube.upper[*i]).contains(&v) {
                return Err(Error::Argument(format!(
                    "input {i} value {v} outside [{}, {}]",
                    cube.lower[*i], cube.upper[*i]
                )));
            }
        }
        Ok(())
    }

    /// Network restricted to the free pair, on unit-box coordinates.
    pub fn restrict(&self, net: &UnitBoxNet, cube: &Hypercube) -> Result<UnitBoxNet> {
        self.validate(cube)?;
        let (fixed, _) = self.fixed.dims();
        let mut slots = vec![None; 4];
        for (i, v) in fixed.iter().zip(self.fixed.values()) {
            slots[*i] = Some(to_unit(cube, *i, v));
        }
        net.fix_inputs(&slots)
    }

    /// Anchor mapped to unit-box coordinates of the free pair.
    pub fn unit_anchor(&self, cube: &Hypercube) -> [f64; 2] {
        let (_, free) = self.fixed.dims();
        [to_unit(cube, free[0], self.anchor[0]), to_unit(cube, free[1], self.anchor[1])]
    }

    pub fn threshold(&self) -> f64 {
        TARGET_ZETA + self.delta
    }
}

/// Certifies the droop-gain ball around the anchor at fixed power set-points.
pub fn verify_droop_region(
    net: &UnitBoxNet,
    cube: &Hypercube,
    q: &EmbeddingQuery,
    cfg: &VerifyConfig,
) -> Result<Certificate> {
    if !matches!(q.fixed, FixedPair::Power { .. }) {
        return Err(Error::Argument("a droop query fixes the power set-points".into()));
    }
    verify_region(net, cube, q, cfg)
}

/// Certifies the power set-point ball around the anchor at fixed droop gains.
pub fn verify_power_region(
    net: &UnitBoxNet,
    cube: &Hypercube,
    q: &EmbeddingQuery,
    cfg: &VerifyConfig,
) -> Result<Certificate> {
    if !matches!(q.fixed, FixedPair::Droop { .. }) {
        return Err(Error::Argument("a power query fixes the droop gains".into()));
    }
    verify_region(net, cube, q, cfg)
}

/// Distance from the anchor to the nearest free-pair point predicted at or
/// below `3 + delta`.
pub fn verify_region(net: &UnitBoxNet, cube: &Hypercube, q: &EmbeddingQuery, cfg: &VerifyConfig) -> Result<Certificate> {
    let sub = q.restrict(net, cube)?;
    let anchor = q.unit_anchor(cube);
    let threshold = q.threshold();
    let pred = sub.predict(&anchor);
    if pred < threshold - ANCHOR_TOL {
        return Ok(Certificate {
            anchor: anchor.to_vec(),
            anchor_prediction: pred,
            side: Some(Side::Stable),
            delta: q.delta,
            threshold,
            epsilon_star: 0.0,
            lower_bound: 0.0,
            witness: None,
            witness_prediction: None,
            status: CertStatus::InfeasibleAnchor,
            nodes: 0,
            wall_time_s: 0.0,
        });
    }
    verify_anchor(&sub, &anchor, Side::Stable, q.delta, cfg)
}

/// One grid point of the free plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub u: f64,
    pub v: f64,
    pub zeta_hat: f64,
    /// Prediction strictly above `3 + delta`.
    pub acceptable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub resolution: usize,
    /// Row-major over `(u, v)`, `v` fastest.
    pub points: Vec<GridPoint>,
    /// Point of changing classification, physical units of the free pair.
    pub witness: Option<GridPoint>,
}

/// Evaluates the network on a `resolution x resolution` grid over the free
/// plane with the fixed pair held, in physical units.
pub fn contour_grid(
    net: &UnitBoxNet,
    cube: &Hypercube,
    q: &EmbeddingQuery,
    resolution: usize,
    cert: Option<&Certificate>,
) -> Result<ContourGrid> {
    if resolution < 2 {
        return Err(Error::Argument("resolution must be at least 2".into()));
    }
    let sub = q.restrict(net, cube)?;
    let (_, free) = q.fixed.dims();
    let threshold = q.threshold();
    let step = 1.0 / (resolution - 1) as f64;
    let point = |a: f64, b: f64| {
        let z = sub.predict(&[a, b]);
        GridPoint {
            u: from_unit(cube, free[0], a),
            v: from_unit(cube, free[1], b),
            zeta_hat: z,
            acceptable: z > threshold,
        }
    };
    let points: Vec<GridPoint> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| point((k / resolution) as f64 * step, (k % resolution) as f64 * step))
        .collect();
    let witness = cert.and_then(|c| c.witness.as_ref()).map(|w| point(w[0], w[1]));
    Ok(ContourGrid {
        resolution,
        points,
        witness,
    })
}

impl ContourGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,v,zeta_hat,acceptable\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.u, p.v, p.zeta_hat, p.acceptable));
        }
        s
    }

    /// Writes the grid to `path` and, when present, the witness next to it
    /// as `<stem>_witness.csv`. Returns the files written.
    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        write_file(path, &self.to_csv())?;
        let mut written = vec![path.to_path_buf()];
        if let Some(w) = &self.witness {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
            let wpath = path.with_file_name(format!("{stem}_witness.csv"));
            write_file(
                &wpath,
                &format!("u,v,zeta_hat,acceptable\n{},{},{},{}\n", w.u, w.v, w.zeta_hat, w.acceptable),
            )?;
            written.push(wpath);
        }
        Ok(written)
    }
}

/// Grid export in one call: evaluates and writes the grid CSV.
pub fn export_contour_grid(
    net: &UnitBoxNet,
    cube: &Hypercube,
    q: &EmbeddingQuery,
    resolution: usize,
    cert: Option<&Certificate>,
    path: &Path,
) -> Result<Vec<PathBuf>> {
    contour_grid(net, cube, q, resolution, cert)?.write(path)
}

fn to_unit(cube: &Hypercube, i: usize, v: f64) -> f64 {
    (v - cube.lower[i]) / cube.width(i)
}

fn from_unit(cube: &Hypercube, i: usize, u: f64) -> f64 {
    cube.lower[i] + u * cube.width(i)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}
