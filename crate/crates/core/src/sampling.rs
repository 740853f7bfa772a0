//! Base dataset generation over the operating hypercube and the five-way
//! stability classification.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, OperatingPoint};
use crate::seeding;

/// Axis-aligned box `[lower, upper]` in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for Hypercube {
    /// `P_ref in [0, 2]`, `Q_ref in [-0.5, 0.5]`, `K_pf in [0, 75]`, `K_v in [0, 50]`.
    fn default() -> Self {
        Hypercube {
            lower: [0.0, -0.5, 0.0, 0.0],
            upper: [2.0, 0.5, 75.0, 50.0],
        }
    }
}

impl Hypercube {
    pub fn new(lower: [f64; 4], upper: [f64; 4]) -> Result<Self> {
        for i in 0..4 {
            if !(lower[i] < upper[i]) {
                return Err(Error::Argument(format!(
                    "hypercube dimension {i}: lower {} not below upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Hypercube { lower, upper })
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64; 4]) -> bool {
        (0..4).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Min-max map to the unit hypercube.
    pub fn normalize(&self, x: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| (x[i] - self.lower[i]) / self.width(i))
    }

    pub fn denormalize(&self, u: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| self.lower[i] + u[i] * self.width(i))
    }

    pub fn clip(&self, x: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| x[i].clamp(self.lower[i], self.upper[i]))
    }

    /// The 16 corners; bit `i` of the index selects the upper bound of dimension `i`.
    pub fn corners(&self) -> Vec<[f64; 4]> {
        (0..16u32)
            .map(|m| std::array::from_fn(|i| if m >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }))
            .collect()
    }

    pub fn sample_point<R: rand::Rng>(&self, rng: &mut R) -> [f64; 4] {
        std::array::from_fn(|i| self.lower[i] + rng.gen::<f64>() * self.width(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StabilityClass {
    Unstable,
    MUnstable,
    Marginal,
    MStable,
    Stable,
}

impl StabilityClass {
    /// Ordered from most to least stable, matching the report column order.
    pub const ALL: [StabilityClass; 5] = [
        StabilityClass::Stable,
        StabilityClass::MStable,
        StabilityClass::Marginal,
        StabilityClass::MUnstable,
        StabilityClass::Unstable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::MStable => "mstable",
            StabilityClass::Marginal => "marginal",
            StabilityClass::MUnstable => "munstable",
            StabilityClass::Unstable => "unstable",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StabilityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StabilityClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown stability class `{s}`")))
    }
}

/// Classifies a damping ratio (percent).
///
/// `> 6` stable, `(3.25, 6]` marginally stable, `[2.75, 3.25]` marginal,
/// `(0, 2.75)` marginally unstable, `<= 0` unstable.
pub fn classify(zeta: f64) -> Result<StabilityClass> {
    if zeta.is_nan() {
        return Err(Error::Argument("cannot classify NaN damping".into()));
    }
    Ok(if zeta > 6.0 {
        StabilityClass::Stable
    } else if zeta > 3.25 {
        StabilityClass::MStable
    } else if zeta >= 2.75 {
        StabilityClass::Marginal
    } else if zeta > 0.0 {
        StabilityClass::MUnstable
    } else {
        StabilityClass::Unstable
    })
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Grid,
    Uniform,
    Lhc,
    Dw,
    Ni,
    Vi,
    Test,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Grid => "grid",
            Origin::Uniform => "uniform",
            Origin::Lhc => "lhc",
            Origin::Dw => "dw",
            Origin::Ni => "ni",
            Origin::Vi => "vi",
            Origin::Test => "test",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => Origin::Grid,
            "uniform" => Origin::Uniform,
            "lhc" => Origin::Lhc,
            "dw" => Origin::Dw,
            "ni" => Origin::Ni,
            "vi" => Origin::Vi,
            "test" => Origin::Test,
            other => return Err(Error::Parse(format!("unknown origin `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: [f64; 4],
    pub zeta: f64,
    pub grad: [f64; 4],
    pub class: StabilityClass,
    pub origin: Origin,
}

/// `n_per_dim^4` equispaced points including both endpoints of every axis.
pub fn sample_grid(h: &Hypercube, n_per_dim: usize) -> Result<Vec<[f64; 4]>> {
    if n_per_dim < 2 {
        return Err(Error::Argument(format!("grid needs n_per_dim >= 2, got {n_per_dim}")));
    }
    let axes: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..n_per_dim)
                .map(|j| {
                    if j == n_per_dim - 1 {
                        h.upper[i]
                    } else {
                        h.lower[i] + h.width(i) * j as f64 / (n_per_dim - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n_per_dim.pow(4));
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &d in &axes[3] {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    Ok(out)
}

pub fn sample_uniform(h: &Hypercube, n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = seeding::rng(seed);
    (0..n).map(|_| h.sample_point(&mut rng)).collect()
}

const LHC_EDGE: f64 = 1e-9;

/// Latin hypercube design: one point per stratum per axis, uniformly placed
/// inside its stratum, strata matched through independent permutations.
pub fn sample_lhc(h: &Hypercube, n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = seeding::rng(seed);
    let mut unit = vec![[0.0; 4]; n];
    for i in 0..4 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (row, &stratum) in unit.iter_mut().zip(&perm) {
            // keep a hair away from stratum edges so the physical round trip
            // cannot move a point into a neighbouring stratum
            let u: f64 = rng.gen();
            row[i] = (stratum as f64 + LHC_EDGE + u * (1.0 - 2.0 * LHC_EDGE)) / n as f64;
        }
    }
    unit.iter().map(|u| h.denormalize(u)).collect()
}

/// Labels points with the oracle (parallel map, order preserved).
pub fn label(points: &[[f64; 4]], origin: Origin) -> Result<Vec<LabeledSample>> {
    points
        .par_iter()
        .map(|x| label_one(x, origin))
        .collect()
}

pub fn label_one(x: &[f64; 4], origin: Origin) -> Result<LabeledSample> {
    let r = oracle::min_damping(&OperatingPoint::from_array(*x))?;
    Ok(LabeledSample {
        x: *x,
        zeta: r.zeta_c,
        grad: r.gradient,
        class: classify(r.zeta_c)?,
        origin,
    })
}
