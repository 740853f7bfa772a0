//! Analytic N-1 damping oracle.
//!
//! Each contingency `c` (loss of one of five turbines) scales the active
//! power loading by `rho_c = 1 + 0.05 c` and yields a 4x4 block-diagonal
//! state matrix `diag(B_A, B_B)` with companion blocks
//! `B_m = [[0, 1], [-k_m, -d_m]]`. The margin `zeta_c(x)` is the minimum
//! damping ratio over all contingencies and both modes, and its gradient is
//! the eigenvalue sensitivity of the binding mode.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::Hypercube;

/// Number of N-1 contingencies (one per turbine).
pub const N_CONTINGENCIES: usize = 5;

/// Repeated-eigenvalue threshold on `|d^2 - 4k|`.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// An operating point `(P_ref, Q_ref, K_pf, K_v)` in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub p_ref: f64,
    pub q_ref: f64,
    pub k_pf: f64,
    pub k_v: f64,
}

impl OperatingPoint {
    pub const fn new(p_ref: f64, q_ref: f64, k_pf: f64, k_v: f64) -> Self {
        Self {
            p_ref,
            q_ref,
            k_pf,
            k_v,
        }
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p_ref, self.q_ref, self.k_pf, self.k_v]
    }
}

impl From<[f64; 4]> for OperatingPoint {
    fn from(x: [f64; 4]) -> Self {
        Self::from_array(x)
    }
}

/// Loss of turbine `index` (1..=5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Contingency(u8);

impl Contingency {
    pub fn new(index: u8) -> Result<Self> {
        if (1..=N_CONTINGENCIES as u8).contains(&index) {
            Ok(Contingency(index))
        } else {
            Err(Error::Domain(format!(
                "contingency index {index} outside 1..={N_CONTINGENCIES}"
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = Contingency> {
        (1..=N_CONTINGENCIES as u8).map(Contingency)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Loading multiplier `rho_c`.
    pub fn severity(self) -> f64 {
        1.0 + 0.05 * f64::from(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    A,
    B,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::A, Mode::B];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::A => f.write_str("A"),
            Mode::B => f.write_str("B"),
        }
    }
}

/// Canonical representative `sigma + j omega` (omega >= 0) of an eigenvalue pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub sigma: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingResult {
    /// Minimum damping ratio in percent.
    pub zeta_c: f64,
    pub binding_contingency: Contingency,
    pub binding_mode: Mode,
    /// Sensitivity of the binding mode, percent per physical unit of each input.
    pub gradient: [f64; 4],
    /// Set when the binding mode is overdamped or repeated; the gradient is zero then.
    pub degenerate: bool,
}

/// Companion-block coefficients `(d, k)` and their input derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockCoefficients {
    pub d: f64,
    pub k: f64,
    pub dd: [f64; 4],
    pub dk: [f64; 4],
}

impl BlockCoefficients {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [-self.k, -self.d]]
    }

    /// `dA/dx_i` for the block.
    pub fn matrix_derivative(&self, i: usize) -> [[f64; 2]; 2] {
        [[0.0, 0.0], [-self.dk[i], -self.dd[i]]]
    }

    fn is_degenerate(&self) -> bool {
        (self.d * self.d - 4.0 * self.k).abs() < DEGENERACY_TOL
    }
}

pub(crate) fn check_bounds(x: &OperatingPoint) -> Result<()> {
    let h = Hypercube::default();
    let v = x.to_array();
    for i in 0..4 {
        if !v[i].is_finite() || v[i] < h.lower[i] - 1e-9 || v[i] > h.upper[i] + 1e-9 {
            return Err(Error::Domain(format!(
                "coordinate {i} = {} outside [{}, {}]",
                v[i], h.lower[i], h.upper[i]
            )));
        }
    }
    Ok(())
}

/// Block coefficients without the bounds check.
pub(crate) fn coefficients_unchecked(x: &OperatingPoint, c: Contingency, mode: Mode) -> BlockCoefficients {
    let rho = c.severity();
    let p = rho * x.p_ref;
    let q = x.q_ref;
    let (kpf, kv) = (x.k_pf, x.k_v);
    match mode {
        Mode::A => BlockCoefficients {
            d: 0.20 + 0.012 * kpf - 0.12 * p * p - 0.08 * p * q - 0.03 * q,
            k: 1.0 + 0.02 * kv + 0.05 * q - 0.002 * p * kv,
            dd: [rho * (-0.24 * p - 0.08 * q), -0.08 * p - 0.03, 0.012, 0.0],
            dk: [-0.002 * rho * kv, 0.05, 0.0, 0.02 - 0.002 * p],
        },
        Mode::B => BlockCoefficients {
            d: 0.5 + 0.004 * kv - 0.02 * p * q + 0.0002 * kpf * (50.0 - kv),
            k: 25.0 + 0.1 * kpf,
            dd: [
                -0.02 * rho * q,
                -0.02 * p,
                0.0002 * (50.0 - kv),
                0.004 - 0.0002 * kpf,
            ],
            dk: [0.0, 0.0, 0.1, 0.0],
        },
    }
}

pub fn block_coefficients(x: &OperatingPoint, c: Contingency, mode: Mode) -> Result<BlockCoefficients> {
    check_bounds(x)?;
    Ok(coefficients_unchecked(x, c, mode))
}

/// The 4x4 block-diagonal state matrix `diag(B_A, B_B)`.
pub fn state_matrix(x: &OperatingPoint, c: Contingency) -> Result<[[f64; 4]; 4]> {
    let a = block_coefficients(x, c, Mode::A)?.matrix();
    let b = block_coefficients(x, c, Mode::B)?.matrix();
    let mut m = [[0.0; 4]; 4];
    for r in 0..2 {
        for col in 0..2 {
            m[r][col] = a[r][col];
            m[r + 2][col + 2] = b[r][col];
        }
    }
    Ok(m)
}

/// Damping ratio in percent, `-100 sigma / |lambda|`.
pub fn damping_ratio(lambda: EigenPair) -> Result<f64> {
    let mag = lambda.sigma.hypot(lambda.omega);
    if mag == 0.0 || !mag.is_finite() {
        return Err(Error::Domain(format!(
            "damping ratio undefined at lambda = {} + j{}",
            lambda.sigma, lambda.omega
        )));
    }
    Ok(-100.0 * lambda.sigma / mag)
}

/// Eigenvalues of `[[0, 1], [-k, -d]]`, the one with the larger real part
/// (or `omega >= 0` for a complex pair) first.
pub fn block_eigenvalues(d: f64, k: f64) -> (Complex64, Complex64) {
    let disc = d * d - 4.0 * k;
    if disc < 0.0 {
        let w = 0.5 * (-disc).sqrt();
        (Complex64::new(-0.5 * d, w), Complex64::new(-0.5 * d, -w))
    } else {
        let s = disc.sqrt();
        (Complex64::new(0.5 * (-d + s), 0.0), Complex64::new(0.5 * (-d - s), 0.0))
    }
}

fn zeta_from_coefficients(d: f64, k: f64) -> f64 {
    let root_k = k.sqrt();
    if d >= 2.0 * root_k {
        100.0
    } else if d <= -2.0 * root_k {
        -100.0
    } else {
        50.0 * d / root_k
    }
}

/// Damping of one mode of one contingency, percent.
pub fn mode_damping(x: &OperatingPoint, c: Contingency, mode: Mode) -> Result<f64> {
    let bc = block_coefficients(x, c, mode)?;
    Ok(zeta_from_coefficients(bc.d, bc.k))
}

/// Left/right eigenvectors of the block for `lambda`, normalized so `psi^T phi = 1`.
fn eigenvectors(d: f64, lambda: Complex64) -> ([Complex64; 2], [Complex64; 2]) {
    let phi = [Complex64::new(1.0, 0.0), lambda];
    let psi_raw = [lambda + d, Complex64::new(1.0, 0.0)];
    let norm = psi_raw[0] * phi[0] + psi_raw[1] * phi[1];
    ([psi_raw[0] / norm, psi_raw[1] / norm], phi)
}

fn sandwich(psi: &[Complex64; 2], m: &[[f64; 2]; 2], phi: &[Complex64; 2]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..2 {
        for c in 0..2 {
            acc += psi[r] * m[r][c] * phi[c];
        }
    }
    acc
}

/// `d lambda / d x_i = psi^T (dA/dx_i) phi` for the canonical eigenvalue of the mode.
pub fn eig_sensitivity(x: &OperatingPoint, c: Contingency, mode: Mode, i: usize) -> Result<Complex64> {
    if i >= 4 {
        return Err(Error::Argument(format!("input index {i} out of range")));
    }
    let bc = block_coefficients(x, c, mode)?;
    if bc.is_degenerate() {
        return Err(Error::DegenerateMode {
            gap: (bc.d * bc.d - 4.0 * bc.k).abs(),
        });
    }
    let (lambda, _) = block_eigenvalues(bc.d, bc.k);
    let (psi, phi) = eigenvectors(bc.d, lambda);
    Ok(sandwich(&psi, &bc.matrix_derivative(i), &phi))
}

/// Gradient of a mode's damping ratio.
///
/// Returns the gradient and a degeneracy flag; overdamped modes (`omega = 0`)
/// and repeated eigenvalues report a zero gradient with the flag set.
pub fn damping_sensitivity(x: &OperatingPoint, c: Contingency, mode: Mode) -> Result<([f64; 4], bool)> {
    let bc = block_coefficients(x, c, mode)?;
    if bc.is_degenerate() {
        return Ok(([0.0; 4], true));
    }
    let (lambda, _) = block_eigenvalues(bc.d, bc.k);
    let (sigma, omega) = (lambda.re, lambda.im);
    if omega == 0.0 {
        return Ok(([0.0; 4], true));
    }
    let (psi, phi) = eigenvectors(bc.d, lambda);
    let denom = (sigma * sigma + omega * omega).powf(1.5);
    let mut g = [0.0; 4];
    for (i, gi) in g.iter_mut().enumerate() {
        let dl = sandwich(&psi, &bc.matrix_derivative(i), &phi);
        *gi = 100.0 * omega * (sigma * dl.im - omega * dl.re) / denom;
    }
    Ok((g, false))
}

/// Minimum damping across all contingencies and modes, with the binding
/// mode's gradient. Ties go to the lowest contingency index, then mode A.
pub fn min_damping(x: &OperatingPoint) -> Result<DampingResult> {
    check_bounds(x)?;
    let mut best: Option<(f64, Contingency, Mode)> = None;
    for c in Contingency::all() {
        for mode in Mode::ALL {
            let bc = coefficients_unchecked(x, c, mode);
            let z = zeta_from_coefficients(bc.d, bc.k);
            if best.map_or(true, |(bz, _, _)| z < bz) {
                best = Some((z, c, mode));
            }
        }
    }
    let (zeta_c, c, mode) = best.expect("at least one contingency");
    let (gradient, degenerate) = damping_sensitivity(x, c, mode)?;
    Ok(DampingResult {
        zeta_c,
        binding_contingency: c,
        binding_mode: mode,
        gradient,
        degenerate,
    })
}
