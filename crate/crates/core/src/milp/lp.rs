//! Dense bounded-variable simplex.
//!
//! Every row `a x {<=,>=,=} r` gets a slack `s` with `a x + s = r`, so the
//! slack basis is always available. Starting from it the basis is dual
//! feasible once each nonbasic column rests on the bound matching the sign of
//! its cost, and the dual simplex then restores primal feasibility. Changing
//! variable bounds keeps the basis dual feasible, which makes re-solves after
//! branching cheap.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Smallest acceptable pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-9;
/// Stand-in for an infinite bound that dual feasibility needs to be finite.
const BIG: f64 = 1e7;
/// Consecutive dual-degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;
/// Pivots between rebuilds of the tableau from the original rows.
const REFACTOR_EVERY: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub name: String,
}

/// `min c x` subject to linear rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lp {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub names: Vec<String>,
    pub rows: Vec<Row>,
}

impl Lp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64, name: impl Into<String>) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.cost.len() - 1
    }

    /// Adds a row; zero coefficients are dropped and repeated indices summed.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], sense: Sense, rhs: f64, name: impl Into<String>) -> usize {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        let mut sorted = coeffs.to_vec();
        sorted.sort_by_key(|&(j, _)| j);
        for (j, a) in sorted {
            assert!(j < self.num_vars(), "row references unknown variable {j}");
            match merged.last_mut() {
                Some((k, v)) if *k == j => *v += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row {
            coeffs: merged,
            sense,
            rhs,
            name: name.into(),
        });
        self.rows.len() - 1
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in &self.rows {
            let ax: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.sense {
                Sense::Le => ax - r.rhs,
                Sense::Ge => r.rhs - ax,
                Sense::Eq => (ax - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn slack_bounds(sense: Sense) -> (f64, f64) {
        match sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        }
    }

    /// `min over the box of sum_j c_j x_j`, in interval arithmetic.
    fn box_min(coef: f64, lo: f64, hi: f64) -> f64 {
        if coef > 0.0 {
            coef * lo
        } else if coef < 0.0 {
            coef * hi
        } else {
            0.0
        }
    }

    /// Lower bound on the optimum from row multipliers `y`, valid for any `y`.
    ///
    /// Multipliers are first projected onto the signs each row sense allows;
    /// the bound is then `y b + min_x (c - yA) x` over the variable box
    /// `[lower, upper]`. It is computed from the original data only, so it
    /// does not inherit error accumulated in a tableau.
    pub fn lagrangian_bound(&self, y: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
        let mut red = self.cost.clone();
        let mut total = 0.0;
        for (r, &yi) in self.rows.iter().zip(y) {
            let yi = match r.sense {
                Sense::Le => yi.min(0.0),
                Sense::Ge => yi.max(0.0),
                Sense::Eq => yi,
            };
            if yi == 0.0 {
                continue;
            }
            total += yi * r.rhs;
            for &(j, a) in &r.coeffs {
                red[j] -= yi * a;
            }
        }
        for j in 0..self.num_vars() {
            total += Self::box_min(red[j], lower[j], upper[j]);
        }
        total
    }

    /// Whether the row combination `y` proves that no point in the box
    /// `[lower, upper]` satisfies all rows.
    pub fn farkas_proves_infeasible(&self, y: &[f64], lower: &[f64], upper: &[f64]) -> bool {
        // for feasible points: y b - y A x - y s = 0
        let mut coef = vec![0.0; self.num_vars()];
        let (mut gmin, mut gmax) = (0.0, 0.0);
        let mut scale = 0.0;
        for (r, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            gmin += yi * r.rhs;
            gmax += yi * r.rhs;
            scale += (yi * r.rhs).abs();
            for &(j, a) in &r.coeffs {
                coef[j] -= yi * a;
            }
            // the slack is also confined by the row activity over the box
            let (mut sl, mut su) = Self::slack_bounds(r.sense);
            let (amin, amax) = r.coeffs.iter().fold((0.0, 0.0), |(lo, hi), &(j, a)| {
                (
                    lo + Self::box_min(a, lower[j], upper[j]),
                    hi - Self::box_min(-a, lower[j], upper[j]),
                )
            });
            sl = sl.max(r.rhs - amax);
            su = su.min(r.rhs - amin);
            if sl > su {
                return true;
            }
            gmin += Self::box_min(-yi, sl, su);
            gmax -= Self::box_min(yi, sl, su);
        }
        for j in 0..self.num_vars() {
            gmin += Self::box_min(coef[j], lower[j], upper[j]);
            gmax -= Self::box_min(-coef[j], lower[j], upper[j]);
            scale += (coef[j] * lower[j]).abs().max((coef[j] * upper[j]).abs());
        }
        let tol = 1e-9 * (1.0 + scale);
        gmin > tol || gmax < -tol
    }

    /// Human-readable listing of variables, objective and rows.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let term = |s: &mut String, a: f64, name: &str, first: bool| {
            if first {
                let _ = write!(s, "{a} {name}");
            } else if a < 0.0 {
                let _ = write!(s, " - {} {name}", -a);
            } else {
                let _ = write!(s, " + {a} {name}");
            }
        };
        s.push_str("minimize\n  ");
        let mut first = true;
        for (j, &c) in self.cost.iter().enumerate() {
            if c != 0.0 {
                term(&mut s, c, &self.names[j], first);
                first = false;
            }
        }
        if first {
            s.push('0');
        }
        s.push_str("\nsubject to\n");
        for r in &self.rows {
            let _ = write!(s, "  {}: ", r.name);
            for (k, &(j, a)) in r.coeffs.iter().enumerate() {
                term(&mut s, a, &self.names[j], k == 0);
            }
            if r.coeffs.is_empty() {
                s.push('0');
            }
            let _ = writeln!(s, " {} {}", r.sense.symbol(), r.rhs);
        }
        s.push_str("bounds\n");
        for j in 0..self.num_vars() {
            let _ = writeln!(s, "  {} <= {} <= {}", self.lower[j], self.names[j], self.upper[j]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Structural variable values (meaningful when optimal).
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum At {
    Basic,
    Lower,
    Upper,
    Free,
}

/// Simplex state that can be re-solved after bound changes.
#[derive(Debug, Clone)]
pub struct Simplex {
    m: usize,
    n: usize,
    cols: usize,
    /// `B^-1 [A | I]`, row-major `m x cols`.
    t: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    user_lower: Vec<f64>,
    user_upper: Vec<f64>,
    x: Vec<f64>,
    at: Vec<At>,
    basis: Vec<usize>,
    rhs: Vec<f64>,
    /// Original rows, kept for refactorization.
    a_rows: Vec<Vec<(usize, f64)>>,
    since_refactor: usize,
    /// `B^-1` row that exhibited infeasibility in the last solve.
    infeasible_row: Option<usize>,
    pub pivots: usize,
}

impl Simplex {
    pub fn new(lp: &Lp) -> Self {
        let m = lp.num_rows();
        let n = lp.num_vars();
        let cols = n + m;
        let mut t = vec![0.0; m * cols];
        for (i, r) in lp.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                t[i * cols + j] = a;
            }
            t[i * cols + n + i] = 1.0;
        }
        let mut cost = lp.cost.clone();
        cost.resize(cols, 0.0);
        let mut user_lower = lp.lower.clone();
        let mut user_upper = lp.upper.clone();
        for r in &lp.rows {
            let (l, u) = match r.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            user_lower.push(l);
            user_upper.push(u);
        }
        let mut s = Simplex {
            m,
            n,
            cols,
            t,
            d: cost.clone(),
            cost,
            lower: user_lower.clone(),
            upper: user_upper.clone(),
            user_lower,
            user_upper,
            x: vec![0.0; cols],
            at: vec![At::Lower; cols],
            basis: (n..cols).collect(),
            rhs: lp.rows.iter().map(|r| r.rhs).collect(),
            a_rows: lp.rows.iter().map(|r| r.coeffs.clone()).collect(),
            since_refactor: 0,
            infeasible_row: None,
            pivots: 0,
        };
        for i in 0..m {
            s.at[n + i] = At::Basic;
        }
        for j in 0..n {
            s.place_nonbasic(j);
        }
        s.recompute_basics();
        s
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Puts nonbasic `j` on the bound its reduced cost calls for.
    fn place_nonbasic(&mut self, j: usize) {
        let (ul, uu) = (self.user_lower[j], self.user_upper[j]);
        self.lower[j] = ul;
        self.upper[j] = uu;
        let dj = self.d[j];
        let side = if dj > DUAL_TOL {
            At::Lower
        } else if dj < -DUAL_TOL {
            At::Upper
        } else if self.at[j] == At::Upper && uu.is_finite() {
            At::Upper
        } else if ul.is_finite() {
            At::Lower
        } else if uu.is_finite() {
            At::Upper
        } else {
            At::Free
        };
        match side {
            At::Lower => {
                if !ul.is_finite() {
                    self.lower[j] = -BIG;
                }
                self.x[j] = self.lower[j];
            }
            At::Upper => {
                if !uu.is_finite() {
                    self.upper[j] = BIG;
                }
                self.x[j] = self.upper[j];
            }
            At::Free => self.x[j] = 0.0,
            At::Basic => unreachable!(),
        }
        self.at[j] = side;
    }

    /// Recomputes basic values from `B^-1 r` and the nonbasic values.
    fn recompute_basics(&mut self) {
        let (n, cols) = (self.n, self.cols);
        for i in 0..self.m {
            let row = &self.t[i * cols..(i + 1) * cols];
            let mut v: f64 = (0..self.m).map(|k| row[n + k] * self.rhs[k]).sum();
            for j in 0..cols {
                if self.at[j] != At::Basic && self.x[j] != 0.0 {
                    v -= row[j] * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    /// Rebuilds the tableau and reduced costs for the current basis from the
    /// original rows, discarding accumulated rounding error. Returns `false`
    /// if the basis matrix is numerically singular.
    pub fn refactor(&mut self) -> bool {
        let (m, n, cols) = (self.m, self.n, self.cols);
        let mut t = vec![0.0; m * cols];
        for (i, row) in self.a_rows.iter().enumerate() {
            for &(j, a) in row {
                t[i * cols + j] = a;
            }
            t[i * cols + n + i] = 1.0;
        }
        let basics = self.basis.clone();
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        for &c in &basics {
            let mut best = usize::MAX;
            let mut best_abs = 1e-11;
            for i in 0..m {
                if !assigned[i] && t[i * cols + c].abs() > best_abs {
                    best_abs = t[i * cols + c].abs();
                    best = i;
                }
            }
            if best == usize::MAX {
                return false;
            }
            assigned[best] = true;
            new_basis[best] = c;
            let inv = 1.0 / t[best * cols + c];
            for v in &mut t[best * cols..(best + 1) * cols] {
                *v *= inv;
            }
            let prow: Vec<f64> = t[best * cols..(best + 1) * cols].to_vec();
            let nz: Vec<usize> = (0..cols).filter(|&j| prow[j] != 0.0).collect();
            for i in 0..m {
                if i == best {
                    continue;
                }
                let f = t[i * cols + c];
                if f == 0.0 {
                    continue;
                }
                let row = &mut t[i * cols..(i + 1) * cols];
                for &j in &nz {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        }
        self.t = t;
        self.basis = new_basis;
        // d = c - c_B T
        let mut d = self.cost.clone();
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    d[j] -= cb * row[j];
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.d = d;
        self.recompute_basics();
        self.since_refactor = 0;
        true
    }

    /// Changes the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        assert!(j < self.n);
        if self.user_lower[j] == lower && self.user_upper[j] == upper {
            return;
        }
        self.user_lower[j] = lower;
        self.user_upper[j] = upper;
        if self.at[j] == At::Basic {
            self.lower[j] = lower;
            self.upper[j] = upper;
            return;
        }
        let old = self.x[j];
        self.place_nonbasic(j);
        let delta = self.x[j] - old;
        if delta != 0.0 {
            let cols = self.cols;
            for i in 0..self.m {
                let a = self.t[i * cols + j];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * delta;
                }
            }
        }
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.user_lower[j], self.user_upper[j])
    }

    fn infeasibility(&self, v: usize) -> f64 {
        let x = self.x[v];
        (self.lower[v] - x).max(x - self.upper[v])
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let prow = r * cols;
        let piv = self.t[prow + q];
        let inv = 1.0 / piv;
        for v in &mut self.t[prow..prow + cols] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.t[prow..prow + cols].to_vec();
        let nz: Vec<usize> = (0..cols).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for &j in &nz {
                row[j] -= f * pivot_row[j];
            }
            row[q] = 0.0;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &j in &nz {
                self.d[j] -= dq * pivot_row[j];
            }
        }
        self.d[q] = 0.0;
        self.basis[r] = q;
        self.at[q] = At::Basic;
        self.lower[q] = self.user_lower[q];
        self.upper[q] = self.user_upper[q];
        self.pivots += 1;
        self.since_refactor += 1;
    }

    /// Runs the dual simplex until primal feasibility or a terminal status.
    pub fn solve(&mut self) -> LpStatus {
        let cap = 50 * (self.m + self.n) + 1000;
        let mut degenerate = 0usize;
        let mut refreshed = 0usize;
        let mut iters = 0usize;
        self.infeasible_row = None;
        loop {
            if self.since_refactor >= REFACTOR_EVERY && !self.refactor() {
                return LpStatus::IterationLimit;
            }
            // leaving row
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut r = usize::MAX;
            let mut worst = FEAS_TOL;
            for i in 0..self.m {
                let v = self.basis[i];
                let inf = self.infeasibility(v);
                if bland {
                    if inf > FEAS_TOL && (r == usize::MAX || v < self.basis[r]) {
                        r = i;
                    }
                } else if inf > worst {
                    worst = inf;
                    r = i;
                }
            }
            if r == usize::MAX {
                if refreshed < 3 {
                    refreshed += 1;
                    self.recompute_basics();
                    if (0..self.m).any(|i| self.infeasibility(self.basis[i]) > FEAS_TOL) {
                        continue;
                    }
                }
                return if self.hits_artificial_bound() {
                    LpStatus::Unbounded
                } else {
                    LpStatus::Optimal
                };
            }
            if iters >= cap {
                return LpStatus::IterationLimit;
            }
            iters += 1;

            let p = self.basis[r];
            let increase = self.x[p] < self.lower[p];
            let target = if increase { self.lower[p] } else { self.upper[p] };
            let row = r * self.cols;
            // entering column
            let eligible = |j: usize, s: &Simplex| -> Option<(f64, f64)> {
                let a = s.t[row + j];
                if a.abs() <= PIVOT_TOL {
                    return None;
                }
                let dir_ok = match s.at[j] {
                    At::Basic => return None,
                    At::Lower => {
                        if s.upper[j] <= s.lower[j] {
                            return None;
                        }
                        (a < 0.0) == increase
                    }
                    At::Upper => {
                        if s.upper[j] <= s.lower[j] {
                            return None;
                        }
                        (a > 0.0) == increase
                    }
                    At::Free => true,
                };
                if !dir_ok {
                    return None;
                }
                let dj = match s.at[j] {
                    At::Lower => s.d[j].max(0.0),
                    At::Upper => (-s.d[j]).max(0.0),
                    _ => s.d[j].abs(),
                };
                Some((dj, a.abs()))
            };
            let mut q = usize::MAX;
            if bland {
                let mut best = f64::INFINITY;
                for j in 0..self.cols {
                    if let Some((dj, a)) = eligible(j, self) {
                        let ratio = dj / a;
                        if ratio < best - 1e-12 {
                            best = ratio;
                            q = j;
                        }
                    }
                }
            } else {
                let mut bound = f64::INFINITY;
                for j in 0..self.cols {
                    if let Some((dj, a)) = eligible(j, self) {
                        bound = bound.min((dj + DUAL_TOL) / a);
                    }
                }
                let mut best_a = 0.0;
                for j in 0..self.cols {
                    if let Some((dj, a)) = eligible(j, self) {
                        if dj / a <= bound && a > best_a {
                            best_a = a;
                            q = j;
                        }
                    }
                }
            }
            if q == usize::MAX {
                self.infeasible_row = Some(r);
                return LpStatus::Infeasible;
            }
            if self.d[q].abs() <= DUAL_TOL {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            let alpha = self.t[row + q];
            let theta = (self.x[p] - target) / alpha;
            self.x[q] += theta;
            let cols = self.cols;
            for i in 0..self.m {
                let a = self.t[i * cols + q];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * theta;
                }
            }
            self.x[p] = target;
            self.pivot(r, q);
            self.at[p] = if increase { At::Lower } else { At::Upper };
        }
    }

    fn hits_artificial_bound(&self) -> bool {
        (0..self.cols).any(|j| match self.at[j] {
            At::Lower => self.lower[j] != self.user_lower[j],
            At::Upper => self.upper[j] != self.user_upper[j],
            _ => false,
        })
    }

    /// Row multipliers `c_B B^-1` of the current basis.
    pub fn duals(&self) -> Vec<f64> {
        (0..self.m).map(|i| -self.d[self.n + i]).collect()
    }

    /// Row combination behind the last infeasibility verdict.
    pub fn infeasibility_ray(&self) -> Option<Vec<f64>> {
        let r = self.infeasible_row?;
        Some(self.t[r * self.cols + self.n..(r + 1) * self.cols].to_vec())
    }

    /// Structural variable values.
    pub fn primal(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    pub fn solution(&mut self) -> LpSolution {
        let status = self.solve();
        LpSolution {
            status,
            objective: if status == LpStatus::Optimal {
                self.objective()
            } else {
                f64::NAN
            },
            x: self.primal(),
        }
    }
}

/// Solves `lp` from the slack basis.
pub fn solve_lp(lp: &Lp) -> LpSolution {
    Simplex::new(lp).solution()
}
