use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::bounds::{propagate_with, Fix};
use super::lp::{LpStatus, Sense, Simplex};
use super::model::{Encoding, MilpModel, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub node_limit: usize,
    /// Nodes whose bound is within this of the incumbent are pruned.
    pub gap: f64,
    pub integrality_tol: f64,
    /// Cap on activation-pattern LPs tried as incumbent heuristics.
    pub max_pattern_lps: usize,
    /// Nodes with more undecided neurons than this bisect their input box
    /// instead of branching on a neuron.
    pub input_split_min_free: usize,
    /// Input boxes narrower than this are never bisected.
    pub input_split_min_width: f64,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            node_limit: 1_000_000,
            gap: 1e-6,
            integrality_tol: 1e-6,
            max_pattern_lps: 2000,
            input_split_min_free: 2,
            input_split_min_width: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    /// The LP engine failed to converge on some node.
    LpFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbResult {
    pub status: BnbStatus,
    /// Incumbent objective (`+inf` without one).
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub lower_bound: f64,
    /// Input coordinates of the incumbent.
    pub inputs: Option<Vec<f64>>,
    pub nodes: usize,
    pub lp_pivots: usize,
}

/// A starting incumbent: objective value and the input point achieving it.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub objective: f64,
    pub inputs: Vec<f64>,
}

/// Improvement rounds per local search.
const LOCAL_SEARCH_ROUNDS: usize = 50;

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<Fix>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Reversed so the max-heap pops the smallest bound, then the oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

struct NodeBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    fixes: Vec<Fix>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Tightens variable bounds for a node from its input box, its fixings and
/// the incumbent.
fn node_bounds(model: &MilpModel, fixes: &[Fix], lo: &[f64], hi: &[f64], incumbent: f64) -> Option<NodeBounds> {
    let d = model.x_vars.len();
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut eps_hi = 1.0f64;
    if model.spec.objective == Objective::Epsilon && incumbent.is_finite() {
        let x0 = model.spec.anchor.as_ref().unwrap();
        let r = incumbent.min(1.0);
        eps_hi = r;
        for i in 0..d {
            lo[i] = lo[i].max(x0[i] - r);
            hi[i] = hi[i].min(x0[i] + r);
            if lo[i] > hi[i] {
                return None;
            }
        }
    }
    let nb = propagate_with(&model.net, &lo, &hi, Some(fixes), Some(&model.bounds))?;
    if let Some(t) = model.spec.threshold {
        let (ol, oh) = nb.output;
        let infeasible = match t.sense {
            Sense::Le => ol > t.value + 1e-9,
            Sense::Ge => oh < t.value - 1e-9,
            Sense::Eq => ol > t.value + 1e-9 || oh < t.value - 1e-9,
        };
        if infeasible {
            return None;
        }
    }
    let mut lower = model.lp.lower.clone();
    let mut upper = model.lp.upper.clone();
    for i in 0..d {
        lower[model.x_vars[i]] = lo[i];
        upper[model.x_vars[i]] = hi[i];
    }
    if let Some(e) = model.eps_var {
        upper[e] = eps_hi;
    }
    let mut out_fixes = fixes.to_vec();
    for (g, (enc, (l, u))) in model.encodings.iter().zip(nb.flat()).enumerate() {
        if let Encoding::Unstable { z, b } = *enc {
            let fix = match fixes[g] {
                Fix::Free if u <= 0.0 => Fix::Inactive,
                Fix::Free if l >= 0.0 => Fix::Active,
                f => f,
            };
            out_fixes[g] = fix;
            match fix {
                Fix::Inactive => {
                    lower[b] = 0.0;
                    upper[b] = 0.0;
                    lower[z] = 0.0;
                    upper[z] = 0.0;
                }
                Fix::Active => {
                    lower[b] = 1.0;
                    upper[b] = 1.0;
                    lower[z] = l.max(0.0);
                    upper[z] = u.max(0.0).min(model.lp.upper[z]);
                }
                Fix::Free => {
                    lower[b] = 0.0;
                    upper[b] = 1.0;
                    lower[z] = 0.0;
                    upper[z] = u.min(model.lp.upper[z]);
                }
            }
            if lower[z] > upper[z] {
                return None;
            }
        }
    }
    Some(NodeBounds {
        lower,
        upper,
        fixes: out_fixes,
        lo,
        hi,
    })
}

struct Search<'a> {
    model: &'a MilpModel,
    cfg: &'a BnbConfig,
    root: Simplex,
    work: Simplex,
    solves_since_reset: usize,
    pivots: usize,
    incumbent: f64,
    inputs: Option<Vec<f64>>,
    tried: HashSet<Vec<bool>>,
    lp_failed: bool,
}

enum NodeLp {
    Infeasible,
    /// `bound` is a proven lower bound, `objective` the value at `x`.
    Solved { bound: f64, objective: f64, x: Vec<f64> },
    Failed,
}

impl<'a> Search<'a> {
    fn solve_with(&mut self, nb: &NodeBounds) -> NodeLp {
        if self.solves_since_reset >= 64 {
            self.work = self.root.clone();
            self.solves_since_reset = 0;
        }
        self.solves_since_reset += 1;
        let out = self.try_solve(nb, false);
        if !matches!(out, NodeLp::Failed) {
            return out;
        }
        // rebuild the current basis from the original rows and continue
        if self.work.refactor() {
            let out = self.try_solve(nb, false);
            if !matches!(out, NodeLp::Failed) {
                return out;
            }
        }
        // retry from a fresh tableau
        self.work = self.root.clone();
        self.solves_since_reset = 0;
        self.try_solve(nb, true)
    }

    /// With `accept_loose`, an optimal basis whose safe bound falls short of
    /// the primal value is still used, with the weaker safe bound.
    fn try_solve(&mut self, nb: &NodeBounds, accept_loose: bool) -> NodeLp {
        for j in 0..self.model.lp.num_vars() {
            self.work.set_bounds(j, nb.lower[j], nb.upper[j]);
        }
        let before = self.work.pivots;
        let status = self.work.solve();
        self.pivots += self.work.pivots - before;
        let lp = &self.model.lp;
        match status {
            LpStatus::Optimal => {
                let x = self.work.primal();
                let mut check = lp.clone();
                check.lower.clone_from(&nb.lower);
                check.upper.clone_from(&nb.upper);
                if check.max_violation(&x) > 1e-6 {
                    return NodeLp::Failed;
                }
                let primal = self.work.objective();
                // the bound used for pruning must be valid regardless of tableau error
                let safe = lp.lagrangian_bound(&self.work.duals(), &nb.lower, &nb.upper);
                if safe < primal - 1e-6 && !accept_loose {
                    return NodeLp::Failed;
                }
                NodeLp::Solved {
                    bound: safe.min(primal) + self.model.objective_offset,
                    objective: primal + self.model.objective_offset,
                    x,
                }
            }
            LpStatus::Infeasible => match self.work.infeasibility_ray() {
                Some(y) if lp.farkas_proves_infeasible(&y, &nb.lower, &nb.upper) => NodeLp::Infeasible,
                _ => NodeLp::Failed,
            },
            _ => NodeLp::Failed,
        }
    }

    /// Solves the LP with every binary fixed by `fixes` and improves the
    /// incumbent. Returns the LP value and its inputs when it was solved.
    fn try_pattern(&mut self, fixes: &[Fix], force: bool) -> Option<(f64, Vec<f64>)> {
        let key: Vec<bool> = fixes.iter().map(|f| *f == Fix::Active).collect();
        if !force && (self.tried.len() >= self.cfg.max_pattern_lps || self.tried.contains(&key)) {
            return None;
        }
        self.tried.insert(key);
        let nb = node_bounds(
            self.model,
            fixes,
            &self.model.spec.box_lo,
            &self.model.spec.box_hi,
            f64::INFINITY,
        )?;
        match self.solve_with(&nb) {
            NodeLp::Solved { objective, x, .. } => {
                let inputs = self.model.inputs(&x);
                if objective < self.incumbent {
                    self.incumbent = objective;
                    self.inputs = Some(inputs.clone());
                }
                Some((objective, inputs))
            }
            _ => None,
        }
    }

    /// Descends across neighbouring linear regions: starting from the
    /// pattern `fixes`, flips neurons whose pre-activation is zero at the
    /// region optimum while that improves the objective.
    fn local_search(&mut self, fixes: Vec<Fix>) {
        let Some((mut value, mut inputs)) = self.try_pattern(&fixes, false) else {
            return;
        };
        let mut current = fixes;
        for _ in 0..LOCAL_SEARCH_ROUNDS {
            let pre: Vec<f64> = self.model.net.forward_full(&inputs).1.into_iter().flatten().collect();
            let mut tight: Vec<(f64, usize)> = self
                .model
                .encodings
                .iter()
                .enumerate()
                .filter(|(_, enc)| matches!(enc, Encoding::Unstable { .. }))
                .map(|(g, _)| (pre[g].abs(), g))
                .filter(|&(a, _)| a <= 1e-6)
                .collect();
            tight.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut best: Option<(f64, Vec<f64>, Vec<Fix>)> = None;
            for &(_, g) in tight.iter().take(8) {
                let mut flipped = current.clone();
                flipped[g] = match flipped[g] {
                    Fix::Active => Fix::Inactive,
                    _ => Fix::Active,
                };
                if let Some((v, x)) = self.try_pattern(&flipped, false) {
                    if v < value - self.cfg.gap && best.as_ref().map_or(true, |b| v < b.0) {
                        best = Some((v, x, flipped));
                    }
                }
            }
            match best {
                Some((v, x, f)) => {
                    value = v;
                    inputs = x;
                    current = f;
                }
                None => break,
            }
        }
    }

    fn pattern_fixes(&self, inputs: &[f64]) -> Vec<Fix> {
        self.model
            .net
            .pattern(inputs)
            .into_iter()
            .map(|on| if on { Fix::Active } else { Fix::Inactive })
            .collect()
    }
}

/// Best-first branch and bound over input boxes and neuron binaries.
pub fn branch_and_bound(model: &MilpModel, cfg: &BnbConfig, start: Option<Incumbent>) -> BnbResult {
    let root = Simplex::new(&model.lp);
    let mut s = Search {
        model,
        cfg,
        work: root.clone(),
        root,
        solves_since_reset: 0,
        pivots: 0,
        incumbent: f64::INFINITY,
        inputs: None,
        tried: HashSet::new(),
        lp_failed: false,
    };
    if let Some(inc) = start {
        s.incumbent = inc.objective;
        let fixes = s.pattern_fixes(&inc.inputs);
        s.inputs = Some(inc.inputs);
        s.local_search(fixes);
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixes: model.root_fixes(),
        lo: model.spec.box_lo.clone(),
        hi: model.spec.box_hi.clone(),
    });
    let mut nodes = 0usize;
    let mut status = BnbStatus::Optimal;
    while let Some(node) = heap.pop() {
        if node.bound >= s.incumbent - cfg.gap {
            continue;
        }
        if nodes >= cfg.node_limit {
            heap.push(node);
            status = BnbStatus::NodeLimit;
            break;
        }
        nodes += 1;
        let Some(nb) = node_bounds(model, &node.fixes, &node.lo, &node.hi, s.incumbent) else {
            continue;
        };
        let (bound, x) = match s.solve_with(&nb) {
            NodeLp::Infeasible => continue,
            NodeLp::Failed => {
                s.lp_failed = true;
                heap.push(node);
                break;
            }
            NodeLp::Solved { bound, x, .. } => (bound, x),
        };
        if bound >= s.incumbent - cfg.gap {
            continue;
        }
        let free = nb.fixes.iter().filter(|&&f| f == Fix::Free).count();
        let (split_dim, width) = (0..nb.lo.len())
            .map(|i| (i, nb.hi[i] - nb.lo[i]))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if free > cfg.input_split_min_free && width > cfg.input_split_min_width {
            let inputs = model.inputs(&x);
            let pat = s.pattern_fixes(&inputs);
            let merged: Vec<Fix> = nb
                .fixes
                .iter()
                .zip(&pat)
                .map(|(&f, &p)| if f == Fix::Free { p } else { f })
                .collect();
            s.local_search(merged);
            let mid = 0.5 * (nb.lo[split_dim] + nb.hi[split_dim]);
            for half in 0..2 {
                let (mut lo, mut hi) = (nb.lo.clone(), nb.hi.clone());
                if half == 0 {
                    hi[split_dim] = mid;
                } else {
                    lo[split_dim] = mid;
                }
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    fixes: nb.fixes.clone(),
                    lo,
                    hi,
                });
            }
            continue;
        }
        // most fractional free binary, ties to the lowest neuron index
        let mut branch = None;
        let mut best = cfg.integrality_tol;
        for (g, enc) in model.encodings.iter().enumerate() {
            if let Encoding::Unstable { b, .. } = *enc {
                if nb.fixes[g] != Fix::Free {
                    continue;
                }
                let frac = x[b].min(1.0 - x[b]);
                if frac > best {
                    best = frac;
                    branch = Some(g);
                }
            }
        }
        if branch.is_none() {
            // integral relaxation: re-solve with the binaries fixed exactly
            let fixes: Vec<Fix> = model
                .encodings
                .iter()
                .zip(&nb.fixes)
                .map(|(enc, &f)| match (*enc, f) {
                    (Encoding::Unstable { b, .. }, Fix::Free) => {
                        if x[b] > 0.5 {
                            Fix::Active
                        } else {
                            Fix::Inactive
                        }
                    }
                    _ => f,
                })
                .collect();
            let leaf = s.try_pattern(&fixes, true);
            if leaf.map_or(true, |(v, _)| v > bound + cfg.gap) {
                // rounding moved the optimum; fall back to branching on any fractional value
                branch = model
                    .encodings
                    .iter()
                    .enumerate()
                    .filter_map(|(g, enc)| match *enc {
                        Encoding::Unstable { b, .. } if nb.fixes[g] == Fix::Free => {
                            let frac = x[b].min(1.0 - x[b]);
                            (frac > 0.0).then_some((g, frac))
                        }
                        _ => None,
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(g, _)| g);
            }
        }
        match branch {
            None => {}
            Some(g) => {
                let inputs = model.inputs(&x);
                let pat = s.pattern_fixes(&inputs);
                let merged: Vec<Fix> = nb
                    .fixes
                    .iter()
                    .zip(&pat)
                    .map(|(&f, &p)| if f == Fix::Free { p } else { f })
                    .collect();
                s.local_search(merged);
                for fix in [Fix::Inactive, Fix::Active] {
                    let mut child = nb.fixes.clone();
                    child[g] = fix;
                    seq += 1;
                    heap.push(Node {
                        bound,
                        seq,
                        fixes: child,
                        lo: nb.lo.clone(),
                        hi: nb.hi.clone(),
                    });
                }
            }
        }
    }
    if s.lp_failed {
        status = BnbStatus::LpFailure;
    }
    let open_min = heap
        .iter()
        .filter(|n| n.bound < s.incumbent - cfg.gap)
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    let lower_bound = open_min.min(s.incumbent);
    if status == BnbStatus::Optimal && s.inputs.is_none() {
        status = BnbStatus::Infeasible;
    }
    BnbResult {
        status,
        objective: s.incumbent,
        lower_bound,
        inputs: s.inputs,
        nodes,
        lp_pivots: s.pivots,
    }
}
