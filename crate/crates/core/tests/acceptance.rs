//! Acceptance criteria, one `PASS`/`FAIL` line each.
//!
//! Runs without the libtest harness so the criteria execute one after the
//! other and their wall-time limits are measured without interference.
//! `ACCEPTANCE=1,5` restricts the run to the listed criteria.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;

use zetaloop::dataset::{class_histogram, Dataset, SplitDataset};
use zetaloop::harness::{
    assess, base_dataset, build_test_set, run_pipeline, tune, Cell, ExperimentConfig, RunContext, Sampler, Variant,
};
use zetaloop::loops::{
    compare_stat_vs_verified, log_schedule, ni_enrich, verify_corners, vi_enrich, EnrichConfig, RatioRow,
};
use zetaloop::milp::{
    branch_and_bound, check_forward_consistency, linf, propagate_bounds, solve_lp, unit_corners, BnbConfig,
    BnbStatus, CertStatus, Certificate, Lp, LpStatus, MilpModel, ModelSpec, Objective, Sense, Side, Threshold,
    UnitBoxNet, VerifyConfig,
};
use zetaloop::net::{train, Batch, Mlp, TrainConfig, Trainer};
use zetaloop::oracle::{
    block_coefficients, block_eigenvalues, damping_ratio, damping_sensitivity, eig_sensitivity, mode_damping,
    state_matrix, Contingency, EigenPair, Mode, OperatingPoint,
};
use zetaloop::sampling::{label, sample_grid, sample_uniform, Hypercube, Origin, StabilityClass};
use zetaloop::seeding;
use zetaloop::walks::{enrich_dw, WalkConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(start: Instant, o: Outcome) -> Outcome {
    outcome(o.pass, format!("{}; runtime {:.1}s", o.detail, start.elapsed().as_secs_f64()))
}

fn within(limit: Duration, start: Instant, o: Outcome) -> Outcome {
    let t = start.elapsed();
    let ok = t < limit;
    outcome(
        o.pass && ok,
        format!("{}; runtime {:.1}s (limit {}s)", o.detail, t.as_secs_f64(), limit.as_secs()),
    )
}

/// Desk-scale training settings shared by the trained-net criteria.
const DESK: TrainConfig = TrainConfig {
    l0: 0.01,
    gamma: 0.999,
    epochs: 3000,
    alpha_j: 0.0,
    seed: 7,
};

fn grid5() -> Dataset {
    let h = Hypercube::default();
    let s = label(&sample_grid(&h, 5).unwrap(), Origin::Grid).unwrap();
    Dataset::from_samples(&s, 1).unwrap()
}

/// The 3x32 net trained on the 5^4 grid, shared by criteria 3 and 4.
fn trained_3x32() -> &'static Mlp {
    static NET: OnceLock<Mlp> = OnceLock::new();
    NET.get_or_init(|| {
        let ds = grid5();
        let net = Mlp::with_shape(3, 32, 7, ds.standardizer).unwrap();
        train(net, &ds, DESK).unwrap().best
    })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

// ---------------------------------------------------------------- 1

/// Canonical eigenvalue of one 2x2 block of the state matrix, from its trace
/// and determinant.
fn block_eig(m: &[[f64; 4]; 4], mode: Mode) -> (f64, f64) {
    let o = if mode == Mode::A { 0 } else { 2 };
    let (a, b, c, d) = (m[o][o], m[o][o + 1], m[o + 1][o], m[o + 1][o + 1]);
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc < 0.0 {
        (tr / 2.0, (-disc).sqrt())
    } else {
        (tr / 2.0 + disc.sqrt(), 0.0)
    }
}

fn zeta_of(sigma: f64, omega: f64) -> f64 {
    -100.0 * sigma / sigma.hypot(omega)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let mut rng = seeding::rng(101);
    let (mut worst_zeta, mut worst_eig, mut worst_grad) = (0.0f64, 0.0f64, 0.0f64);
    let (mut complex_blocks, mut checked) = (0usize, 0usize);
    for _ in 0..10_000 {
        // keep finite-difference steps inside the box
        let step: [f64; 4] = std::array::from_fn(|i| 1e-6 * h.width(i));
        let x: [f64; 4] = std::array::from_fn(|i| rng.gen_range(h.lower[i] + step[i]..h.upper[i] - step[i]));
        let op = OperatingPoint::from_array(x);
        for c in Contingency::all() {
            for mode in Mode::ALL {
                let bc = block_coefficients(&op, c, mode).unwrap();
                let disc = bc.d * bc.d - 4.0 * bc.k;
                if disc >= 0.0 {
                    continue;
                }
                complex_blocks += 1;
                let closed = 50.0 * bc.d / bc.k.sqrt();
                let (l, _) = block_eigenvalues(bc.d, bc.k);
                let via_eig = damping_ratio(EigenPair { sigma: l.re, omega: l.im }).unwrap();
                let (s, w) = block_eig(&state_matrix(&op, c).unwrap(), mode);
                worst_zeta = worst_zeta
                    .max((via_eig - closed).abs())
                    .max((mode_damping(&op, c, mode).unwrap() - closed).abs())
                    .max((zeta_of(s, w) - closed).abs());

                if disc.abs() < 1e-3 * (bc.d * bc.d + 4.0 * bc.k) {
                    continue;
                }
                checked += 1;
                let mut fd_re = [0.0; 4];
                let mut fd_im = [0.0; 4];
                let mut fd_z = [0.0; 4];
                let mut an_re = [0.0; 4];
                let mut an_im = [0.0; 4];
                for i in 0..4 {
                    let (mut xp, mut xm) = (x, x);
                    xp[i] += step[i];
                    xm[i] -= step[i];
                    let ep = block_eig(&state_matrix(&OperatingPoint::from_array(xp), c).unwrap(), mode);
                    let em = block_eig(&state_matrix(&OperatingPoint::from_array(xm), c).unwrap(), mode);
                    fd_re[i] = (ep.0 - em.0) / (2.0 * step[i]);
                    fd_im[i] = (ep.1 - em.1) / (2.0 * step[i]);
                    fd_z[i] = (zeta_of(ep.0, ep.1) - zeta_of(em.0, em.1)) / (2.0 * step[i]);
                    let g = eig_sensitivity(&op, c, mode, i).unwrap();
                    an_re[i] = g.re;
                    an_im[i] = g.im;
                }
                let an: Vec<f64> = an_re.iter().chain(&an_im).copied().collect();
                let fd: Vec<f64> = fd_re.iter().chain(&fd_im).copied().collect();
                worst_eig = worst_eig.max(rel_err(&fd, &an));
                let (gz, degenerate) = damping_sensitivity(&op, c, mode).unwrap();
                assert!(!degenerate);
                worst_grad = worst_grad.max(rel_err(&fd_z, &gz));
            }
        }
    }
    let pass = worst_zeta <= 1e-12 && worst_eig <= 1e-4 && worst_grad <= 1e-4;
    within(
        Duration::from_secs(5),
        start,
        outcome(
            pass,
            format!(
                "{complex_blocks} complex blocks, max |zeta - 50 d/sqrt(k)| = {worst_zeta:.2e} (tol 1e-12); \
                 {checked} non-degenerate blocks, max rel err eigenvalue sensitivity {worst_eig:.2e}, \
                 damping sensitivity {worst_grad:.2e} (tol 1e-4)"
            ),
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let ds = grid5();
    let net = Mlp::with_shape(3, 32, 21, ds.standardizer).unwrap();
    let pts = sample_uniform(&h, 100, 22);
    let samples = label(&pts, Origin::Uniform).unwrap();

    let mut worst_jac: f64 = 0.0;
    for p in &pts {
        let z = net.standardizer.x_to_std(p);
        let an = net.input_jacobian(&z).unwrap();
        let fd: Vec<f64> = (0..4)
            .map(|i| {
                let (mut a, mut b) = (z, z);
                a[i] += 1e-6;
                b[i] -= 1e-6;
                (net.forward(&a).unwrap() - net.forward(&b).unwrap()) / 2e-6
            })
            .collect();
        worst_jac = worst_jac.max(rel_err(&fd, &an));
    }

    let batch = Batch::from_samples(&samples, &net.standardizer);
    let alpha = 0.1;
    let (_, g) = net.loss_and_grad(&batch, alpha).unwrap();
    let objective = |w: Vec<Array2<f64>>, b: Vec<Array1<f64>>| {
        let m = Mlp::from_parts(w, b, net.standardizer).unwrap();
        m.loss(&batch, true).unwrap().objective(alpha)
    };
    let eps = 1e-6;
    let mut an = Vec::new();
    let mut fd = Vec::new();
    for k in 0..net.weights().len() {
        for ((r, c), &gv) in g.weights[k].indexed_iter() {
            let (mut wp, mut wm) = (net.weights().to_vec(), net.weights().to_vec());
            wp[k][(r, c)] += eps;
            wm[k][(r, c)] -= eps;
            fd.push((objective(wp, net.biases().to_vec()) - objective(wm, net.biases().to_vec())) / (2.0 * eps));
            an.push(gv);
        }
        for (r, &gv) in g.biases[k].indexed_iter() {
            let (mut bp, mut bm) = (net.biases().to_vec(), net.biases().to_vec());
            bp[k][r] += eps;
            bm[k][r] -= eps;
            fd.push((objective(net.weights().to_vec(), bp) - objective(net.weights().to_vec(), bm)) / (2.0 * eps));
            an.push(gv);
        }
    }
    let worst_param = rel_err(&fd, &an);
    within(
        Duration::from_secs(10),
        start,
        outcome(
            worst_jac < 1e-5 && worst_param < 1e-4,
            format!(
                "input Jacobian max rel err {worst_jac:.2e} over 100 points (tol 1e-5); \
                 {} parameter gradients rel err {worst_param:.2e} (tol 1e-4, alpha_J = {alpha})",
                an.len()
            ),
        ),
    )
}

// ---------------------------------------------------------------- 3

/// Layer maps of a network on unit-box inputs: rows of `(weights, bias)`.
type Layers = Vec<(Vec<Vec<f64>>, Vec<f64>)>;

/// Minimum l-inf radius around `anchor` at which the output satisfies
/// `sense value`, by solving one LP per ReLU activation pattern.
fn enumerate_patterns(layers: &Layers, anchor: &[f64], sense: Sense, value: f64) -> Option<f64> {
    let hidden: Vec<usize> = layers[..layers.len() - 1].iter().map(|l| l.1.len()).collect();
    let total: usize = hidden.iter().sum();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << total) {
        let mut lp = Lp::new();
        let xs: Vec<usize> = (0..4).map(|i| lp.add_var(0.0, 1.0, 0.0, format!("x{i}"))).collect();
        let e = lp.add_var(0.0, 1.0, 1.0, "eps");
        for i in 0..4 {
            lp.add_row(&[(xs[i], 1.0), (e, -1.0)], Sense::Le, anchor[i], "ub");
            lp.add_row(&[(xs[i], 1.0), (e, 1.0)], Sense::Ge, anchor[i], "lb");
        }
        // each unit as an affine function of x: (coefficients, constant)
        let mut prev: Vec<([f64; 4], f64)> = (0..4)
            .map(|i| {
                let mut a = [0.0; 4];
                a[i] = 1.0;
                (a, 0.0)
            })
            .collect();
        let mut bit = 0;
        for (k, (w, b)) in layers.iter().enumerate() {
            let mut next = Vec::new();
            for (row, &bias) in w.iter().zip(b) {
                let mut a = [0.0; 4];
                let mut c = bias;
                for (p, &wv) in prev.iter().zip(row) {
                    for i in 0..4 {
                        a[i] += wv * p.0[i];
                    }
                    c += wv * p.1;
                }
                let coeffs: Vec<(usize, f64)> = (0..4).map(|i| (xs[i], a[i])).collect();
                if k == layers.len() - 1 {
                    lp.add_row(&coeffs, sense, value - c, "threshold");
                } else if mask >> bit & 1 == 1 {
                    lp.add_row(&coeffs, Sense::Ge, -c, "on");
                    next.push((a, c));
                    bit += 1;
                } else {
                    lp.add_row(&coeffs, Sense::Le, -c, "off");
                    next.push(([0.0; 4], 0.0));
                    bit += 1;
                }
            }
            prev = next;
        }
        let s = solve_lp(&lp);
        if s.status == LpStatus::Optimal {
            best = Some(best.map_or(s.objective, |v: f64| v.min(s.objective)));
        }
    }
    best
}

fn random_layers(widths: &[usize], seed: u64) -> Layers {
    let mut rng = seeding::rng(seed);
    (0..widths.len() - 1)
        .map(|k| {
            let w = (0..widths[k + 1])
                .map(|_| (0..widths[k]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let b = (0..widths[k + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (w, b)
        })
        .collect()
}

fn unit_net(layers: &Layers) -> UnitBoxNet {
    let ws = layers
        .iter()
        .map(|(w, _)| Array2::from_shape_fn((w.len(), w[0].len()), |(r, c)| w[r][c]))
        .collect();
    let bs = layers.iter().map(|(_, b)| Array1::from(b.clone())).collect();
    UnitBoxNet::from_parts(ws, bs).unwrap()
}

/// Unit-box layers of a trained net with the input standardization folded
/// in; the output stays in standardized units.
fn fold(net: &Mlp, h: &Hypercube) -> Layers {
    let st = &net.standardizer;
    let mut layers: Layers = net
        .weights()
        .iter()
        .zip(net.biases())
        .map(|(w, b)| (w.rows().into_iter().map(|r| r.to_vec()).collect(), b.to_vec()))
        .collect();
    let (w0, b0) = &mut layers[0];
    for (row, bias) in w0.iter_mut().zip(b0.iter_mut()) {
        for i in 0..4 {
            *bias += row[i] * (h.lower[i] - st.mu_x[i]) / st.sigma_x[i];
            row[i] *= h.width(i) / st.sigma_x[i];
        }
    }
    layers
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let unet = UnitBoxNet::from_mlp(trained_3x32(), &h).unwrap();
    let mut rng = seeding::rng(303);
    let mut worst_fwd: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        worst_fwd = worst_fwd.max(check_forward_consistency(&unet, &x).unwrap());
    }

    let mut worst_gap: f64 = 0.0;
    let mut cases = 0;
    let mut mismatch = Vec::new();
    // random 2x8 nets through the model builder
    for seed in 0..3u64 {
        let layers = random_layers(&[4, 8, 8, 1], 330 + seed);
        let net = unit_net(&layers);
        let anchor = unit_corners()[(5 * seed as usize + 3) % 16].clone();
        let y0 = net.forward(&anchor);
        let b = propagate_bounds(&net, &[0.0; 4], &[1.0; 4]);
        let (sense, value) = if y0 > 0.0 {
            (Sense::Le, b.output.0 + 0.3 * (y0 - b.output.0))
        } else {
            (Sense::Ge, b.output.1 - 0.3 * (b.output.1 - y0))
        };
        let spec = ModelSpec {
            box_lo: vec![0.0; 4],
            box_hi: vec![1.0; 4],
            anchor: Some(anchor.clone()),
            threshold: Some(Threshold { sense, value }),
            objective: Objective::Epsilon,
            redundant_rows: false,
        };
        let model = MilpModel::build(&net, &b, spec).unwrap();
        let res = branch_and_bound(&model, &BnbConfig::default(), None);
        cases += 1;
        match enumerate_patterns(&layers, &anchor, sense, value) {
            Some(v) if res.status == BnbStatus::Optimal => worst_gap = worst_gap.max((res.objective - v).abs()),
            None if res.status == BnbStatus::Infeasible => {}
            other => mismatch.push(format!("seed {seed}: bnb {:?} vs enumeration {other:?}", res.status)),
        }
    }
    // a trained 2x8 net through the public corner verification
    let ds = grid5();
    let small = train(Mlp::with_shape(2, 8, 31, ds.standardizer).unwrap(), &ds, TrainConfig { epochs: 1000, ..DESK })
        .unwrap()
        .best;
    let su = UnitBoxNet::from_mlp(&small, &h).unwrap();
    let layers = fold(&small, &h);
    let st = small.standardizer;
    let certs = verify_corners(&su, 0.25, &VerifyConfig::default()).unwrap();
    for (i, cert) in certs.iter().enumerate() {
        let Some(side) = cert.side else { continue };
        if cert.status != CertStatus::Certified && cert.status != CertStatus::InfeasibleInBox {
            continue;
        }
        cases += 1;
        let sense = if side == Side::Stable { Sense::Le } else { Sense::Ge };
        let value = (cert.threshold - st.mu_y) / st.sigma_y;
        match (enumerate_patterns(&layers, &cert.anchor, sense, value), cert.status) {
            (Some(v), CertStatus::Certified) => worst_gap = worst_gap.max((cert.epsilon_star - v).abs()),
            (None, CertStatus::InfeasibleInBox) => {}
            (other, status) => mismatch.push(format!("corner {i}: {status:?} vs enumeration {other:?}")),
        }
    }
    let pass = worst_fwd < 1e-6 && worst_gap <= 1e-4 && mismatch.is_empty();
    within(
        Duration::from_secs(120),
        start,
        outcome(
            pass,
            format!(
                "forward consistency max dev {worst_fwd:.2e} at 100 points (tol 1e-6); \
                 B&B vs pattern enumeration on {cases} 2x8 problems, max gap {worst_gap:.2e} (tol 1e-4){}",
                if mismatch.is_empty() { String::new() } else { format!("; mismatches: {}", mismatch.join(", ")) }
            ),
        ),
    )
}

// ---------------------------------------------------------------- 4

fn certified_radius(c: &Certificate) -> Option<f64> {
    match c.status {
        CertStatus::Certified => Some(c.epsilon_star),
        CertStatus::InfeasibleInBox => Some(1.0),
        CertStatus::SolverLimit => Some(c.lower_bound),
        _ => None,
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let unet = UnitBoxNet::from_mlp(trained_3x32(), &h).unwrap();
    let certs = verify_corners(&unet, 0.25, &VerifyConfig::default()).unwrap();

    // sampled search inside every certified ball
    let mut violations = 0;
    let mut balls = 0;
    let mut rng = seeding::rng(404);
    for c in &certs {
        let (Some(r), Some(side)) = (certified_radius(c), c.side) else { continue };
        balls += 1;
        for _ in 0..100_000 {
            let x: Vec<f64> = c
                .anchor
                .iter()
                .map(|&a| rng.gen_range((a - r).max(0.0)..=(a + r).min(1.0)))
                .collect();
            if linf(&x, &c.anchor) < r - 1e-6 && side.crosses(unet.predict(&x), c.threshold) {
                violations += 1;
            }
        }
    }

    let pairs: Vec<(usize, Certificate)> = certs
        .iter()
        .cloned()
        .enumerate()
        .filter(|(_, c)| c.status == CertStatus::Certified)
        .collect();
    let schedule = log_schedule(1_000_000);
    let rows = compare_stat_vs_verified(&unet, &pairs, &schedule, 100, 405);
    let sound = rows.iter().all(|r| r.percentiles[0] >= 1.0);
    let mut monotone = true;
    let mut finals: Vec<(usize, f64)> = Vec::new();
    for (corner, _) in &pairs {
        let series: Vec<&RatioRow> = rows.iter().filter(|r| r.corner == *corner).collect();
        monotone &= series.windows(2).all(|w| w[1].percentiles[3] <= w[0].percentiles[3]);
        finals.push((*corner, series.last().unwrap().percentiles[3]));
    }
    let close = finals.iter().all(|(_, m)| *m <= 1.10);
    let listing: Vec<String> = finals.iter().map(|(c, m)| format!("{c}:{m:.3}")).collect();
    within(
        Duration::from_secs(15 * 60),
        start,
        outcome(
            violations == 0 && balls > 0 && sound && monotone && close,
            format!(
                "{balls} certified balls, {violations} crossings closer than eps* - 1e-6 in 1e5 samples each; \
                 {} corners x 100 seeds: ratio >= 1 everywhere: {sound}, median non-increasing: {monotone}, \
                 median at n=1e6 per corner [{}] (tol 1.10)",
                pairs.len(),
                listing.join(" ")
            ),
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let test = build_test_set(&Hypercube::default(), 11).unwrap();
    let hist = test.histogram();
    let stable = hist.share(StabilityClass::Stable);
    let marginal = hist.share(StabilityClass::Marginal);
    timed(
        start,
        outcome(
            test.len() == 14_641 && stable > 0.6 && marginal < 0.05,
            format!(
                "{} points, Stable share {:.2}% (> 60%), Marginal share {:.2}% (< 5%)",
                test.len(),
                100.0 * stable,
                100.0 * marginal
            ),
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let ds = grid5();
    let mut trainer = Trainer::new(Mlp::with_shape(3, 32, 61, ds.standardizer).unwrap(), &ds, DESK).unwrap();
    trainer.run_until(1000).unwrap();
    let net = trainer.net();

    let baseline = label(&sample_uniform(&h, 100_000, 62), Origin::Uniform).unwrap();
    let base_share = class_histogram(&baseline).share(StabilityClass::Marginal);
    let ecfg = EnrichConfig {
        delta: 3.0,
        seed: 63,
        ..EnrichConfig::default()
    };
    let ni = ni_enrich(net, &h, &ecfg).unwrap();
    let ni_share = class_histogram(&ni.samples).share(StabilityClass::Marginal);
    let ni_ok = !ni.samples.is_empty() && ni_share >= 5.0 * base_share;

    let base: Vec<_> = ds.all().copied().collect();
    let dw = enrich_dw(&h, &base, &WalkConfig::default()).unwrap();
    let dw_ok = !dw.is_empty() && dw.iter().all(|s| (2.75..=3.25).contains(&s.zeta));
    let (lo, hi) = dw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.zeta), b.max(s.zeta)));

    let vi = vi_enrich(net, &h, &ecfg, &VerifyConfig::default()).unwrap();
    let vi_ok = (0.2..=0.7).contains(&vi.excluded_volume);
    timed(
        start,
        outcome(
            ni_ok && dw_ok && vi_ok,
            format!(
                "NI Marginal share {:.2}% of {} vs uniform {:.2}% (ratio {:.1}, need >= 5); \
                 DW {} points with zeta in [{lo:.4}, {hi:.4}] (need [2.75, 3.25]); \
                 VI excluded volume {:.3} (need [0.2, 0.7])",
                100.0 * ni_share,
                ni.samples.len(),
                100.0 * base_share,
                ni_share / base_share,
                dw.len(),
                vi.excluded_volume
            ),
        ),
    )
}

// ---------------------------------------------------------------- 7

fn median_of(cfg: &ExperimentConfig, split: &SplitDataset, metric: &str) -> f64 {
    let ctx = RunContext::new(cfg, split.training_view()).unwrap();
    let cells = cfg.grid.cells(cfg.variant).unwrap();
    let cell: Cell = if cells.len() == 1 { cells[0] } else { tune(cfg, &ctx).unwrap().selected };
    let out = assess(cfg, &ctx, &cell, split).unwrap();
    out.report.metric_summary(metric).unwrap().median
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let h = Hypercube::default();
    let test = build_test_set(&h, 11).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.size = 5;
    cfg.train.assessment_seeds = 10;
    let split_for = |cfg: &ExperimentConfig| SplitDataset::new(base_dataset(cfg).unwrap().1, test.clone());

    let grid_split = split_for(&cfg);
    let base = median_of(&cfg, &grid_split, "marginal");
    cfg.variant = Variant::Dw;
    let dw = median_of(&cfg, &grid_split, "marginal");
    cfg.variant = Variant::Ni;
    let ni = median_of(&cfg, &grid_split, "marginal");

    cfg.data.sampler = Sampler::Lhc;
    cfg.variant = Variant::Base;
    let lhc_split = split_for(&cfg);
    let lhc = median_of(&cfg, &lhc_split, "total");
    cfg.variant = Variant::Pr;
    let pr = median_of(&cfg, &lhc_split, "total");

    timed(
        start,
        outcome(
            dw < base && ni < base && pr <= lhc,
            format!(
                "median Marginal MSE: grid5 {base:.4}, +DW {dw:.4}, +NI {ni:.4} (need both < grid5); \
                 median total MSE: LHC5 {lhc:.4}, +PR {pr:.4} (need PR <= LHC5); 10 assessment seeds"
            ),
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.variant = Variant::Dw;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let first = run_pipeline(&cfg, a.path()).unwrap();
    let wall = t0.elapsed();
    let second = run_pipeline(&cfg, b.path()).unwrap();
    let mut differing = Vec::new();
    for rel in first.manifest.files.keys() {
        let x = std::fs::read(first.dir.join(rel)).unwrap();
        let y = std::fs::read(second.dir.join(rel)).unwrap();
        if x != y {
            differing.push(rel.clone());
        }
    }
    let identical = differing.is_empty() && first.manifest == second.manifest;
    let fast = wall < Duration::from_secs(600);
    outcome(
        identical && fast,
        format!(
            "desk pipeline (5^4 grid + DW, 3000 epochs, 3x32, 11^4 test grid, {} + {} seeds): \
             {} files, byte-identical rerun: {identical}{}; first run {:.1}s (limit 600s)",
            cfg.train.selection_seeds,
            cfg.train.assessment_seeds,
            first.manifest.files.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {})", differing.join(", ")) },
            wall.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "oracle exactness", criterion_1),
        (2, "autodiff correctness", criterion_2),
        (3, "MILP encoding fidelity", criterion_3),
        (4, "verification soundness", criterion_4),
        (5, "class imbalance", criterion_5),
        (6, "enrichment targeting", criterion_6),
        (7, "directional training gains", criterion_7),
        (8, "determinism and pipeline wall time", criterion_8),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(err, "criterion {n} ({name}): {tag}: {}", o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        let _ = writeln!(err, "failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
