use super::*;
use crate::dataset::Dataset;
use crate::sampling::{label, sample_uniform, Hypercube, Origin};
use approx::assert_abs_diff_eq;
use ndarray::array;
use rand::Rng;

fn affine_net() -> Mlp {
    Mlp::from_parts(vec![array![[1.0, 0.0, 0.0, 0.0]]], vec![array![0.0]], Standardizer::identity()).unwrap()
}

fn abs_net() -> Mlp {
    Mlp::from_parts(
        vec![array![[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]], array![[1.0, 1.0]]],
        vec![array![0.0, 0.0], array![0.0]],
        Standardizer::identity(),
    )
    .unwrap()
}

fn random_net(seed: u64) -> Mlp {
    let mut net = Mlp::new(&[4, 12, 10, 1], seed, Standardizer::identity()).unwrap();
    let mut rng = seeding::rng(seed ^ 0xb1a5);
    let (_, bs) = net.params_mut();
    for b in bs.iter_mut() {
        b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    net
}

fn random_batch(n: usize, seed: u64) -> Batch {
    let mut rng = seeding::rng(seed);
    Batch {
        x: Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0)),
        y: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
        grad: Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0)),
    }
}

fn small_dataset(n: usize, seed: u64) -> Dataset {
    let cube = Hypercube::default();
    let xs = sample_uniform(&cube, n, seed);
    let samples = label(&xs, Origin::Uniform).unwrap();
    Dataset::from_samples(&samples, seed + 1).unwrap()
}

/// Smallest distance of any pre-activation to zero; used to stay away from kinks.
fn kink_margin(net: &Mlp, x: &[f64]) -> f64 {
    let xm = Array2::from_shape_vec((1, 4), x.to_vec()).unwrap();
    let last = net.weights.len() - 1;
    let mut z = xm;
    let mut margin = f64::INFINITY;
    for k in 0..last {
        let mut zh = z.dot(&net.weights[k].t());
        zh += &net.biases[k];
        margin = zh.iter().fold(margin, |m, v| m.min(v.abs()));
        z = zh.mapv(|v| v.max(0.0));
    }
    margin
}

#[test]
fn affine_layer_slices_the_first_input() {
    let net = affine_net();
    assert_eq!(net.forward(&[0.7, 3.0, -1.0, 2.0]).unwrap(), 0.7);
    assert_eq!(net.input_jacobian(&[0.3, 0.0, 0.0, 9.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn two_relus_make_an_absolute_value() {
    let net = abs_net();
    for v in [-2.5, -0.1, 0.0, 0.4, 3.0] {
        assert_eq!(net.forward(&[v, 1.0, 1.0, 1.0]).unwrap(), v.abs());
    }
    assert_eq!(net.input_jacobian(&[0.0, 0.0, 0.0, 0.0]).unwrap(), vec![0.0; 4]);
}

#[test]
fn dead_region_has_zero_jacobian() {
    let net = Mlp::from_parts(
        vec![array![[1.0, 1.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0]], array![[2.0, -3.0]]],
        vec![array![-10.0, -10.0], array![0.5]],
        Standardizer::identity(),
    )
    .unwrap();
    assert_eq!(net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.5);
    assert_eq!(net.input_jacobian(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![0.0; 4]);
}

#[test]
fn non_finite_input_is_rejected() {
    let net = affine_net();
    assert!(matches!(net.forward(&[f64::NAN, 0.0, 0.0, 0.0]), Err(Error::Numeric(_))));
    assert!(net.forward(&[0.0; 3]).is_err());
}

#[test]
fn batch_forward_matches_pointwise() {
    let net = random_net(3);
    let b = random_batch(50, 4);
    let out = net.forward_batch(b.x.view());
    for j in 0..50 {
        let p = net.forward(b.x.row(j).as_slice().unwrap()).unwrap();
        assert_abs_diff_eq!(out[j], p, epsilon = 1e-12);
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let net = random_net(7);
    let mut rng = seeding::rng(11);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 100 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if kink_margin(&net, &x) < 1e-3 {
            continue;
        }
        let jac = net.input_jacobian(&x).unwrap();
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (net.forward(&xp).unwrap() - net.forward(&xm).unwrap()) / (2.0 * h);
            let rel = (fd - jac[i]).abs() / jac[i].abs().max(1e-3);
            assert!(rel < 1e-5, "x={x:?} i={i} fd={fd} ad={}", jac[i]);
        }
        checked += 1;
    }
}

#[test]
fn outputs_are_affine_within_an_activation_region() {
    let net = random_net(21);
    let mut rng = seeding::rng(22);
    let mut checked = 0;
    while checked < 50 {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<f64> = (0..4).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
        let b: Vec<f64> = a.iter().zip(&d).map(|(a, d)| a + d).collect();
        let m: Vec<f64> = a.iter().zip(&d).map(|(a, d)| a + 0.5 * d).collect();
        if kink_margin(&net, &a) < 0.05 {
            continue;
        }
        let (fa, fb, fm) = (net.forward(&a).unwrap(), net.forward(&b).unwrap(), net.forward(&m).unwrap());
        assert_abs_diff_eq!(fm, 0.5 * (fa + fb), epsilon = 1e-12);
        checked += 1;
    }
}

#[test]
fn loss_examples() {
    let net = affine_net();
    let perfect = Batch {
        x: array![[0.5, 0.0, 0.0, 0.0], [-1.0, 2.0, 0.0, 0.0]],
        y: array![0.5, -1.0],
        grad: array![[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
    };
    assert_eq!(net.loss(&perfect, true).unwrap(), Losses { data: 0.0, jacobian: 0.0 });

    let off = Batch {
        x: array![[3.0, 0.0, 0.0, 0.0]],
        y: array![1.0],
        grad: array![[1.0, 0.0, 0.0, 0.0]],
    };
    let l = net.loss(&off, true).unwrap();
    assert_eq!(l, Losses { data: 4.0, jacobian: 0.0 });
    assert_eq!(l.objective(0.0), 4.0);
    let (l2, _) = net.loss_and_grad(&off, 0.0).unwrap();
    assert_eq!(l2.objective(0.0), l.data);

    let empty = Batch {
        x: Array2::zeros((0, 4)),
        y: Array1::zeros(0),
        grad: Array2::zeros((0, 4)),
    };
    assert!(matches!(net.loss(&empty, false), Err(Error::Argument(_))));
}

fn objective(net: &Mlp, b: &Batch, alpha: f64) -> f64 {
    net.loss(b, true).unwrap().objective(alpha)
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let alpha = 0.7;
    for seed in 0..20u64 {
        let net = random_net(100 + seed);
        let b = random_batch(16, 200 + seed);
        let (_, g) = net.loss_and_grad(&b, alpha).unwrap();
        let h = 1e-6;
        let mut rng = seeding::rng(300 + seed);
        for _ in 0..10 {
            let k = rng.gen_range(0..net.weights.len());
            let (r, c) = (rng.gen_range(0..net.weights[k].nrows()), rng.gen_range(0..net.weights[k].ncols()));
            let mut p = net.clone();
            p.weights[k][[r, c]] += h;
            let mut m = net.clone();
            m.weights[k][[r, c]] -= h;
            let fd = (objective(&p, &b, alpha) - objective(&m, &b, alpha)) / (2.0 * h);
            let ad = g.weights[k][[r, c]];
            let rel = (fd - ad).abs() / ad.abs().max(1e-2);
            assert!(rel < 1e-4, "seed {seed} W{k}[{r},{c}] fd={fd} ad={ad}");

            let r = rng.gen_range(0..net.biases[k].len());
            let mut p = net.clone();
            p.biases[k][r] += h;
            let mut m = net.clone();
            m.biases[k][r] -= h;
            let fd = (objective(&p, &b, alpha) - objective(&m, &b, alpha)) / (2.0 * h);
            let ad = g.biases[k][r];
            let rel = (fd - ad).abs() / ad.abs().max(1e-2);
            assert!(rel < 1e-4, "seed {seed} b{k}[{r}] fd={fd} ad={ad}");
        }
    }
}

#[test]
fn single_layer_jacobian_gradient() {
    let net = Mlp::from_parts(vec![array![[0.3, -0.2, 0.5, 1.0]]], vec![array![0.1]], Standardizer::identity()).unwrap();
    let b = random_batch(5, 1);
    let (_, g) = net.loss_and_grad(&b, 2.0).unwrap();
    let h = 1e-6;
    for i in 0..4 {
        let mut p = net.clone();
        p.weights[0][[0, i]] += h;
        let mut m = net.clone();
        m.weights[0][[0, i]] -= h;
        let fd = (objective(&p, &b, 2.0) - objective(&m, &b, 2.0)) / (2.0 * h);
        assert_abs_diff_eq!(fd, g.weights[0][[0, i]], epsilon = 1e-6);
    }
}

#[test]
fn init_is_seeded_glorot_uniform() {
    let (w1, b1) = init_params(&[64, 64, 1], 5).unwrap();
    let (w2, b2) = init_params(&[64, 64, 1], 5).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(b1, b2);
    assert!(b1.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    let (w3, _) = init_params(&[64, 64, 1], 6).unwrap();
    assert_ne!(w1, w3);

    let target = 2.0 / 128.0;
    let w = &w1[0];
    let mean = w.mean().unwrap();
    let var = w.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
    assert!((var / target - 1.0).abs() < 0.1, "variance {var} vs {target}");
    let lim = (6.0f64 / 128.0).sqrt();
    assert!(w.iter().all(|v| v.abs() <= lim));
    assert!(init_params(&[4, 0, 1], 0).is_err());
    assert!(init_params(&[4, 3, 2], 0).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig {
        l0: 0.02,
        gamma: 0.99,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.learning_rate(0), 0.02);
    assert_abs_diff_eq!(cfg.learning_rate(100) / 0.02, 0.366, epsilon = 1e-3);
    let flat = TrainConfig { gamma: 1.0, ..cfg };
    assert_eq!(flat.learning_rate(2999), 0.02);
    assert!(TrainConfig { gamma: 0.0, ..cfg }.validate().is_err());
    assert!(TrainConfig { gamma: 1.01, ..cfg }.validate().is_err());
    assert!(TrainConfig { l0: 0.0, ..cfg }.validate().is_err());
    assert!(TrainConfig { alpha_j: -1.0, ..cfg }.validate().is_err());
}

#[test]
fn training_reduces_loss_and_checkpoints_best() {
    let data = small_dataset(120, 9);
    let net = Mlp::with_shape(2, 16, 1, data.standardizer).unwrap();
    let cfg = TrainConfig {
        l0: 0.01,
        gamma: 0.998,
        epochs: 300,
        alpha_j: 0.1,
        seed: 1,
    };
    let rep = train(net, &data, cfg).unwrap();
    assert_eq!(rep.history.len(), 300);
    let first = rep.history[0].train.data;
    let last = rep.final_losses().unwrap().train.data;
    assert!(last < 0.5 * first, "{first} -> {last}");
    let min_val = rep
        .history
        .iter()
        .map(|e| e.val.objective(cfg.alpha_j))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(rep.best_val_objective, min_val);
    assert_eq!(rep.history[rep.best_epoch].val.objective(cfg.alpha_j), min_val);
    assert!(rep.best_val_objective <= rep.final_losses().unwrap().val.objective(cfg.alpha_j));
    let val = Batch::from_samples(&data.val, &data.standardizer);
    assert_eq!(rep.best.loss(&val, true).unwrap().objective(cfg.alpha_j), min_val);
}

#[test]
fn training_is_deterministic() {
    let data = small_dataset(60, 2);
    let cfg = TrainConfig {
        epochs: 40,
        alpha_j: 0.5,
        ..TrainConfig::default()
    };
    let run = || {
        let net = Mlp::with_shape(2, 8, 3, data.standardizer).unwrap();
        train(net, &data, cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.best, b.best);
}

#[test]
fn divergence_reports_epoch() {
    let data = small_dataset(40, 3);
    let cfg = TrainConfig {
        l0: 1e300,
        gamma: 1.0,
        epochs: 50,
        alpha_j: 0.0,
        seed: 0,
    };
    let net = Mlp::with_shape(2, 8, 0, data.standardizer).unwrap();
    match train(net, &data, cfg) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|r| r.best_epoch)),
    }
}

#[test]
fn resume_continues_the_epoch_counter() {
    let data = small_dataset(60, 4);
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let net = Mlp::with_shape(1, 8, 3, data.standardizer).unwrap();
    let mut t = Trainer::new(net, &data, cfg).unwrap();
    t.run_until(10).unwrap();
    assert_eq!(t.epoch(), 10);
    let more = small_dataset(30, 5);
    let enriched = data.enrich(&more.all().cloned().collect::<Vec<_>>()).unwrap();
    let before = t.net().predict(&[1.0, 0.1, 30.0, 20.0]);
    t.replace_data(&enriched).unwrap();
    assert_abs_diff_eq!(t.net().predict(&[1.0, 0.1, 30.0, 20.0]), before, epsilon = 1e-9);
    let rep = t.finish().unwrap();
    assert_eq!(rep.history.len(), 30);
    assert!(rep.best_epoch >= 10);
}

#[test]
fn restandardize_preserves_the_function() {
    let data = small_dataset(50, 6);
    let mut net = Mlp::with_shape(2, 10, 8, data.standardizer).unwrap();
    let x = [1.2, -0.1, 40.0, 10.0];
    let before = net.predict(&x);
    let other = small_dataset(50, 99).standardizer;
    net.restandardize(other);
    assert_eq!(net.standardizer, other);
    assert_abs_diff_eq!(net.predict(&x), before, epsilon = 1e-9);
}

#[test]
fn model_file_round_trip() {
    let net = random_net(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let meta = ModelMeta {
        seed: 5,
        config: TrainConfig::default(),
        best_epoch: 17,
    };
    net.save(&path, Some(&meta)).unwrap();
    let (back, m) = Mlp::load(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(m, Some(meta));
}
