//! Trains a 3x32 surrogate on the 5^4 grid, certifies all 16 corners and
//! compares sampled radii against the verified ones at the two corners
//! `[0, -0.5, 0, 0]` and `[0, -0.5, 0, 50]`.
//!
//! `cargo run -p zetaloop --example verify_corners -- [replicates]`

use std::time::Instant;

use zetaloop::dataset::Dataset;
use zetaloop::loops::{compare_stat_vs_verified, log_schedule, region_from, union_volume, verify_corners, Region};
use zetaloop::milp::{UnitBoxNet, VerifyConfig};
use zetaloop::net::{train, Mlp, TrainConfig};
use zetaloop::sampling::{label, sample_grid, Hypercube, Origin};

fn main() -> zetaloop::Result<()> {
    let replicates: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let h = Hypercube::default();
    let samples = label(&sample_grid(&h, 5)?, Origin::Grid)?;
    let ds = Dataset::from_samples(&samples, 1)?;
    let t = Instant::now();
    let net = Mlp::with_shape(3, 32, 7, ds.standardizer)?;
    let cfg = TrainConfig {
        l0: 0.01,
        gamma: 0.999,
        epochs: 3000,
        alpha_j: 0.0,
        seed: 7,
    };
    let rep = train(net, &ds, cfg)?;
    println!("trained in {:.1?}, best epoch {}", t.elapsed(), rep.best_epoch);

    let unet = UnitBoxNet::from_mlp(&rep.best, &h)?;
    let t = Instant::now();
    let certs = verify_corners(&unet, 0.25, &VerifyConfig::default())?;
    for (i, c) in certs.iter().enumerate() {
        println!(
            "corner {i:2} {:?} pred {:7.3} eps {:.4} nodes {}",
            c.status, c.anchor_prediction, c.epsilon_star, c.nodes
        );
    }
    let regions: Vec<Region> = certs.iter().filter_map(region_from).collect();
    println!("verified in {:.1?}, excluded volume {:.4}", t.elapsed(), union_volume(&regions));

    let t = Instant::now();
    let pairs: Vec<_> = [0usize, 8].iter().map(|&i| (i, certs[i].clone())).collect();
    let rows = compare_stat_vs_verified(&unet, &pairs, &log_schedule(1_000_000), replicates, 1);
    println!("corner n p0 p50 p100");
    for r in &rows {
        println!("{} {} {:.4} {:.4} {:.4}", r.corner, r.n, r.percentiles[0], r.percentiles[3], r.percentiles[6]);
    }
    println!("compared in {:.1?}", t.elapsed());
    Ok(())
}
