//! Closing the loop between the trained network and the dataset: network
//! informed (NI) and verification informed (VI) enrichment, plus the
//! comparison of sampled against verified radii.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{linf, predicted_class, verify_corner, CertStatus, Certificate, Side, UnitBoxNet, VerifyConfig};
use crate::net::Mlp;
use crate::sampling::{label, Hypercube, LabeledSample, Origin};
use crate::seeding;
use crate::walks::TARGET_ZETA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnrichConfig {
    pub pool_size: usize,
    pub n_samples: usize,
    /// Half-width of the target band around 3 %, in percentage points.
    pub delta: f64,
    pub interrupt_epoch: usize,
    pub seed: u64,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        EnrichConfig {
            pool_size: 1_000_000,
            n_samples: 200,
            delta: 3.0,
            interrupt_epoch: 1000,
            seed: 0,
        }
    }
}

impl EnrichConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples > self.pool_size {
            return Err(Error::Argument("n_samples cannot exceed pool_size".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Argument("delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichStatus {
    Ok,
    /// No pool point qualified; the batch is empty.
    EmptyCandidates,
    /// Every verification failed, so the pool was used unfiltered.
    UnfilteredFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichBatch {
    pub samples: Vec<LabeledSample>,
    pub pool_size: usize,
    pub candidates: usize,
    pub status: EnrichStatus,
}

/// Uniform pool in unit-box coordinates.
pub fn unit_pool(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = seeding::rng(seed);
    (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect()
}

fn subsample(candidates: &[[f64; 4]], n: usize, seed: u64) -> Vec<[f64; 4]> {
    if candidates.len() <= n {
        return candidates.to_vec();
    }
    let mut rng = seeding::rng(seed);
    let mut idx = sample_indices(&mut rng, candidates.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| candidates[i]).collect()
}

fn finish(
    h: &Hypercube,
    candidates: Vec<[f64; 4]>,
    cfg: &EnrichConfig,
    origin: Origin,
    status: EnrichStatus,
) -> Result<EnrichBatch> {
    let n_cand = candidates.len();
    if n_cand == 0 {
        warn!("{origin:?} enrichment found no candidates; continuing without new samples");
        return Ok(EnrichBatch {
            samples: Vec::new(),
            pool_size: cfg.pool_size,
            candidates: 0,
            status: EnrichStatus::EmptyCandidates,
        });
    }
    let chosen = subsample(&candidates, cfg.n_samples, seeding::derive(cfg.seed, "subsample"));
    let physical: Vec<[f64; 4]> = chosen.iter().map(|u| h.denormalize(u)).collect();
    Ok(EnrichBatch {
        samples: label(&physical, origin)?,
        pool_size: cfg.pool_size,
        candidates: n_cand,
        status,
    })
}

/// Keeps pool points the network places within `delta` of 3 % and labels a
/// uniform subsample of them with the oracle.
pub fn ni_enrich(net: &Mlp, h: &Hypercube, cfg: &EnrichConfig) -> Result<EnrichBatch> {
    cfg.validate()?;
    let pool = unit_pool(cfg.pool_size, seeding::derive(cfg.seed, "pool"));
    let physical: Vec<[f64; 4]> = pool.iter().map(|u| h.denormalize(u)).collect();
    let preds = net.predict_many(&physical);
    let (lo, hi) = (TARGET_ZETA - cfg.delta, TARGET_ZETA + cfg.delta);
    let candidates: Vec<[f64; 4]> = pool
        .iter()
        .zip(&preds)
        .filter(|(_, &p)| p >= lo && p <= hi)
        .map(|(u, _)| *u)
        .collect();
    finish(h, candidates, cfg, Origin::Ni, EnrichStatus::Ok)
}

/// A certified infinity-norm ball around an anchor in unit coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub side: Side,
    /// The whole box is certified (no crossing exists).
    pub whole_box: bool,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.whole_box || linf(x, &self.anchor) < self.radius
    }

    fn bounds(&self) -> ([f64; 4], [f64; 4]) {
        if self.whole_box {
            return ([0.0; 4], [1.0; 4]);
        }
        (
            std::array::from_fn(|i| (self.anchor[i] - self.radius).max(0.0)),
            std::array::from_fn(|i| (self.anchor[i] + self.radius).min(1.0)),
        )
    }
}

/// Turns a certificate into an exclusion region, if it certifies anything.
pub fn region_from(cert: &Certificate) -> Option<Region> {
    let side = cert.side?;
    let (radius, whole_box) = match cert.status {
        CertStatus::Certified => (cert.epsilon_star, false),
        CertStatus::InfeasibleInBox => (1.0, true),
        // the proven lower bound is still a sound radius
        CertStatus::SolverLimit => (cert.lower_bound, false),
        _ => return None,
    };
    (whole_box || radius > 0.0).then(|| Region {
        anchor: cert.anchor.clone(),
        radius,
        side,
        whole_box,
    })
}

/// Exact volume of the union of regions within the unit box.
pub fn union_volume(regions: &[Region]) -> f64 {
    if regions.is_empty() {
        return 0.0;
    }
    let boxes: Vec<([f64; 4], [f64; 4])> = regions.iter().map(Region::bounds).collect();
    let mut cuts: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let mut v: Vec<f64> = vec![0.0, 1.0];
            for (lo, hi) in &boxes {
                v.push(lo[i]);
                v.push(hi[i]);
            }
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    for c in &mut cuts {
        c.retain(|v| (0.0..=1.0).contains(v));
    }
    let mut total = 0.0;
    let mids: Vec<Vec<(f64, f64)>> = cuts
        .iter()
        .map(|c| c.windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).collect())
        .collect();
    for &(m0, w0) in &mids[0] {
        for &(m1, w1) in &mids[1] {
            for &(m2, w2) in &mids[2] {
                for &(m3, w3) in &mids[3] {
                    let p = [m0, m1, m2, m3];
                    if boxes.iter().any(|(lo, hi)| (0..4).all(|i| p[i] > lo[i] && p[i] < hi[i])) {
                        total += w0 * w1 * w2 * w3;
                    }
                }
            }
        }
    }
    total
}

/// Certificates for the 16 corners, in corner order.
pub fn verify_corners(net: &UnitBoxNet, delta: f64, vcfg: &VerifyConfig) -> Result<Vec<Certificate>> {
    crate::milp::unit_corners()
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let class = predicted_class(net, c)?;
            let cfg = VerifyConfig {
                seed: seeding::derive_index(vcfg.seed, i as u64),
                ..*vcfg
            };
            verify_corner(net, c, class, delta, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViBatch {
    pub batch: EnrichBatch,
    pub certificates: Vec<Certificate>,
    pub regions: Vec<Region>,
    /// Share of the unit box covered by the certified regions.
    pub excluded_volume: f64,
}

/// Certifies regions around the hypercube corners, discards pool points
/// inside them and labels a uniform subsample of the rest.
pub fn vi_enrich(net: &Mlp, h: &Hypercube, cfg: &EnrichConfig, vcfg: &VerifyConfig) -> Result<ViBatch> {
    cfg.validate()?;
    let unet = UnitBoxNet::from_mlp(net, h)?;
    let certificates = verify_corners(&unet, cfg.delta, vcfg)?;
    let attempted: Vec<&Certificate> = certificates.iter().filter(|c| c.side.is_some()).collect();
    let all_failed = !attempted.is_empty() && attempted.iter().all(|c| c.status == CertStatus::SolverLimit);
    let regions: Vec<Region> = if all_failed {
        warn!("every corner verification hit the solver limit; VI falls back to unfiltered sampling");
        Vec::new()
    } else {
        certificates.iter().filter_map(region_from).collect()
    };
    let pool = unit_pool(cfg.pool_size, seeding::derive(cfg.seed, "pool"));
    let candidates: Vec<[f64; 4]> = pool
        .into_iter()
        .filter(|u| !regions.iter().any(|r| r.contains(u)))
        .collect();
    let status = if all_failed {
        EnrichStatus::UnfilteredFallback
    } else {
        EnrichStatus::Ok
    };
    let batch = finish(h, candidates, cfg, Origin::Vi, status)?;
    Ok(ViBatch {
        batch,
        excluded_volume: union_volume(&regions),
        certificates,
        regions,
    })
}

/// Smallest distance from `anchor` among the first `n` seeded uniform samples
/// whose prediction crosses `threshold`; `+inf` when none does.
pub fn epsilon_statistical(net: &UnitBoxNet, anchor: &[f64], side: Side, threshold: f64, n: usize, seed: u64) -> f64 {
    epsilon_statistical_schedule(net, anchor, side, threshold, &[n], seed)[0]
}

/// Running minimum of [`epsilon_statistical`] at each count of `schedule`
/// (ascending), computed in a single pass over one stream.
pub fn epsilon_statistical_schedule(
    net: &UnitBoxNet,
    anchor: &[f64],
    side: Side,
    threshold: f64,
    schedule: &[usize],
    seed: u64,
) -> Vec<f64> {
    let d = anchor.len();
    let mut rng = seeding::rng(seed);
    let mut best = f64::INFINITY;
    let mut out = Vec::with_capacity(schedule.len());
    let mut drawn = 0usize;
    let mut p = vec![0.0; d];
    for &n in schedule {
        while drawn < n {
            p.iter_mut().for_each(|v| *v = rng.gen::<f64>());
            drawn += 1;
            // only points that would improve the minimum need a network call
            let dist = linf(&p, anchor);
            if dist < best && side.crosses(net.predict(&p), threshold) {
                best = dist;
            }
        }
        out.push(best);
    }
    out
}

/// `1, 2, 5, 10, 20, 50, ...` up to and including `max`.
pub fn log_schedule(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let v = m * decade;
            if v > max {
                break 'outer;
            }
            out.push(v);
        }
        decade *= 10;
    }
    if out.last() != Some(&max) {
        out.push(max);
    }
    out
}

/// Linear-interpolation percentile of sorted values (`q` in percent).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const PERCENTILES: [f64; 7] = [0.0, 10.0, 25.0, 50.0, 75.0, 90.0, 100.0];

/// Percentile summary of `eps_stat / eps_verified` at one sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub corner: usize,
    pub n: usize,
    pub percentiles: [f64; 7],
}

/// Compares sampled radii against the verified ones for each certified
/// corner, replicated over `seeds` independent streams.
pub fn compare_stat_vs_verified(
    net: &UnitBoxNet,
    certificates: &[(usize, Certificate)],
    schedule: &[usize],
    seeds: usize,
    master_seed: u64,
) -> Vec<RatioRow> {
    let mut rows = Vec::new();
    for (corner, cert) in certificates {
        if cert.status != CertStatus::Certified || cert.epsilon_star <= 0.0 {
            continue;
        }
        let Some(side) = cert.side else { continue };
        let corner_seed = seeding::derive_index(master_seed, *corner as u64);
        let runs: Vec<Vec<f64>> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                epsilon_statistical_schedule(
                    net,
                    &cert.anchor,
                    side,
                    cert.threshold,
                    schedule,
                    seeding::derive_index(corner_seed, s as u64),
                )
            })
            .collect();
        for (k, &n) in schedule.iter().enumerate() {
            let mut ratios: Vec<f64> = runs.iter().map(|r| r[k] / cert.epsilon_star).collect();
            ratios.sort_by(f64::total_cmp);
            rows.push(RatioRow {
                corner: *corner,
                n,
                percentiles: PERCENTILES.map(|q| percentile(&ratios, q)),
            });
        }
    }
    rows
}

pub fn ratio_rows_to_csv(rows: &[RatioRow]) -> String {
    let mut s = String::from("corner,n,p0,p10,p25,p50,p75,p90,p100\n");
    for r in rows {
        let _ = write!(s, "{},{}", r.corner, r.n);
        for p in r.percentiles {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
    }
    s
}

pub fn write_ratio_csv(path: &Path, rows: &[RatioRow]) -> Result<()> {
    std::fs::write(path, ratio_rows_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Standardizer;
    use ndarray::{array, Array1, Array2};

    fn constant_net(value: f64) -> Mlp {
        Mlp::from_parts(vec![Array2::zeros((1, 4))], vec![array![value]], Standardizer::identity()).unwrap()
    }

    fn small_cfg() -> EnrichConfig {
        EnrichConfig {
            pool_size: 5000,
            n_samples: 50,
            delta: 3.0,
            interrupt_epoch: 10,
            seed: 3,
        }
    }

    #[test]
    fn ni_with_constant_networks() {
        let h = Hypercube::default();
        let empty = ni_enrich(&constant_net(10.0), &h, &small_cfg()).unwrap();
        assert!(empty.samples.is_empty());
        assert_eq!(empty.status, EnrichStatus::EmptyCandidates);
        let all = ni_enrich(&constant_net(3.0), &h, &small_cfg()).unwrap();
        assert_eq!(all.candidates, 5000);
        assert_eq!(all.samples.len(), 50);
        assert!(all.samples.iter().all(|s| s.origin == Origin::Ni && h.contains(&s.x)));
        let again = ni_enrich(&constant_net(3.0), &h, &small_cfg()).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn vi_with_a_constant_network_is_empty() {
        let h = Hypercube::default();
        let b = vi_enrich(&constant_net(10.0), &h, &small_cfg(), &VerifyConfig::default()).unwrap();
        assert!(b.certificates.iter().all(|c| c.status == CertStatus::InfeasibleInBox));
        assert_eq!(b.excluded_volume, 1.0);
        assert!(b.batch.samples.is_empty());
    }

    #[test]
    fn vi_without_regions_is_a_plain_subsample() {
        // every corner prediction sits in the marginal band, so nothing is verified
        let h = Hypercube::default();
        let b = vi_enrich(&constant_net(3.0), &h, &small_cfg(), &VerifyConfig::default()).unwrap();
        assert!(b.regions.is_empty());
        assert_eq!(b.excluded_volume, 0.0);
        assert_eq!(b.batch.candidates, 5000);
        assert_eq!(b.batch.samples.len(), 50);
    }

    #[test]
    fn union_volume_examples() {
        let r = |a: [f64; 4], radius: f64| Region {
            anchor: a.to_vec(),
            radius,
            side: Side::Stable,
            whole_box: false,
        };
        assert_eq!(union_volume(&[]), 0.0);
        assert!((union_volume(&[r([0.0; 4], 0.5)]) - 0.0625).abs() < 1e-12);
        assert!((union_volume(&[r([0.0; 4], 0.5), r([1.0; 4], 0.5)]) - 0.125).abs() < 1e-12);
        assert!((union_volume(&[r([0.0; 4], 0.5), r([0.0; 4], 0.25)]) - 0.0625).abs() < 1e-12);
        assert!((union_volume(&[r([0.0; 4], 2.0)]) - 1.0).abs() < 1e-12);
        // overlapping boxes along one axis
        let v = union_volume(&[r([0.0, 0.0, 0.0, 0.0], 0.6), r([1.0, 0.0, 0.0, 0.0], 0.6)]);
        assert!((v - 0.6f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn statistical_radius_is_nested_and_bounded_by_the_verified_one() {
        let ramp = UnitBoxNet::from_parts(vec![array![[-7.0, 0.0, 0.0, 0.0]]], vec![array![10.0]]).unwrap();
        let anchor = [0.0; 4];
        let sched = log_schedule(10_000);
        let series = epsilon_statistical_schedule(&ramp, &anchor, Side::Stable, 3.25, &sched, 9);
        for w in series.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for (&n, &v) in sched.iter().zip(&series) {
            assert_eq!(v, epsilon_statistical(&ramp, &anchor, Side::Stable, 3.25, n, 9));
            assert!(v >= 6.75 / 7.0 - 1e-12);
        }
        let never = UnitBoxNet::from_parts(vec![Array2::zeros((1, 4))], vec![Array1::from(vec![10.0])]).unwrap();
        assert_eq!(epsilon_statistical(&never, &anchor, Side::Stable, 3.25, 100, 1), f64::INFINITY);
    }

    #[test]
    fn schedule_and_percentiles() {
        assert_eq!(log_schedule(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(log_schedule(30), vec![1, 2, 5, 10, 20, 30]);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 25.0), 2.0);
        assert_eq!(percentile(&[1.0, 2.0], 50.0), 1.5);
    }

    #[test]
    fn ratio_table_is_at_least_one() {
        let ramp = UnitBoxNet::from_parts(vec![array![[-7.0, 0.0, 0.0, 0.0]]], vec![array![10.0]]).unwrap();
        let cert = crate::milp::verify_anchor(&ramp, &[0.0; 4], Side::Stable, 0.25, &VerifyConfig::default()).unwrap();
        let rows = compare_stat_vs_verified(&ramp, &[(0, cert)], &log_schedule(1000), 20, 4);
        assert_eq!(rows.len(), log_schedule(1000).len());
        assert!(rows.iter().all(|r| r.percentiles[0] >= 1.0 - 1e-6));
        let csv = ratio_rows_to_csv(&rows);
        assert!(csv.starts_with("corner,n,p0,p10,p25,p50,p75,p90,p100\n"));
    }
}
