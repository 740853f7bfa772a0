//! Train/validation splitting, standardization and dataset files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{Hypercube, LabeledSample, StabilityClass};
use crate::seeding;

pub const CSV_HEADER: &str = "x1,x2,x3,x4,zeta,g1,g2,g3,g4,class,origin";

/// Per-feature affine standardization fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mu_x: [f64; 4],
    pub sigma_x: [f64; 4],
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mu_x: [0.0; 4],
            sigma_x: [1.0; 4],
            mu_y: 0.0,
            sigma_y: 1.0,
        }
    }

    pub fn x_to_std(&self, x: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| (x[i] - self.mu_x[i]) / self.sigma_x[i])
    }

    pub fn x_from_std(&self, x: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| x[i] * self.sigma_x[i] + self.mu_x[i])
    }

    pub fn y_to_std(&self, y: f64) -> f64 {
        (y - self.mu_y) / self.sigma_y
    }

    pub fn y_from_std(&self, y: f64) -> f64 {
        y * self.sigma_y + self.mu_y
    }

    /// Chain rule for `d y_std / d x_std`.
    pub fn transform_gradient(&self, grad_raw: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| grad_raw[i] * self.sigma_x[i] / self.sigma_y)
    }
}

/// Fits means and population standard deviations on `train`.
pub fn fit_standardizer(train: &[LabeledSample]) -> Result<Standardizer> {
    if train.is_empty() {
        return Err(Error::DegenerateData("empty training split".into()));
    }
    let n = train.len() as f64;
    let mut mu_x = [0.0; 4];
    let mut mu_y = 0.0;
    for s in train {
        for i in 0..4 {
            mu_x[i] += s.x[i];
        }
        mu_y += s.zeta;
    }
    mu_x.iter_mut().for_each(|m| *m /= n);
    mu_y /= n;
    let mut var_x = [0.0; 4];
    let mut var_y = 0.0;
    for s in train {
        for i in 0..4 {
            var_x[i] += (s.x[i] - mu_x[i]).powi(2);
        }
        var_y += (s.zeta - mu_y).powi(2);
    }
    let sigma_x = var_x.map(|v| (v / n).sqrt());
    let sigma_y = (var_y / n).sqrt();
    if let Some(i) = sigma_x.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateData(format!("input {i} has zero variance")));
    }
    if !(sigma_y > 0.0) {
        return Err(Error::DegenerateData("output has zero variance".into()));
    }
    Ok(Standardizer {
        mu_x,
        sigma_x,
        mu_y,
        sigma_y,
    })
}

fn shuffled_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng(seed));
    let n_train = n * 4 / 5;
    let val = idx.split_off(n_train);
    (idx, val)
}

/// Seeded 80/20 split (train gets the floor of 80%).
pub fn split(samples: &[LabeledSample], seed: u64) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if samples.len() < 5 {
        return Err(Error::Argument(format!("need at least 5 samples to split, got {}", samples.len())));
    }
    let (tr, va) = shuffled_split(samples.len(), seed);
    Ok((tr.iter().map(|&i| samples[i]).collect(), va.iter().map(|&i| samples[i]).collect()))
}

/// The part of a dataset that training, enrichment and model selection may see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub split_seed: u64,
    pub standardizer: Standardizer,
    /// Number of enrichment batches merged so far.
    pub rounds: u64,
}

impl Dataset {
    pub fn from_samples(samples: &[LabeledSample], split_seed: u64) -> Result<Self> {
        let (train, val) = split(samples, split_seed)?;
        let standardizer = fit_standardizer(&train)?;
        Ok(Dataset {
            train,
            val,
            split_seed,
            standardizer,
            rounds: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &LabeledSample> {
        self.train.iter().chain(self.val.iter())
    }

    /// Appends labeled samples, splitting them 80/20 with the next stream
    /// below the split seed, and refits the standardizer on the new train split.
    pub fn enrich(&self, new_samples: &[LabeledSample]) -> Result<Dataset> {
        let round = self.rounds + 1;
        let (tr, va) = shuffled_split(new_samples.len(), seeding::derive_index(self.split_seed, round));
        let mut train = self.train.clone();
        let mut val = self.val.clone();
        train.extend(tr.iter().map(|&i| new_samples[i]));
        val.extend(va.iter().map(|&i| new_samples[i]));
        let standardizer = fit_standardizer(&train)?;
        Ok(Dataset {
            train,
            val,
            split_seed: self.split_seed,
            standardizer,
            rounds: if new_samples.is_empty() { self.rounds } else { round },
        })
    }
}

/// Held-out test samples. Only model assessment reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVault {
    samples: Vec<LabeledSample>,
}

impl TestVault {
    pub fn seal(samples: Vec<LabeledSample>) -> Self {
        TestVault { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn open(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn histogram(&self) -> ClassHistogram {
        class_histogram(&self.samples)
    }
}

/// A training view plus its sealed test set.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    data: Dataset,
    test: TestVault,
}

impl SplitDataset {
    pub fn new(data: Dataset, test: TestVault) -> Self {
        SplitDataset { data, test }
    }

    pub fn training_view(&self) -> &Dataset {
        &self.data
    }

    pub fn test(&self) -> &TestVault {
        &self.test
    }

    pub fn enrich(&self, new_samples: &[LabeledSample]) -> Result<SplitDataset> {
        Ok(SplitDataset {
            data: self.data.enrich(new_samples)?,
            test: self.test.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    /// Counts in [`StabilityClass::ALL`] order.
    pub counts: [usize; 5],
    pub shares: [f64; 5],
    pub total: usize,
}

impl ClassHistogram {
    pub fn count(&self, c: StabilityClass) -> usize {
        self.counts[c.index()]
    }

    pub fn share(&self, c: StabilityClass) -> f64 {
        self.shares[c.index()]
    }
}

pub fn class_histogram(samples: &[LabeledSample]) -> ClassHistogram {
    let mut counts = [0usize; 5];
    for s in samples {
        counts[s.class.index()] += 1;
    }
    let total = samples.len();
    let shares = counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
    ClassHistogram { counts, shares, total }
}

fn sample_row(s: &LabeledSample) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        s.x[0], s.x[1], s.x[2], s.x[3], s.zeta, s.grad[0], s.grad[1], s.grad[2], s.grad[3], s.class, s.origin
    )
}

fn parse_row(line: &str, lineno: usize) -> Result<LabeledSample> {
    let cols: Vec<&str> = line.trim_end().split(',').collect();
    if cols.len() != 11 {
        return Err(Error::Parse(format!("line {lineno}: expected 11 columns, got {}", cols.len())));
    }
    let num = |i: usize| -> Result<f64> {
        cols[i]
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("line {lineno}, column {}: {e}", i + 1)))
    };
    Ok(LabeledSample {
        x: [num(0)?, num(1)?, num(2)?, num(3)?],
        zeta: num(4)?,
        grad: [num(5)?, num(6)?, num(7)?, num(8)?],
        class: cols[9].parse()?,
        origin: cols[10].parse()?,
    })
}

pub fn samples_to_csv(samples: &[LabeledSample]) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&sample_row(s));
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::Parse(format!("missing header `{CSV_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_row(l, i + 1))
        .collect()
}

pub fn write_samples(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    std::fs::write(path, samples_to_csv(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<LabeledSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    samples_from_csv(&text)
}

/// JSON sidecar describing how a dataset CSV was produced and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub sampler: String,
    pub hypercube: Hypercube,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub rounds: u64,
    pub standardizer: Standardizer,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<path>` (CSV, train rows then validation rows) and its `.json` sidecar.
pub fn save_dataset(path: &Path, ds: &Dataset, sampler: &str, hypercube: &Hypercube) -> Result<()> {
    let rows: Vec<LabeledSample> = ds.all().copied().collect();
    write_samples(path, &rows)?;
    let meta = DatasetMeta {
        seed: ds.split_seed,
        sampler: sampler.to_string(),
        hypercube: *hypercube,
        train_indices: (0..ds.train.len()).collect(),
        val_indices: (ds.train.len()..ds.len()).collect(),
        rounds: ds.rounds,
        standardizer: ds.standardizer,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let rows = read_samples(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    let pick = |idx: &[usize]| -> Result<Vec<LabeledSample>> {
        idx.iter()
            .map(|&i| rows.get(i).copied().ok_or_else(|| Error::Parse(format!("split index {i} out of range"))))
            .collect()
    };
    let ds = Dataset {
        train: pick(&meta.train_indices)?,
        val: pick(&meta.val_indices)?,
        split_seed: meta.seed,
        standardizer: meta.standardizer,
        rounds: meta.rounds,
    };
    Ok((ds, meta))
}
