//! Experiment runner: dataset construction, grid search, seeded assessment
//! and the end-to-end pipeline with content-addressed artifacts.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    Cell, DataSection, EnrichSection, ExperimentConfig, HyperGrid, Sampler, TrainSection, Variant, VerifySection,
    ALPHA_J_OPTIONS, DELTA_OPTIONS, GAMMA_OPTIONS, HIDDEN_LAYER_OPTIONS, L0_OPTIONS, WIDTH_OPTIONS,
};
pub use report::{
    assessment_to_csv, summarize, summary_to_csv, tune_to_csv, AssessmentReport, MetricSummary, RunAssessment,
    RunStatus, METRICS,
};

use crate::dataset::{class_histogram, save_dataset, write_samples, Dataset, SplitDataset, TestVault};
use crate::embedding::{contour_grid, verify_droop_region, EmbeddingQuery, FixedPair};
use crate::error::{Error, Result};
use crate::loops::{ni_enrich, verify_corners, vi_enrich, EnrichBatch, EnrichStatus};
use crate::milp::{Certificate, UnitBoxNet};
use crate::net::{Mlp, ModelMeta, TrainConfig, TrainReport, Trainer};
use crate::sampling::{label, sample_grid, sample_lhc, sample_uniform, Hypercube, LabeledSample, Origin};
use crate::seeding::SeedPath;
use crate::walks::enrich_dw;

/// `per_dim^4` equispaced oracle-labeled points, sealed against every stage
/// but assessment.
pub fn build_test_set(h: &Hypercube, per_dim: usize) -> Result<TestVault> {
    let pts = sample_grid(h, per_dim)?;
    Ok(TestVault::seal(label(&pts, Origin::Test)?))
}

/// Oracle-labeled base samples for the configured sampler.
pub fn base_samples(h: &Hypercube, data: &DataSection, seed: u64) -> Result<Vec<LabeledSample>> {
    let n = data.num_points();
    let (pts, origin) = match data.sampler {
        Sampler::Grid => (sample_grid(h, data.size)?, Origin::Grid),
        Sampler::Uniform => (sample_uniform(h, n, seed), Origin::Uniform),
        Sampler::Lhc => (sample_lhc(h, n, seed), Origin::Lhc),
    };
    label(&pts, origin)
}

/// Base training view of a configuration, drawn and split with the same
/// seed streams the pipeline uses.
pub fn base_dataset(cfg: &ExperimentConfig) -> Result<(Vec<LabeledSample>, Dataset)> {
    let root = SeedPath::root(cfg.master_seed);
    let samples = base_samples(&Hypercube::default(), &cfg.data, root.child("sample").seed())?;
    let base = Dataset::from_samples(&samples, root.child("split").seed())?;
    Ok((samples, base))
}

/// Training-side inputs shared by every run of one configuration.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub hypercube: Hypercube,
    pub variant: Variant,
    /// Training view after any run-independent enrichment (directed walks).
    pub data: Dataset,
    pub train: TrainSection,
    pub enrich: EnrichSection,
    pub verify: VerifySection,
}

impl RunContext {
    /// Builds the training view for `cfg.variant` from base samples.
    pub fn new(cfg: &ExperimentConfig, base: &Dataset) -> Result<Self> {
        let h = Hypercube::default();
        let data = match cfg.variant {
            Variant::Dw => {
                let base_points: Vec<LabeledSample> = base.all().copied().collect();
                base.enrich(&enrich_dw(&h, &base_points, &cfg.walk)?)?
            }
            _ => base.clone(),
        };
        Ok(RunContext {
            hypercube: h,
            variant: cfg.variant,
            data,
            train: cfg.train,
            enrich: cfg.enrich,
            verify: cfg.verify,
        })
    }
}

/// What one seeded run adds to the dataset at the interrupt epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub pool_size: usize,
    pub candidates: usize,
    pub added: usize,
    pub status: EnrichStatus,
    /// Share of the unit box excluded by certified regions (VI only).
    pub excluded_volume: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<LabeledSample>,
}

impl EnrichmentRecord {
    fn from_batch(b: EnrichBatch, excluded_volume: Option<f64>) -> Self {
        EnrichmentRecord {
            pool_size: b.pool_size,
            candidates: b.candidates,
            added: b.samples.len(),
            status: b.status,
            excluded_volume,
            samples: b.samples,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: TrainReport,
    pub enrichment: Option<EnrichmentRecord>,
    /// Dataset size the final model was trained on.
    pub dataset_size: usize,
}

/// Trains one seeded model for `cell`, pausing for an enrichment batch when
/// the variant asks for it.
pub fn run_one(ctx: &RunContext, cell: &Cell, seed: SeedPath) -> Result<RunOutput> {
    let data = &ctx.data;
    let net = Mlp::with_shape(cell.hidden_layers, cell.width, seed.child("init").seed(), data.standardizer)?;
    let cfg = TrainConfig {
        l0: cell.l0,
        gamma: cell.gamma,
        epochs: ctx.train.epochs,
        alpha_j: cell.alpha_j,
        seed: seed.seed(),
    };
    let mut trainer = Trainer::new(net, data, cfg)?;
    if !ctx.variant.interrupts() {
        return Ok(RunOutput {
            report: trainer.finish()?,
            enrichment: None,
            dataset_size: data.len(),
        });
    }
    trainer.run_until(ctx.enrich.interrupt_epoch)?;
    let delta = cell.delta.unwrap_or(DELTA_OPTIONS[1]);
    let ecfg = ctx.enrich.to_config(delta, seed.child("enrich").seed());
    let record = match ctx.variant {
        Variant::Ni => EnrichmentRecord::from_batch(ni_enrich(trainer.net(), &ctx.hypercube, &ecfg)?, None),
        _ => {
            let vcfg = ctx.verify.to_config(seed.child("verify").seed());
            let vi = vi_enrich(trainer.net(), &ctx.hypercube, &ecfg, &vcfg)?;
            EnrichmentRecord::from_batch(vi.batch, Some(vi.excluded_volume))
        }
    };
    let enriched = data.enrich(&record.samples)?;
    trainer.replace_data(&enriched)?;
    Ok(RunOutput {
        report: trainer.finish()?,
        enrichment: Some(record),
        dataset_size: enriched.len(),
    })
}

/// Validation objective of one selection run; `+inf` when it diverged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub cell: usize,
    pub seed_index: usize,
    pub val_objective: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub cell: Cell,
    pub mean_val_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub variant: Variant,
    pub cells: Vec<CellScore>,
    pub runs: Vec<SelectionRun>,
    pub selected: Cell,
    pub selected_index: usize,
}

/// Index of the best cell: lowest mean, then fewer parameters (fewer
/// layers, then narrower), then lexicographic on the remaining axes.
pub fn select_cell(scores: &[CellScore]) -> Option<usize> {
    let key = |s: &CellScore| {
        (
            s.mean_val_objective,
            s.cell.hidden_layers,
            s.cell.width,
            s.cell.l0,
            s.cell.gamma,
            s.cell.alpha_j,
            s.cell.delta.unwrap_or(0.0),
        )
    };
    (0..scores.len()).min_by(|&a, &b| {
        let (ka, kb) = (key(&scores[a]), key(&scores[b]));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
            .then(ka.4.total_cmp(&kb.4))
            .then(ka.5.total_cmp(&kb.5))
            .then(ka.6.total_cmp(&kb.6))
    })
}

/// Runs every grid cell with the selection seeds and picks the cell with the
/// best mean validation objective.
pub fn tune(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<TuneResult> {
    let cells = cfg.grid.cells(cfg.variant)?;
    let stage = SeedPath::root(cfg.master_seed).child("tune");
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.train.selection_seeds).map(move |s| (c, s)))
        .collect();
    let runs: Vec<SelectionRun> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let seed = stage.index(c as u64).index(s as u64);
            match run_one(ctx, &cells[c], seed) {
                Ok(out) => Ok(SelectionRun {
                    cell: c,
                    seed_index: s,
                    val_objective: out.report.best_val_objective,
                    diverged: false,
                }),
                Err(Error::Diverged { .. }) => Ok(SelectionRun {
                    cell: c,
                    seed_index: s,
                    val_objective: f64::INFINITY,
                    diverged: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let scores: Vec<CellScore> = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let vals: Vec<f64> = runs.iter().filter(|r| r.cell == c).map(|r| r.val_objective).collect();
            CellScore {
                cell: *cell,
                mean_val_objective: vals.iter().sum::<f64>() / vals.len() as f64,
            }
        })
        .collect();
    let selected_index = select_cell(&scores).ok_or_else(|| Error::Config("empty hyper-parameter grid".into()))?;
    info!(
        "selected cell {selected_index} ({:?}) with mean validation objective {}",
        scores[selected_index].cell, scores[selected_index].mean_val_objective
    );
    Ok(TuneResult {
        variant: cfg.variant,
        selected: scores[selected_index].cell,
        selected_index,
        cells: scores,
        runs,
    })
}

/// Test errors of a predictor in standardized output units (`sigma_y` is the
/// output scale the model was trained with).
pub fn class_errors(test: &TestVault, sigma_y: f64, predict: impl Fn(&[[f64; 4]]) -> Vec<f64>) -> RunAssessment {
    let samples = test.open();
    let xs: Vec<[f64; 4]> = samples.iter().map(|s| s.x).collect();
    let preds = predict(&xs);
    let mut sums = [0.0; 5];
    let mut counts = [0usize; 5];
    let mut total = 0.0;
    for (s, p) in samples.iter().zip(&preds) {
        let e = (p - s.zeta) / sigma_y;
        let sq = e * e;
        sums[s.class.index()] += sq;
        counts[s.class.index()] += 1;
        total += sq;
    }
    RunAssessment {
        run: 0,
        status: RunStatus::Ok,
        best_epoch: 0,
        dataset_size: 0,
        total_mse: total / samples.len().max(1) as f64,
        class_mse: std::array::from_fn(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { f64::NAN }),
        class_counts: counts,
    }
}

/// Outputs of [`assess`] beyond the report.
#[derive(Debug, Clone)]
pub struct AssessOutput {
    pub report: AssessmentReport,
    /// Best model of the first run that did not diverge.
    pub first_model: Option<(Mlp, ModelMeta)>,
    /// Enrichment batch of every run, in run order (interrupting variants).
    pub enrichments: Vec<Option<EnrichmentRecord>>,
}

/// Trains the selected cell with every assessment seed and scores each
/// model on the sealed test set.
pub fn assess(cfg: &ExperimentConfig, ctx: &RunContext, selected: &Cell, data: &SplitDataset) -> Result<AssessOutput> {
    let stage = SeedPath::root(cfg.master_seed).child("assess");
    let outputs: Vec<Result<RunOutput>> = (0..cfg.train.assessment_seeds)
        .into_par_iter()
        .map(|i| run_one(ctx, selected, stage.index(i as u64)))
        .collect();
    let mut runs = Vec::with_capacity(outputs.len());
    let mut first_model = None;
    let mut enrichments = Vec::with_capacity(outputs.len());
    for (i, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                let net = &o.report.best;
                let mut row = class_errors(data.test(), net.standardizer.sigma_y, |xs| net.predict_many(xs));
                row.run = i;
                row.best_epoch = o.report.best_epoch;
                row.dataset_size = o.dataset_size;
                if first_model.is_none() {
                    let seed = stage.index(i as u64).seed();
                    let meta = ModelMeta {
                        seed,
                        config: TrainConfig {
                            l0: selected.l0,
                            gamma: selected.gamma,
                            epochs: cfg.train.epochs,
                            alpha_j: selected.alpha_j,
                            seed,
                        },
                        best_epoch: o.report.best_epoch,
                    };
                    first_model = Some((o.report.best.clone(), meta));
                }
                enrichments.push(o.enrichment);
                runs.push(row);
            }
            Err(Error::Diverged { epoch, .. }) => {
                runs.push(RunAssessment::diverged(i, epoch));
                enrichments.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let summary = summarize(&runs);
    Ok(AssessOutput {
        report: AssessmentReport {
            variant: cfg.variant,
            selected: *selected,
            test_size: data.test().len(),
            runs,
            summary,
        },
        first_model,
        enrichments,
    })
}

/// Paths and digests of the files a pipeline run wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// Relative path to hex SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub tune: TuneResult,
    pub assessment: AssessmentReport,
    pub certificates: Vec<Certificate>,
}

struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.record(rel, contents);
        Ok(())
    }

    fn record(&mut self, rel: &str, contents: &[u8]) {
        let digest = Sha256::digest(contents);
        self.files
            .insert(rel.to_string(), digest.iter().map(|b| format!("{b:02x}")).collect());
    }

    /// Registers a file some other writer produced under the artifact directory.
    fn adopt(&mut self, rel: &str) -> Result<()> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        info!("stage {name}");
        let out = f(self).map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        });
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        out
    }

    fn finish(&mut self, hash: &str) -> Result<Manifest> {
        let manifest = Manifest {
            config_hash: hash.to_string(),
            files: self.files.clone(),
        };
        self.json("manifest.json", &manifest)?;
        // timings vary run to run, so they stay out of the manifest
        let path = self.dir.join("timings.json");
        let text = serde_json::to_string_pretty(&self.timings)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Runs dataset creation, enrichment, tuning, assessment, verification and
/// embedding exports, writing every artifact under `out/<config hash>/`.
///
/// Report files are deterministic functions of the configuration; stage
/// wall times go to `timings.json`, which the manifest does not cover.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = out.join(&hash[..16]);
    let mut art = Artifacts {
        dir: dir.clone(),
        files: BTreeMap::new(),
        timings: BTreeMap::new(),
    };
    art.write("config.toml", cfg.to_toml().as_bytes())?;
    let root = SeedPath::root(cfg.master_seed);
    let h = Hypercube::default();

    let base = art.stage("dataset", |art| {
        let (samples, base) = base_dataset(cfg)?;
        fs::create_dir_all(art.dir.join("dataset")).map_err(|e| Error::io(art.dir.join("dataset"), e))?;
        save_dataset(&art.dir.join("dataset/base.csv"), &base, cfg.data.sampler.as_str(), &h)?;
        art.adopt("dataset/base.csv")?;
        art.adopt("dataset/base.json")?;
        art.json("dataset/base_histogram.json", &class_histogram(&samples))?;
        Ok(base)
    })?;
    let split = art.stage("test_set", |art| {
        let test = build_test_set(&h, cfg.data.test_grid_per_dim)?;
        art.json("dataset/test_histogram.json", &test.histogram())?;
        Ok(SplitDataset::new(base.clone(), test))
    })?;
    let ctx = art.stage("enrich", |art| {
        let ctx = RunContext::new(cfg, split.training_view())?;
        if cfg.variant == Variant::Dw {
            let added: Vec<LabeledSample> = ctx.data.all().filter(|s| s.origin == Origin::Dw).copied().collect();
            fs::create_dir_all(art.dir.join("enrich")).map_err(|e| Error::io(art.dir.join("enrich"), e))?;
            write_samples(&art.dir.join("enrich/dw.csv"), &added)?;
            art.adopt("enrich/dw.csv")?;
        }
        art.json("dataset/standardizer.json", &ctx.data.standardizer)?;
        Ok(ctx)
    })?;
    let tuned = art.stage("tune", |art| {
        let t = tune(cfg, &ctx)?;
        art.write("tune/tune.csv", tune_to_csv(&t).as_bytes())?;
        art.json("tune/selection.json", &t)?;
        Ok(t)
    })?;
    let assessed = art.stage("assess", |art| {
        let a = assess(cfg, &ctx, &tuned.selected, &split)?;
        art.write("assess/assessment.csv", assessment_to_csv(&a.report.runs).as_bytes())?;
        art.write("assess/summary.csv", summary_to_csv(&a.report.summary).as_bytes())?;
        art.json("assess/report.json", &a.report)?;
        if cfg.variant.interrupts() {
            art.json("assess/enrichment.json", &a.enrichments)?;
            if let Some(Some(first)) = a.enrichments.first() {
                fs::create_dir_all(art.dir.join("enrich")).map_err(|e| Error::io(art.dir.join("enrich"), e))?;
                write_samples(&art.dir.join("enrich/run_000.csv"), &first.samples)?;
                art.adopt("enrich/run_000.csv")?;
            }
        }
        if let Some((net, meta)) = &a.first_model {
            let text = serde_json::to_string_pretty(&net.to_file(Some(meta)))?;
            art.write("model/model.json", text.as_bytes())?;
        }
        Ok(a)
    })?;
    let certificates = art.stage("verify", |art| {
        let Some((net, _)) = assessed.first_model.as_ref().filter(|_| cfg.verify.enabled) else {
            return Ok(Vec::new());
        };
        let unet = UnitBoxNet::from_mlp(net, &h)?;
        let vcfg = cfg.verify.to_config(root.child("verify").seed());
        let certs = verify_corners(&unet, cfg.verify.delta, &vcfg)?;
        art.json("verify/certificates.json", &certs)?;
        let q = EmbeddingQuery {
            fixed: FixedPair::Power { p_ref: 1.0, q_ref: 0.0 },
            anchor: [h.lower[2] + 0.5 * h.width(2), h.lower[3] + 0.5 * h.width(3)],
            delta: cfg.verify.delta,
        };
        let cert = verify_droop_region(&unet, &h, &q, &vcfg)?;
        art.json("embed/droop_certificate.json", &cert)?;
        let grid = contour_grid(&unet, &h, &q, cfg.verify.embed_resolution, Some(&cert))?;
        let written = grid.write(&art.dir.join("embed/droop_grid.csv"))?;
        for p in written {
            let rel = p.strip_prefix(&art.dir).expect("written below the artifact dir");
            art.adopt(&rel.to_string_lossy())?;
        }
        Ok(certs)
    })?;
    let manifest = art.finish(&hash)?;
    Ok(PipelineOutput {
        dir,
        manifest,
        tune: tuned,
        assessment: assessed.report,
        certificates,
    })
}
