//! Command-line entry point. Every subcommand reads an optional TOML
//! experiment config, lets `--seed` override its master seed and writes
//! CSV/JSON outputs under `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use zetaloop::dataset::{class_histogram, save_dataset, write_samples, SplitDataset};
use zetaloop::embedding::{export_contour_grid, verify_power_region, verify_droop_region, EmbeddingQuery, FixedPair};
use zetaloop::harness::{
    assess, assessment_to_csv, base_dataset, build_test_set, run_pipeline, summary_to_csv, tune, tune_to_csv, Cell,
    ExperimentConfig, RunContext, TuneResult,
};
use zetaloop::loops::{
    compare_stat_vs_verified, log_schedule, ni_enrich, verify_corners, vi_enrich, write_ratio_csv,
};
use zetaloop::milp::UnitBoxNet;
use zetaloop::net::{Mlp, ModelMeta, TrainConfig, TrainReport, Trainer};
use zetaloop::sampling::Hypercube;
use zetaloop::seeding::SeedPath;
use zetaloop::walks::{directed_walk, write_path_csv};
use zetaloop::{Error, Result};

#[derive(Parser)]
#[command(name = "zetaloop", version, about = "Damping-margin surrogates: sampling, training, enrichment, verification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw and label the base dataset.
    Sample {
        /// Also build and summarize the sealed test grid.
        #[arg(long)]
        test_set: bool,
    },
    /// Run directed walks from the base dataset.
    Walk {
        /// Number of walk paths to export as CSV.
        #[arg(long, default_value_t = 5)]
        paths: usize,
    },
    /// Train one model on the first grid cell.
    Train,
    /// Train to the interrupt epoch and draw a network-informed batch.
    EnrichNi(EnrichArgs),
    /// Train to the interrupt epoch and draw a verification-informed batch.
    EnrichVi(EnrichArgs),
    /// Grid search with the selection seeds.
    Tune,
    /// Seeded assessment of one cell on the sealed test set.
    Assess {
        /// `selection.json` from `tune`; the first grid cell otherwise.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Certify regions around the 16 hypercube corners.
    Verify {
        #[arg(long)]
        model: PathBuf,
    },
    /// Certify a region with one input pair held fixed and export the contour grid.
    Embed(EmbedArgs),
    /// Compare sampled radii against verified ones.
    CompareEps {
        #[arg(long)]
        model: PathBuf,
        /// Independent sampling streams per corner.
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        /// Largest sample count of the schedule.
        #[arg(long, default_value_t = 1_000_000)]
        max_n: usize,
    },
    /// Run every stage and write content-addressed artifacts.
    Pipeline {
        /// Scale the test grid and hyper-parameter grid to full size.
        #[arg(long)]
        paper_scale: bool,
    },
}

#[derive(Args)]
struct EnrichArgs {
    /// Model to enrich with; trained to the interrupt epoch when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Band half-width around 3 %, in percentage points.
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixed {
    /// Hold `P_ref, Q_ref`; certify droop gains.
    Power,
    /// Hold `K_pf, K_v`; certify power set-points.
    Droop,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Fixed::Power)]
    fixed: Fixed,
    /// Values of the fixed pair, physical units.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.0])]
    values: Vec<f64>,
    /// Anchor of the free pair, physical units; the plane centre when omitted.
    #[arg(long, value_delimiter = ',')]
    anchor: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn first_cell(cfg: &ExperimentConfig) -> Result<Cell> {
    Ok(cfg.grid.cells(cfg.variant)?[0])
}

fn train_config(cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> TrainConfig {
    TrainConfig {
        l0: cell.l0,
        gamma: cell.gamma,
        epochs: cfg.train.epochs,
        alpha_j: cell.alpha_j,
        seed,
    }
}

fn history_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_data,train_jacobian,val_data,val_jacobian\n");
    for e in &report.history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train.data, e.train.jacobian, e.val.data, e.val.jacobian
        ));
    }
    s
}

/// Either loads `--model` or trains the first cell up to the interrupt epoch.
fn enrich_model(cfg: &ExperimentConfig, model: Option<&Path>, out: &Path) -> Result<Mlp> {
    if let Some(p) = model {
        return Ok(Mlp::load(p)?.0);
    }
    let ctx = RunContext::new(cfg, &base_dataset(cfg)?.1)?;
    let cell = first_cell(cfg)?;
    let seed = SeedPath::root(cfg.master_seed).child("train");
    let net = Mlp::with_shape(cell.hidden_layers, cell.width, seed.child("init").seed(), ctx.data.standardizer)?;
    let tcfg = train_config(cfg, &cell, seed.seed());
    let mut trainer = Trainer::new(net, &ctx.data, tcfg)?;
    trainer.run_until(cfg.enrich.interrupt_epoch)?;
    let net = trainer.net().clone();
    let meta = ModelMeta {
        seed: seed.seed(),
        config: tcfg,
        best_epoch: cfg.enrich.interrupt_epoch,
    };
    net.save(&out.join("model_interrupt.json"), Some(&meta))?;
    Ok(net)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    let h = Hypercube::default();
    let root = SeedPath::root(cfg.master_seed);
    match cli.cmd {
        Cmd::Sample { test_set } => {
            let (samples, base) = base_dataset(&cfg)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            save_dataset(&out.join("base.csv"), &base, cfg.data.sampler.as_str(), &h)?;
            write_json(&out.join("base_histogram.json"), &class_histogram(&samples))?;
            if test_set {
                let test = build_test_set(&h, cfg.data.test_grid_per_dim)?;
                write_json(&out.join("test_histogram.json"), &test.histogram())?;
            }
        }
        Cmd::Walk { paths } => {
            let (samples, _) = base_dataset(&cfg)?;
            let mut emitted = Vec::new();
            let mut exported = 0;
            let dir = out.join("paths");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for s in samples.iter().filter(|s| cfg.walk.triggers(s.zeta)) {
                let w = directed_walk(&h, s, &cfg.walk)?;
                if exported < paths {
                    write_path_csv(&dir.join(format!("walk_{exported:03}_power.csv")), &w.power)?;
                    write_path_csv(&dir.join(format!("walk_{exported:03}_control.csv")), &w.control)?;
                    exported += 1;
                }
                emitted.extend(w.emitted);
            }
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_samples(&out.join("dw.csv"), &emitted)?;
            info!("{} walk points from {} base samples", emitted.len(), samples.len());
        }
        Cmd::Train => {
            let ctx = RunContext::new(&cfg, &base_dataset(&cfg)?.1)?;
            let cell = first_cell(&cfg)?;
            let seed = root.child("train");
            let net = Mlp::with_shape(cell.hidden_layers, cell.width, seed.child("init").seed(), ctx.data.standardizer)?;
            let tcfg = train_config(&cfg, &cell, seed.seed());
            let report = Trainer::new(net, &ctx.data, tcfg)?.finish()?;
            let meta = ModelMeta {
                seed: seed.seed(),
                config: tcfg,
                best_epoch: report.best_epoch,
            };
            report.best.save(&out.join("model.json"), Some(&meta))?;
            write_text(&out.join("history.csv"), &history_csv(&report))?;
            info!("best epoch {} val objective {:.6}", report.best_epoch, report.best_val_objective);
        }
        Cmd::EnrichNi(a) => {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let net = enrich_model(&cfg, a.model.as_deref(), out)?;
            let ecfg = cfg.enrich.to_config(a.delta, root.child("enrich").seed());
            let batch = ni_enrich(&net, &h, &ecfg)?;
            write_samples(&out.join("ni.csv"), &batch.samples)?;
            write_json(&out.join("ni_batch.json"), &batch)?;
            write_json(&out.join("ni_histogram.json"), &class_histogram(&batch.samples))?;
        }
        Cmd::EnrichVi(a) => {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let net = enrich_model(&cfg, a.model.as_deref(), out)?;
            let ecfg = cfg.enrich.to_config(a.delta, root.child("enrich").seed());
            let vcfg = cfg.verify.to_config(root.child("verify").seed());
            let vi = vi_enrich(&net, &h, &ecfg, &vcfg)?;
            write_samples(&out.join("vi.csv"), &vi.batch.samples)?;
            write_json(&out.join("vi_batch.json"), &vi)?;
            info!("excluded volume {:.4}", vi.excluded_volume);
        }
        Cmd::Tune => {
            let ctx = RunContext::new(&cfg, &base_dataset(&cfg)?.1)?;
            let t = tune(&cfg, &ctx)?;
            write_text(&out.join("tune.csv"), &tune_to_csv(&t))?;
            write_json(&out.join("selection.json"), &t)?;
        }
        Cmd::Assess { selection } => {
            let cell = match selection {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str::<TuneResult>(&text)?.selected
                }
                None => first_cell(&cfg)?,
            };
            let base = base_dataset(&cfg)?.1;
            let split = SplitDataset::new(base.clone(), build_test_set(&h, cfg.data.test_grid_per_dim)?);
            let ctx = RunContext::new(&cfg, split.training_view())?;
            let a = assess(&cfg, &ctx, &cell, &split)?;
            write_text(&out.join("assessment.csv"), &assessment_to_csv(&a.report.runs))?;
            write_text(&out.join("summary.csv"), &summary_to_csv(&a.report.summary))?;
            write_json(&out.join("report.json"), &a.report)?;
            if cfg.variant.interrupts() {
                write_json(&out.join("enrichment.json"), &a.enrichments)?;
            }
        }
        Cmd::Verify { model } => {
            let unet = UnitBoxNet::from_mlp(&Mlp::load(&model)?.0, &h)?;
            let certs = verify_corners(&unet, cfg.verify.delta, &cfg.verify.to_config(root.child("verify").seed()))?;
            write_json(&out.join("certificates.json"), &certs)?;
        }
        Cmd::Embed(a) => {
            let unet = UnitBoxNet::from_mlp(&Mlp::load(&a.model)?.0, &h)?;
            if a.values.len() != 2 || a.anchor.as_ref().is_some_and(|v| v.len() != 2) {
                return Err(Error::Argument("--values and --anchor take two comma-separated numbers".into()));
            }
            let fixed = match a.fixed {
                Fixed::Power => FixedPair::Power {
                    p_ref: a.values[0],
                    q_ref: a.values[1],
                },
                Fixed::Droop => FixedPair::Droop {
                    k_pf: a.values[0],
                    k_v: a.values[1],
                },
            };
            let (_, free) = fixed.dims();
            let anchor = match a.anchor {
                Some(v) => [v[0], v[1]],
                None => free.map(|i| h.lower[i] + 0.5 * h.width(i)),
            };
            let q = EmbeddingQuery {
                fixed,
                anchor,
                delta: a.delta.unwrap_or(cfg.verify.delta),
            };
            let vcfg = cfg.verify.to_config(root.child("embed").seed());
            let (cert, name) = match a.fixed {
                Fixed::Power => (verify_droop_region(&unet, &h, &q, &vcfg)?, "droop"),
                Fixed::Droop => (verify_power_region(&unet, &h, &q, &vcfg)?, "power"),
            };
            write_json(&out.join(format!("{name}_certificate.json")), &cert)?;
            let res = a.resolution.unwrap_or(cfg.verify.embed_resolution);
            export_contour_grid(&unet, &h, &q, res, Some(&cert), &out.join(format!("{name}_grid.csv")))?;
        }
        Cmd::CompareEps {
            model,
            replicates,
            max_n,
        } => {
            let unet = UnitBoxNet::from_mlp(&Mlp::load(&model)?.0, &h)?;
            let certs = verify_corners(&unet, cfg.verify.delta, &cfg.verify.to_config(root.child("verify").seed()))?;
            write_json(&out.join("certificates.json"), &certs)?;
            let indexed: Vec<_> = certs.into_iter().enumerate().collect();
            let rows = compare_stat_vs_verified(&unet, &indexed, &log_schedule(max_n), replicates, root.child("compare").seed());
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_ratio_csv(&out.join("eps_ratios.csv"), &rows)?;
        }
        Cmd::Pipeline { paper_scale } => {
            let cfg = if paper_scale { cfg.paper_scale() } else { cfg };
            let p = run_pipeline(&cfg, out)?;
            if let Some(m) = p.assessment.metric_summary("total") {
                info!("median total MSE {:.4} over {} runs", m.median, m.runs);
            }
            println!("{}", p.dir.display());
        }
    }
    Ok(())
}
