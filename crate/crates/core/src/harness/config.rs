use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loops::EnrichConfig;
use crate::milp::{BnbConfig, VerifyConfig};
use crate::walks::WalkConfig;

/// Hyper-parameter options a grid may draw from.
pub const HIDDEN_LAYER_OPTIONS: [usize; 3] = [2, 3, 4];
pub const WIDTH_OPTIONS: [usize; 3] = [16, 32, 64];
pub const L0_OPTIONS: [f64; 4] = [0.005, 0.01, 0.02, 0.05];
pub const GAMMA_OPTIONS: [f64; 4] = [0.99, 0.995, 0.999, 1.0];
pub const ALPHA_J_OPTIONS: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 1.0];
pub const DELTA_OPTIONS: [f64; 2] = [0.25, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    /// Base data plus directed-walk points.
    Dw,
    /// Network-informed enrichment at the interrupt epoch.
    Ni,
    /// Verification-informed enrichment at the interrupt epoch.
    Vi,
    /// Jacobian-regularized training, no extra points.
    Pr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Base, Variant::Dw, Variant::Ni, Variant::Vi, Variant::Pr];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Dw => "dw",
            Variant::Ni => "ni",
            Variant::Vi => "vi",
            Variant::Pr => "pr",
        }
    }

    /// Whether training is interrupted for an enrichment batch.
    pub fn interrupts(self) -> bool {
        matches!(self, Variant::Ni | Variant::Vi)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Grid,
    Uniform,
    Lhc,
}

impl Sampler {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampler::Grid => "grid",
            Sampler::Uniform => "uniform",
            Sampler::Lhc => "lhc",
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Sampler::Grid),
            "uniform" => Ok(Sampler::Uniform),
            "lhc" => Ok(Sampler::Lhc),
            _ => Err(Error::Parse(format!("unknown sampler `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub sampler: Sampler,
    /// Points per dimension; every sampler draws `size^4` points.
    pub size: usize,
    pub test_grid_per_dim: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            sampler: Sampler::Grid,
            size: 5,
            test_grid_per_dim: 11,
        }
    }
}

impl DataSection {
    pub fn num_points(&self) -> usize {
        self.size.pow(4)
    }
}

/// Axes of the hyper-parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub hidden_layers: Vec<usize>,
    pub width: Vec<usize>,
    pub l0: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Used by the `pr` variant only; other variants train with `alpha_j = 0`.
    pub alpha_j: Vec<f64>,
    /// Used by the `ni` and `vi` variants only.
    pub delta: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            hidden_layers: vec![3],
            width: vec![32],
            l0: vec![0.01],
            gamma: vec![0.999],
            alpha_j: vec![0.001, 0.01],
            delta: vec![3.0],
        }
    }
}

impl HyperGrid {
    /// Every option of every axis.
    pub fn full() -> Self {
        HyperGrid {
            hidden_layers: HIDDEN_LAYER_OPTIONS.to_vec(),
            width: WIDTH_OPTIONS.to_vec(),
            l0: L0_OPTIONS.to_vec(),
            gamma: GAMMA_OPTIONS.to_vec(),
            alpha_j: ALPHA_J_OPTIONS.to_vec(),
            delta: DELTA_OPTIONS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn subset<T: PartialEq + fmt::Debug>(name: &str, values: &[T], options: &[T]) -> Result<()> {
            if values.is_empty() {
                return Err(Error::Config(format!("grid axis `{name}` is empty")));
            }
            for v in values {
                if !options.contains(v) {
                    return Err(Error::Config(format!("grid axis `{name}`: {v:?} is not one of {options:?}")));
                }
            }
            for (i, v) in values.iter().enumerate() {
                if values[..i].contains(v) {
                    return Err(Error::Config(format!("grid axis `{name}` repeats {v:?}")));
                }
            }
            Ok(())
        }
        subset("hidden_layers", &self.hidden_layers, &HIDDEN_LAYER_OPTIONS)?;
        subset("width", &self.width, &WIDTH_OPTIONS)?;
        subset("l0", &self.l0, &L0_OPTIONS)?;
        subset("gamma", &self.gamma, &GAMMA_OPTIONS)?;
        subset("alpha_j", &self.alpha_j, &ALPHA_J_OPTIONS)?;
        subset("delta", &self.delta, &DELTA_OPTIONS)
    }

    /// Grid cells searched for `variant`, in lexicographic axis order.
    ///
    /// Only `pr` varies `alpha_j`, using the non-zero options; only `ni` and
    /// `vi` vary `delta`.
    pub fn cells(&self, variant: Variant) -> Result<Vec<Cell>> {
        let alphas: Vec<f64> = match variant {
            Variant::Pr => self.alpha_j.iter().copied().filter(|&a| a > 0.0).collect(),
            _ => vec![0.0],
        };
        if alphas.is_empty() {
            return Err(Error::Config("the pr variant needs a non-zero alpha_j in the grid".into()));
        }
        let deltas: Vec<Option<f64>> = if variant.interrupts() {
            self.delta.iter().map(|&d| Some(d)).collect()
        } else {
            vec![None]
        };
        let mut cells = Vec::new();
        for &hidden_layers in &self.hidden_layers {
            for &width in &self.width {
                for &l0 in &self.l0 {
                    for &gamma in &self.gamma {
                        for &alpha_j in &alphas {
                            for &delta in &deltas {
                                cells.push(Cell {
                                    hidden_layers,
                                    width,
                                    l0,
                                    gamma,
                                    alpha_j,
                                    delta,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One hyper-parameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub hidden_layers: usize,
    pub width: usize,
    pub l0: f64,
    pub gamma: f64,
    pub alpha_j: f64,
    pub delta: Option<f64>,
}

impl Cell {
    /// Trainable parameters of a `4 -> width^hidden_layers -> 1` network.
    pub fn num_params(&self) -> usize {
        let (k, n) = (self.hidden_layers, self.width);
        4 * n + n + (k - 1) * (n * n + n) + n + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub selection_seeds: usize,
    pub assessment_seeds: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 3000,
            selection_seeds: 10,
            assessment_seeds: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSection {
    pub pool_size: usize,
    pub n_samples: usize,
    pub interrupt_epoch: usize,
}

impl Default for EnrichSection {
    fn default() -> Self {
        let d = EnrichConfig::default();
        EnrichSection {
            pool_size: d.pool_size,
            n_samples: d.n_samples,
            interrupt_epoch: d.interrupt_epoch,
        }
    }
}

impl EnrichSection {
    pub fn to_config(&self, delta: f64, seed: u64) -> EnrichConfig {
        EnrichConfig {
            pool_size: self.pool_size,
            n_samples: self.n_samples,
            delta,
            interrupt_epoch: self.interrupt_epoch,
            seed,
        }
    }
}

/// Verification and embedding exports run on the first assessment model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub enabled: bool,
    pub delta: f64,
    pub node_limit: usize,
    pub warm_samples: usize,
    pub embed_resolution: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            enabled: true,
            delta: 0.25,
            node_limit: BnbConfig::default().node_limit,
            warm_samples: VerifyConfig::default().warm_samples,
            embed_resolution: 41,
        }
    }
}

impl VerifySection {
    pub fn to_config(&self, seed: u64) -> VerifyConfig {
        VerifyConfig {
            bnb: BnbConfig {
                node_limit: self.node_limit,
                ..BnbConfig::default()
            },
            warm_samples: self.warm_samples,
            seed,
        }
    }
}

/// Everything a pipeline run depends on. Read from a TOML file with one
/// table per stage; omitted keys take desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub variant: Variant,
    pub data: DataSection,
    pub grid: HyperGrid,
    pub train: TrainSection,
    pub walk: WalkConfig,
    pub enrich: EnrichSection,
    pub verify: VerifySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            variant: Variant::Base,
            data: DataSection::default(),
            grid: HyperGrid::default(),
            train: TrainSection::default(),
            walk: WalkConfig::default(),
            enrich: EnrichSection::default(),
            verify: VerifySection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full hyper-parameter grid and the 21-per-dimension test grid.
    pub fn paper_scale(mut self) -> Self {
        self.grid = HyperGrid::full();
        self.data.test_grid_per_dim = 21;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.size < 2 {
            return Err(Error::Config("data.size must be at least 2".into()));
        }
        if self.data.test_grid_per_dim < 2 {
            return Err(Error::Config("data.test_grid_per_dim must be at least 2".into()));
        }
        self.grid.validate()?;
        self.grid.cells(self.variant)?;
        if self.train.epochs == 0 || self.train.selection_seeds == 0 || self.train.assessment_seeds == 0 {
            return Err(Error::Config("epochs and seed counts must be positive".into()));
        }
        self.walk.validate()?;
        if self.variant.interrupts() && self.enrich.interrupt_epoch > self.train.epochs {
            return Err(Error::Config("enrich.interrupt_epoch exceeds train.epochs".into()));
        }
        if self.enrich.n_samples > self.enrich.pool_size {
            return Err(Error::Config("enrich.n_samples exceeds enrich.pool_size".into()));
        }
        if self.verify.embed_resolution < 2 {
            return Err(Error::Config("verify.embed_resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical serialization; names the artifact directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
