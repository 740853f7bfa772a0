use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Batch, Gradients, Losses, Mlp};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l0: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub gamma: f64,
    pub epochs: usize,
    pub alpha_j: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l0: 0.01,
            gamma: 0.99,
            epochs: 3000,
            alpha_j: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l0 > 0.0 && self.l0.is_finite()) {
            return Err(Error::Argument(format!("l0 must be positive, got {}", self.l0)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Argument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.alpha_j >= 0.0 && self.alpha_j.is_finite()) {
            return Err(Error::Argument(format!("alpha_j must be non-negative, got {}", self.alpha_j)));
        }
        Ok(())
    }

    /// `l0 * gamma^epoch`
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.l0 * self.gamma.powi(epoch as i32)
    }
}

/// Adam with the standard moment constants.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(net: &Mlp) -> Self {
        let zeros = Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let (ws, bs) = net.params_mut();
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + Self::EPS);
        };
        for k in 0..ws.len() {
            ndarray::Zip::from(&mut ws[k])
                .and(&mut self.m.weights[k])
                .and(&mut self.v.weights[k])
                .and(&g.weights[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut bs[k])
                .and(&mut self.m.biases[k])
                .and(&mut self.v.biases[k])
                .and(&g.biases[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Train and validation losses recorded after one epoch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train: Losses,
    pub val: Losses,
}

/// Loss history and the best-validation checkpoint.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochLosses>,
    pub best_epoch: usize,
    pub best_val_objective: f64,
    pub best: Mlp,
}

impl TrainReport {
    pub fn final_losses(&self) -> Option<&EpochLosses> {
        self.history.last()
    }
}

/// Resumable full-batch training loop.
///
/// The caller may stop at any epoch, swap in an enriched dataset and carry on
/// with the same epoch counter and learning-rate schedule.
pub struct Trainer {
    cfg: TrainConfig,
    net: Mlp,
    adam: Adam,
    train: Batch,
    val: Batch,
    epoch: usize,
    history: Vec<EpochLosses>,
    best: Option<(usize, f64, Mlp)>,
}

impl Trainer {
    pub fn new(mut net: Mlp, data: &Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Argument("training and validation splits must be non-empty".into()));
        }
        if net.input_dim() != 4 {
            return Err(Error::Argument("network must take four inputs".into()));
        }
        net.restandardize(data.standardizer);
        let adam = Adam::new(&net);
        Ok(Trainer {
            cfg,
            adam,
            train: Batch::from_samples(&data.train, &data.standardizer),
            val: Batch::from_samples(&data.val, &data.standardizer),
            net,
            epoch: 0,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Runs epochs until `target` (exclusive) or the configured total.
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        let target = target.min(self.cfg.epochs);
        let with_j = self.cfg.alpha_j != 0.0;
        while self.epoch < target {
            let n = self.epoch;
            let (train_losses, g) = self
                .net
                .loss_and_grad(&self.train, self.cfg.alpha_j)
                .map_err(|e| diverged(n, e))?;
            self.adam.step(&mut self.net, &g, self.cfg.learning_rate(n));
            let val = self.net.loss(&self.val, with_j).map_err(|e| diverged(n, e))?;
            let obj = val.objective(self.cfg.alpha_j);
            if !obj.is_finite() {
                return Err(Error::Diverged {
                    epoch: n,
                    reason: "non-finite validation loss".into(),
                });
            }
            self.history.push(EpochLosses {
                epoch: n,
                train: train_losses,
                val,
            });
            if self.best.as_ref().map_or(true, |(_, b, _)| obj < *b) {
                self.best = Some((n, obj, self.net.clone()));
            }
            self.epoch += 1;
        }
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = Adam::new(&self.net);
    }

    pub fn reset_best(&mut self) {
        self.best = None;
    }

    /// Continues on a new dataset from the current parameters.
    ///
    /// The network is re-expressed under the new standardizer, the optimizer
    /// state is cleared and best-validation tracking restarts since the
    /// validation set changed.
    pub fn replace_data(&mut self, data: &Dataset) -> Result<()> {
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Argument("training and validation splits must be non-empty".into()));
        }
        self.net.restandardize(data.standardizer);
        self.train = Batch::from_samples(&data.train, &data.standardizer);
        self.val = Batch::from_samples(&data.val, &data.standardizer);
        self.reset_optimizer();
        self.reset_best();
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainReport> {
        self.run_until(self.cfg.epochs)?;
        let (best_epoch, best_val_objective, best) = match self.best {
            Some(b) => b,
            None => {
                let val = self.net.loss(&self.val, self.cfg.alpha_j != 0.0)?;
                (self.epoch, val.objective(self.cfg.alpha_j), self.net.clone())
            }
        };
        Ok(TrainReport {
            history: self.history,
            best_epoch,
            best_val_objective,
            best,
        })
    }
}

fn diverged(epoch: usize, e: Error) -> Error {
    Error::Diverged {
        epoch,
        reason: e.to_string(),
    }
}

/// Trains `net` on `data` for the configured number of epochs.
pub fn train(net: Mlp, data: &Dataset, cfg: TrainConfig) -> Result<TrainReport> {
    Trainer::new(net, data, cfg)?.finish()
}
