//! Assessment records, distribution summaries and their CSV forms.
//!
//! Column sets are fixed:
//!
//! * `assessment.csv`: `run,status,best_epoch,dataset_size,total_mse`, then
//!   `mse_<class>` and `n_<class>` for each class from stable to unstable.
//! * `summary.csv`: `metric,runs,failures,min,q1,median,q3,max,lower_whisker,upper_whisker,outliers`.
//! * `tune.csv`: `cell,hidden_layers,width,l0,gamma,alpha_j,delta,seed_index,val_objective,diverged`.

use serde::{Deserialize, Serialize};

use super::config::{Cell, Variant};
use super::TuneResult;
use crate::loops::percentile;
use crate::sampling::StabilityClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// Test errors of one assessment run, in standardized output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAssessment {
    pub run: usize,
    pub status: RunStatus,
    /// Checkpoint epoch, or the divergence epoch.
    pub best_epoch: usize,
    pub dataset_size: usize,
    pub total_mse: f64,
    /// Per-class MSE in [`StabilityClass::ALL`] order; NaN for an empty class.
    pub class_mse: [f64; 5],
    pub class_counts: [usize; 5],
}

impl RunAssessment {
    pub fn diverged(run: usize, epoch: usize) -> Self {
        RunAssessment {
            run,
            status: RunStatus::Diverged,
            best_epoch: epoch,
            dataset_size: 0,
            total_mse: f64::NAN,
            class_mse: [f64::NAN; 5],
            class_counts: [0; 5],
        }
    }

    /// Count-weighted recombination of the class errors.
    pub fn recombined_mse(&self) -> f64 {
        let n: usize = self.class_counts.iter().sum();
        let s: f64 = self
            .class_mse
            .iter()
            .zip(&self.class_counts)
            .filter(|(_, &c)| c > 0)
            .map(|(m, &c)| m * c as f64)
            .sum();
        s / n as f64
    }

    pub fn metric(&self, m: usize) -> f64 {
        if m == 0 {
            self.total_mse
        } else {
            self.class_mse[m - 1]
        }
    }
}

/// Summary metric names: the total, then one per class.
pub const METRICS: [&str; 6] = ["total", "stable", "mstable", "marginal", "munstable", "unstable"];

/// Box-plot statistics of one metric over the runs that did not diverge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub runs: usize,
    pub failures: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values within 1.5 interquartile ranges of the quartiles.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    /// Values beyond the whiskers.
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub variant: Variant,
    pub selected: Cell,
    pub test_size: usize,
    pub runs: Vec<RunAssessment>,
    pub summary: Vec<MetricSummary>,
}

impl AssessmentReport {
    pub fn metric_summary(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.metric == name)
    }
}

pub fn summarize(runs: &[RunAssessment]) -> Vec<MetricSummary> {
    let failures = runs.iter().filter(|r| r.status == RunStatus::Diverged).count();
    METRICS
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let mut v: Vec<f64> = runs
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .map(|r| r.metric(m))
                .filter(|x| !x.is_nan())
                .collect();
            v.sort_by(f64::total_cmp);
            if v.is_empty() {
                return MetricSummary {
                    metric: name.to_string(),
                    runs: 0,
                    failures,
                    min: f64::NAN,
                    q1: f64::NAN,
                    median: f64::NAN,
                    q3: f64::NAN,
                    max: f64::NAN,
                    lower_whisker: f64::NAN,
                    upper_whisker: f64::NAN,
                    outliers: 0,
                };
            }
            let (q1, q3) = (percentile(&v, 25.0), percentile(&v, 75.0));
            let iqr = q3 - q1;
            let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
            let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
            MetricSummary {
                metric: name.to_string(),
                runs: v.len(),
                failures,
                min: v[0],
                q1,
                median: percentile(&v, 50.0),
                q3,
                max: v[v.len() - 1],
                lower_whisker: inside.first().copied().unwrap_or(q1),
                upper_whisker: inside.last().copied().unwrap_or(q3),
                outliers: v.len() - inside.len(),
            }
        })
        .collect()
}

pub fn assessment_to_csv(runs: &[RunAssessment]) -> String {
    let mut s = String::from("run,status,best_epoch,dataset_size,total_mse");
    for c in StabilityClass::ALL {
        s.push_str(&format!(",mse_{c}"));
    }
    for c in StabilityClass::ALL {
        s.push_str(&format!(",n_{c}"));
    }
    s.push('\n');
    for r in runs {
        let status = match r.status {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
        };
        s.push_str(&format!("{},{status},{},{},{}", r.run, r.best_epoch, r.dataset_size, r.total_mse));
        for m in r.class_mse {
            s.push_str(&format!(",{m}"));
        }
        for n in r.class_counts {
            s.push_str(&format!(",{n}"));
        }
        s.push('\n');
    }
    s
}

pub fn summary_to_csv(summary: &[MetricSummary]) -> String {
    let mut s = String::from("metric,runs,failures,min,q1,median,q3,max,lower_whisker,upper_whisker,outliers\n");
    for m in summary {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            m.metric,
            m.runs,
            m.failures,
            m.min,
            m.q1,
            m.median,
            m.q3,
            m.max,
            m.lower_whisker,
            m.upper_whisker,
            m.outliers
        ));
    }
    s
}

pub fn tune_to_csv(t: &TuneResult) -> String {
    let mut s = String::from("cell,hidden_layers,width,l0,gamma,alpha_j,delta,seed_index,val_objective,diverged\n");
    for r in &t.runs {
        let c = &t.cells[r.cell].cell;
        let delta = c.delta.map_or(String::new(), |d| d.to_string());
        s.push_str(&format!(
            "{},{},{},{},{},{},{delta},{},{},{}\n",
            r.cell, c.hidden_layers, c.width, c.l0, c.gamma, c.alpha_j, r.seed_index, r.val_objective, r.diverged
        ));
    }
    s
}
