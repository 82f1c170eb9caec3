//! Incremental-learning diagnostics: average incremental accuracy, base-task
//! forgetting, extractor weight distances, representation similarity and
//! effective-rank trajectories.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};
use crate::linalg::{norm, DenseMatrix};
use crate::net::{epoch_batches, Network};
use crate::rank::{erank, representation_spectrum};
use crate::rng;

/// Published average incremental accuracy (percent) of UCIR with the rank
/// regularizer on CIFAR-100 with 10-class splits and a ResNet-18 backbone.
/// Kept for reference only; the desk-scale harness does not target it.
pub const PUBLISHED_UCIR_RFR_CIFAR100_S10_AIC: f64 = 69.45;

/// One row per session. Field order is the CSV column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub session: usize,
    pub overall_acc: f64,
    /// Accuracy on the classes introduced in this session, measured right after it.
    pub novel_acc: f64,
    pub base_acc: f64,
    pub forgetting: f64,
    pub weight_dist_base: f64,
    pub weight_dist_prev: f64,
    pub cos_sim_base: f64,
    pub cos_sim_prev: f64,
    pub erank_batch_mean: f64,
    pub erank_pool: f64,
    /// Accuracy on this session's classes after the last session.
    pub novel_acc_final: f64,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "session",
    "overall_acc",
    "novel_acc",
    "base_acc",
    "forgetting",
    "weight_dist_base",
    "weight_dist_prev",
    "cos_sim_base",
    "cos_sim_prev",
    "erank_batch_mean",
    "erank_pool",
    "novel_acc_final",
];

impl MetricsRow {
    fn values(&self) -> [f64; 11] {
        [
            self.overall_acc,
            self.novel_acc,
            self.base_acc,
            self.forgetting,
            self.weight_dist_base,
            self.weight_dist_prev,
            self.cos_sim_base,
            self.cos_sim_prev,
            self.erank_batch_mean,
            self.erank_pool,
            self.novel_acc_final,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

type Series = (&'static str, fn(&MetricsRow) -> f64);

impl MetricsLog {
    pub fn overall_accuracies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.overall_acc).collect()
    }

    pub fn aic(&self) -> Result<f64> {
        average_incremental_accuracy(&self.overall_accuracies())
    }

    /// Mean novel-task accuracy over the novel sessions (session 0 excluded).
    pub fn mean_novel_acc(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().skip(1).map(|r| r.novel_acc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.session);
            for v in r.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("metrics serialize")
    }

    /// Two-column `session,value` series, one file per diagnostic.
    pub fn plot_series(&self) -> Vec<(&'static str, String)> {
        let series: [Series; 9] = [
            ("fig_overall_acc.csv", |r| r.overall_acc),
            ("fig_novel_acc.csv", |r| r.novel_acc),
            ("fig_base_acc.csv", |r| r.base_acc),
            ("fig_forgetting.csv", |r| r.forgetting),
            ("fig_weight_dist_base.csv", |r| r.weight_dist_base),
            ("fig_weight_dist_prev.csv", |r| r.weight_dist_prev),
            ("fig_cos_sim_base.csv", |r| r.cos_sim_base),
            ("fig_cos_sim_prev.csv", |r| r.cos_sim_prev),
            ("fig_erank.csv", |r| r.erank_pool),
        ];
        series
            .iter()
            .map(|(name, f)| {
                let mut s = String::from("session,value\n");
                for r in &self.rows {
                    let _ = writeln!(s, "{},{}", r.session, f(r));
                }
                (*name, s)
            })
            .collect()
    }

    pub fn write_plotdata(&self, dir: &Path) -> Result<()> {
        for (name, body) in self.plot_series() {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| RfrError::io(&p, e))?;
        }
        Ok(())
    }
}

/// Mean overall accuracy over all sessions, base session included.
pub fn average_incremental_accuracy(overall_acc_per_session: &[f64]) -> Result<f64> {
    if overall_acc_per_session.is_empty() {
        return Err(RfrError::Empty("no sessions to average"));
    }
    Ok(rounded_mean(overall_acc_per_session))
}

/// Mean with the sum carried in two words and a single final rounding, so
/// e.g. the mean of `[0.8, 0.7, 0.6]` is the double nearest 0.7.
pub fn rounded_mean(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = s + x;
        let bb = t - s;
        c += (s - (t - bb)) + (x - bb);
        s = t;
    }
    let n = xs.len() as f64;
    let q = s / n;
    let r = (-q).mul_add(n, s) + c;
    q + r / n
}

/// `base_acc(0) − base_acc(t)` for every session `t ≥ 1`.
pub fn base_task_forgetting(log: &MetricsLog) -> Result<Vec<f64>> {
    let base = log.rows.first().ok_or(RfrError::MissingBaseline)?.base_acc;
    Ok(log.rows.iter().skip(1).map(|r| base - r.base_acc).collect())
}

fn same_extractor_shape(a: &Network, b: &Network) -> bool {
    a.layers().len() == b.layers().len()
        && a
            .layers()
            .iter()
            .zip(b.layers())
            .all(|(x, y)| x.affine.weights.shape() == y.affine.weights.shape())
}

/// L2 norm of the difference of all extractor parameters (weights and biases, head excluded).
pub fn weight_distance(a: &Network, b: &Network) -> Result<f64> {
    if !same_extractor_shape(a, b) {
        return Err(RfrError::ShapeMismatch);
    }
    let pa = a.extractor_params_flat();
    let pb = b.extractor_params_flat();
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Mean cosine similarity between the two networks' features on the probe inputs.
pub fn representation_cosine(a: &Network, b: &Network, probe: &DenseMatrix) -> Result<f64> {
    if a.input_dim() != b.input_dim() || a.feature_dim() != b.feature_dim() {
        return Err(RfrError::ShapeMismatch);
    }
    if probe.rows() == 0 {
        return Err(RfrError::Empty("probe set"));
    }
    let fa = a.features(probe)?;
    let fb = b.features(probe)?;
    let mut total = 0.0;
    for i in 0..probe.rows() {
        let (ra, rb) = (fa.row(i), fb.row(i));
        let (na, nb) = (norm(ra), norm(rb));
        if na < crate::linalg::ZERO_ROW_NORM || nb < crate::linalg::ZERO_ROW_NORM {
            return Err(RfrError::ZeroRow(i));
        }
        let c: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        total += c.clamp(-1.0, 1.0);
    }
    Ok(total / probe.rows() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Mean erank over disjoint seeded batches.
    BatchMean,
    /// Erank of the whole pooled representation matrix.
    Pool,
}

/// Effective rank of the network's features on `pool`.
///
/// Batch mode shuffles the pool with `seed`, splits it into disjoint batches
/// of `batch_size` (a short tail is merged into the last batch) and averages.
pub fn rank_trajectory(
    net: &Network,
    pool: &DenseMatrix,
    batch_size: usize,
    mode: RankMode,
    seed: u64,
) -> Result<f64> {
    let d = net.feature_dim();
    let feats = net.features(pool)?;
    match mode {
        RankMode::Pool => {
            if feats.rows() <= d {
                return Err(RfrError::Dimension(format!(
                    "pool of {} samples does not exceed feature dim {d}",
                    feats.rows()
                )));
            }
            erank(&representation_spectrum(&feats)?)
        }
        RankMode::BatchMean => {
            if batch_size <= d || feats.rows() <= d {
                return Err(RfrError::Dimension(format!(
                    "batch size {batch_size} and pool size {} must exceed feature dim {d}",
                    feats.rows()
                )));
            }
            let mut r = rng::stream(seed, rng::STREAM_PROBE);
            let batches = epoch_batches(feats.rows(), batch_size, &mut r);
            let mut sum = 0.0;
            for idx in &batches {
                sum += erank(&representation_spectrum(&feats.select_rows(idx))?)?;
            }
            Ok(sum / batches.len() as f64)
        }
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
