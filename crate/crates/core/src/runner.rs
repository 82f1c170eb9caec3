//! Multi-seed experiment execution and sweeps.
//!
//! Layout under `<outdir>/<name>/`:
//!
//! ```text
//! config.toml
//! summary.json
//! seed<k>/session<j>.json
//! seed<k>/metrics.csv
//! seed<k>/metrics.json
//! seed<k>/fig_*.csv          (with `plotdata = true`)
//! sweep_<param>.csv          (sweeps only)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{RfrError, Result};
use crate::harness::{run_protocol, SessionRecord};
use crate::metrics::{mean_std, MetricsLog};

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<SessionRecord>,
    pub log: MetricsLog,
}

impl SeedRun {
    pub fn aic(&self) -> f64 {
        self.log.aic().expect("at least the base session")
    }
}

/// One protocol run of `cfg` with the given seed. Nothing is written.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, base_dir: Option<&Path>) -> Result<SeedRun> {
    let data = cfg.load_dataset(seed, base_dir)?;
    let setup = cfg.protocol_setup(data.input_dim(), seed, base_dir)?;
    let run = run_protocol(&setup, &data)?;
    Ok(SeedRun {
        seed,
        records: run.records,
        log: run.log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Stat { mean, std }
    }
}

/// Aggregate over seeds; accuracies are fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seeds: Vec<u64>,
    pub aic_per_seed: Vec<f64>,
    pub aic: Stat,
    pub mean_novel_acc: Stat,
    pub final_forgetting: Stat,
    pub final_weight_dist_base: Stat,
    pub base_erank_pool: Stat,
}

impl Summary {
    pub fn from_runs(name: &str, runs: &[SeedRun]) -> Self {
        let col = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        let aic = col(&|r| r.aic());
        Summary {
            name: name.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            aic: Stat::of(&aic),
            aic_per_seed: aic,
            mean_novel_acc: Stat::of(&col(&|r| r.log.mean_novel_acc().unwrap_or(f64::NAN))),
            final_forgetting: Stat::of(&col(&|r| r.log.rows.last().unwrap().forgetting)),
            final_weight_dist_base: Stat::of(&col(&|r| r.log.rows.last().unwrap().weight_dist_base)),
            base_erank_pool: Stat::of(&col(&|r| r.log.rows[0].erank_pool)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| RfrError::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| RfrError::io(path, e))
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.outdir.join(&cfg.name)
}

fn write_seed(dir: &Path, run: &SeedRun, plotdata: bool) -> Result<()> {
    mkdir(dir)?;
    for rec in &run.records {
        let body = serde_json::to_string_pretty(rec)?;
        write(&dir.join(format!("session{}.json", rec.session)), body)?;
    }
    write(&dir.join("metrics.csv"), run.log.to_csv())?;
    write(&dir.join("metrics.json"), run.log.to_json())?;
    if plotdata {
        run.log.write_plotdata(dir)?;
    }
    Ok(())
}

/// Runs `f` on a pool of `jobs` threads (0 = rayon's default).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| RfrError::Config(vec![format!("jobs: {e}")]))?;
    Ok(pool.install(f))
}

/// Validates, runs every seed and writes all artifacts. Each run writes only its own `seed<k>` directory.
pub fn run_train(cfg: &ExperimentConfig, base_dir: Option<&Path>, jobs: usize) -> Result<Summary> {
    cfg.validate()?;
    let root = run_dir(cfg);
    mkdir(&root)?;
    write(&root.join("config.toml"), cfg.to_toml_string())?;
    let runs: Vec<SeedRun> = with_pool(jobs, || {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let run = run_seed(cfg, seed, base_dir)?;
                write_seed(&root.join(format!("seed{seed}")), &run, cfg.plotdata)?;
                log::info!("seed {seed}: AIC {:.2}%", 100.0 * run.aic());
                Ok(run)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let summary = Summary::from_runs(&cfg.name, &runs);
    write(&root.join("summary.json"), summary.to_json())?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    BaseClasses,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::BaseClasses => "base_classes",
        }
    }

    fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Alpha => c.method.alpha = value,
            SweepParam::BaseClasses => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(RfrError::Config(vec![format!(
                        "sweep values: base_classes must be a positive integer, got {value}"
                    )]));
                }
                c.split.base_classes = value as usize;
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// `None` on the per-value mean rows.
    pub seed: Option<u64>,
    pub aic: f64,
    /// Same cell with alpha = 0.
    pub aic_baseline: f64,
    pub improvement: f64,
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = String::from("param,value,seed,aic,aic_baseline,improvement\n");
    for r in rows {
        let seed = r.seed.map_or("mean".to_string(), |k| k.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            param.name(),
            r.value,
            seed,
            r.aic,
            r.aic_baseline,
            r.improvement
        );
    }
    s
}

/// Runs every `(value, seed)` cell plus its alpha = 0 baseline and writes
/// `sweep_<param>.csv`. Rows are ordered by value then seed, each value
/// followed by its mean row.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    base_dir: Option<&Path>,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(RfrError::Config(vec!["sweep values: at least one value is required".into()]));
    }
    let mut cells = Vec::new();
    let mut problems = Vec::new();
    for &v in values {
        match param.apply(cfg, v) {
            Ok(c) => {
                problems.extend(c.problems().into_iter().map(|p| format!("{}={v}: {p}", param.name())));
                let mut base = c.clone();
                base.method.alpha = 0.0;
                cells.push((v, c, base));
            }
            Err(RfrError::Config(p)) => problems.extend(p),
            Err(e) => return Err(e),
        }
    }
    if !problems.is_empty() {
        return Err(RfrError::Config(problems));
    }
    let jobs_list: Vec<(usize, u64, bool)> = (0..cells.len())
        .flat_map(|i| cfg.seeds.iter().flat_map(move |&s| [(i, s, false), (i, s, true)]))
        .collect();
    let aics: Vec<f64> = with_pool(jobs, || {
        jobs_list
            .par_iter()
            .map(|&(i, seed, baseline)| {
                let c = if baseline { &cells[i].2 } else { &cells[i].1 };
                // an alpha = 0 cell is its own baseline; skip the duplicate work
                if baseline && cells[i].1.method.alpha == 0.0 {
                    return Ok(f64::NAN);
                }
                Ok(run_seed(c, seed, base_dir)?.aic())
            })
            .collect::<Result<Vec<f64>>>()
    })??;
    let mut rows = Vec::new();
    let mut k = 0;
    for (v, _, _) in &cells {
        let mut cell_rows = Vec::new();
        for &seed in &cfg.seeds {
            let aic = aics[k];
            let baseline = if aics[k + 1].is_nan() { aic } else { aics[k + 1] };
            k += 2;
            cell_rows.push(SweepRow {
                value: *v,
                seed: Some(seed),
                aic,
                aic_baseline: baseline,
                improvement: aic - baseline,
            });
        }
        let mean = |f: fn(&SweepRow) -> f64| cell_rows.iter().map(f).sum::<f64>() / cell_rows.len() as f64;
        let mean_row = SweepRow {
            value: *v,
            seed: None,
            aic: mean(|r| r.aic),
            aic_baseline: mean(|r| r.aic_baseline),
            improvement: mean(|r| r.improvement),
        };
        rows.extend(cell_rows);
        rows.push(mean_row);
    }
    let root = run_dir(cfg);
    mkdir(&root)?;
    write(&root.join(format!("sweep_{}.csv", param.name())), sweep_csv(param, &rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;

    fn tiny(outdir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.outdir = outdir.to_path_buf();
        cfg.name = "tiny".into();
        cfg.seeds = vec![3, 4];
        cfg.dataset = DatasetConfig::Synthetic {
            num_classes: 6,
            dim: 8,
            per_class: 20,
            spread: 0.3,
            data_seed: None,
            standardize: false,
        };
        cfg.split.base_classes = 4;
        cfg.split.split_size = 2;
        cfg.network.hidden = vec![16];
        cfg.network.feature_dim = 4;
        cfg.schedule.base.epochs = 2;
        cfg.schedule.base.batch_size = 16;
        cfg.schedule.novel.epochs = 1;
        cfg.schedule.novel.batch_size = 16;
        cfg.method.probe_batch_size = 8;
        cfg
    }

    #[test]
    fn train_writes_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let summary = run_train(&cfg, None, 1).unwrap();
        let root = dir.path().join("tiny");
        for f in ["config.toml", "summary.json", "seed3/session0.json", "seed3/session1.json", "seed4/metrics.csv"] {
            assert!(root.join(f).is_file(), "{f}");
        }
        assert_eq!(summary.seeds, vec![3, 4]);
        assert_eq!(summary.aic_per_seed.len(), 2);
        let again = ExperimentConfig::load(root.join("config.toml")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn sweep_rows_and_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let rows = run_sweep(&cfg, SweepParam::Alpha, &[0.0, 0.1], None, 1).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        assert!(rows[..3].iter().all(|r| r.improvement == 0.0));
        assert!(rows[2].seed.is_none());
        let csv = std::fs::read_to_string(dir.path().join("tiny/sweep_alpha.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(matches!(
            run_sweep(&cfg, SweepParam::BaseClasses, &[1.5], None, 1),
            Err(RfrError::Config(_))
        ));
        assert!(run_sweep(&cfg, SweepParam::Alpha, &[], None, 1).is_err());
    }
}
