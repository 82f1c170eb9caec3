//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, OrderingSource};
use crate::error::{RfrError, Result};
use crate::harness::{ProtocolSetup, RegScope, SessionPlan, Strategy};
use crate::net::{Activation, HeadInit, LrStep, NetworkSpec, Regularizer, TrainSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        /// Fixed dataset seed; when absent each run seed generates its own data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
        #[serde(default)]
        standardize: bool,
    },
    Cifar100 {
        train_path: PathBuf,
        test_path: PathBuf,
        #[serde(default)]
        standardize: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub base_classes: usize,
    pub split_size: usize,
    /// Class ordering file; when absent the ordering is drawn from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub feature_activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_step: Option<LrStep>,
}

impl PhaseSchedule {
    pub fn with_seed(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            lr_step: self.lr_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base: PhaseSchedule,
    pub novel: PhaseSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub strategy: Strategy,
    pub alpha: f64,
    pub regularizer: Regularizer,
    pub reg_scope: RegScope,
    pub exemplars_per_class: usize,
    pub distill_temperature: f64,
    pub distill_weight: f64,
    pub head_init: HeadInit,
    pub probe_batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub outdir: PathBuf,
    pub seeds: Vec<u64>,
    /// Energy fraction for trank in rank reports.
    pub rho: f64,
    /// Also write per-figure `fig_*.csv` series for every run.
    #[serde(default)]
    pub plotdata: bool,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub method: MethodConfig,
}

impl Default for ExperimentConfig {
    /// The synthetic desk-scale benchmark: 32 blob classes in 32 dimensions,
    /// a 32-64-64-16 MLP, 16 base classes and tasks of 4.
    fn default() -> Self {
        ExperimentConfig {
            name: "rfr".into(),
            outdir: "runs".into(),
            seeds: vec![0, 1, 2, 3, 4],
            rho: 0.9,
            plotdata: false,
            dataset: DatasetConfig::Synthetic {
                num_classes: 32,
                dim: 32,
                per_class: 100,
                spread: 0.3,
                data_seed: None,
                standardize: false,
            },
            split: SplitConfig {
                base_classes: 16,
                split_size: 4,
                ordering_file: None,
            },
            network: NetworkConfig {
                hidden: vec![64, 64],
                feature_dim: 16,
                activation: Activation::Relu,
                feature_activation: Activation::Identity,
            },
            schedule: ScheduleConfig {
                base: PhaseSchedule {
                    epochs: 30,
                    batch_size: 64,
                    learning_rate: 0.05,
                    momentum: 0.9,
                    lr_step: None,
                },
                novel: PhaseSchedule {
                    epochs: 4,
                    batch_size: 64,
                    learning_rate: 0.01,
                    momentum: 0.9,
                    lr_step: None,
                },
            },
            method: MethodConfig {
                strategy: Strategy::Finetune,
                alpha: 0.1,
                regularizer: Regularizer::Rfr,
                reg_scope: RegScope::BaseOnly,
                exemplars_per_class: 0,
                distill_temperature: 2.0,
                distill_weight: 1.0,
                head_init: HeadInit::HeUniform,
                probe_batch_size: 64,
            },
        }
    }
}

fn check_phase(name: &str, p: &PhaseSchedule, feature_dim: usize, rfr: bool, out: &mut Vec<String>) {
    let sched = p.with_seed(0);
    if let Err(RfrError::Config(problems)) = sched.validate(feature_dim, rfr) {
        out.extend(problems.into_iter().map(|m| format!("schedule.{name}.{m}")));
    }
    if p.epochs == 0 {
        out.push(format!("schedule.{name}.epochs: must be at least 1"));
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| RfrError::Config(vec![e.to_string()]))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RfrError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Synthetic { num_classes, .. } => *num_classes,
            DatasetConfig::Cifar100 { .. } => data::CIFAR100_CLASSES,
        }
    }

    /// Every problem in the configuration, each naming its field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            p.push(format!("name: must be a plain directory name, got {:?}", self.name));
        }
        if self.seeds.is_empty() {
            p.push("seeds: at least one seed is required".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            p.push(format!("rho: must be in (0, 1], got {}", self.rho));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                dim,
                per_class,
                spread,
                ..
            } => {
                if *num_classes < 2 {
                    p.push(format!("dataset.num_classes: must be at least 2, got {num_classes}"));
                }
                if *dim == 0 {
                    p.push("dataset.dim: must be positive".into());
                }
                if *per_class < 2 {
                    p.push(format!(
                        "dataset.per_class: need at least 2 samples per class for a train/eval split, got {per_class}"
                    ));
                }
                if !(*spread > 0.0) {
                    p.push(format!("dataset.spread: must be positive, got {spread}"));
                }
            }
            DatasetConfig::Cifar100 { train_path, test_path, .. } => {
                if train_path.as_os_str().is_empty() {
                    p.push("dataset.train_path: must be set".into());
                }
                if test_path.as_os_str().is_empty() {
                    p.push("dataset.test_path: must be set".into());
                }
            }
        }
        let c = self.num_classes();
        let (b, s) = (self.split.base_classes, self.split.split_size);
        if b == 0 {
            p.push("split.base_classes: must be positive".into());
        } else if b > c {
            p.push(format!("split.base_classes: {b} exceeds the {c} classes of the dataset"));
        }
        if s == 0 {
            p.push("split.split_size: must be positive".into());
        } else if b > 0 && b < c && b + s > c {
            p.push(format!(
                "split.split_size: base_classes + split_size = {} exceeds the {c} classes",
                b + s
            ));
        }
        let d = self.network.feature_dim;
        if d == 0 {
            p.push("network.feature_dim: must be positive".into());
        }
        if self.network.hidden.contains(&0) {
            p.push("network.hidden: layer widths must be positive".into());
        }
        let m = &self.method;
        if !(m.alpha >= 0.0) || !m.alpha.is_finite() {
            p.push(format!("method.alpha: must be finite and >= 0, got {}", m.alpha));
        }
        if !(m.distill_temperature > 0.0) {
            p.push(format!(
                "method.distill_temperature: must be positive, got {}",
                m.distill_temperature
            ));
        }
        if !(m.distill_weight >= 0.0) {
            p.push(format!("method.distill_weight: must be >= 0, got {}", m.distill_weight));
        }
        if m.probe_batch_size <= d {
            p.push(format!(
                "method.probe_batch_size: must exceed feature_dim = {d}, got {}",
                m.probe_batch_size
            ));
        }
        let rfr = m.alpha > 0.0 && m.regularizer == Regularizer::Rfr;
        check_phase("base", &self.schedule.base, d, rfr, &mut p);
        check_phase(
            "novel",
            &self.schedule.novel,
            d,
            rfr && m.reg_scope == RegScope::BaseAndNovel,
            &mut p,
        );
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if !p.is_empty() {
            return Err(RfrError::Config(p));
        }
        if self.method.reg_scope == RegScope::BaseAndNovel && self.method.alpha == 0.0 {
            log::warn!("method.reg_scope = base_and_novel has no effect with alpha = 0");
        }
        Ok(())
    }

    /// Loads or generates the dataset for one run seed. Relative paths resolve against `base_dir`.
    pub fn load_dataset(&self, seed: u64, base_dir: Option<&Path>) -> Result<LabeledDataset> {
        let (mut ds, standardize) = match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                dim,
                per_class,
                spread,
                data_seed,
                standardize,
            } => (
                data::make_gaussian_blobs(*num_classes, *dim, *per_class, *spread, data_seed.unwrap_or(seed))?,
                *standardize,
            ),
            DatasetConfig::Cifar100 {
                train_path,
                test_path,
                standardize,
            } => (
                data::load_cifar100(
                    data::resolve_path(base_dir, train_path),
                    data::resolve_path(base_dir, test_path),
                )?,
                *standardize,
            ),
        };
        if standardize {
            ds.standardize();
        }
        Ok(ds)
    }

    pub fn ordering_source(&self, seed: u64, base_dir: Option<&Path>) -> Result<OrderingSource> {
        Ok(match &self.split.ordering_file {
            Some(f) => OrderingSource::Explicit(data::load_ordering(data::resolve_path(base_dir, f))?),
            None => OrderingSource::Seed(seed),
        })
    }

    /// Protocol setup for one run seed.
    pub fn protocol_setup(&self, input_dim: usize, seed: u64, base_dir: Option<&Path>) -> Result<ProtocolSetup> {
        let split = data::make_task_split(
            self.num_classes(),
            self.split.base_classes,
            self.split.split_size,
            &self.ordering_source(seed, base_dir)?,
        )?;
        let m = &self.method;
        let plan = SessionPlan {
            split,
            strategy: m.strategy,
            alpha: m.alpha,
            regularizer: m.regularizer,
            reg_scope: m.reg_scope,
            exemplars_per_class: m.exemplars_per_class,
            distill_temperature: m.distill_temperature,
            distill_weight: m.distill_weight,
            head_init: m.head_init,
        };
        Ok(ProtocolSetup {
            plan,
            network: NetworkSpec {
                input_dim,
                hidden: self.network.hidden.clone(),
                feature_dim: self.network.feature_dim,
                activation: self.network.activation,
                feature_activation: self.network.feature_activation,
            },
            base_schedule: self.schedule.base.with_seed(seed),
            novel_schedule: self.schedule.novel.with_seed(seed),
            probe_batch_size: m.probe_batch_size,
        })
    }
}
