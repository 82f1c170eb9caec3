//! Class-incremental protocol: a base session trained from scratch followed
//! by novel sessions that each add a fixed number of classes to a single
//! expanding head.
//!
//! Head rows follow the class ordering, so the class introduced `k`-th owns
//! head row `k`. Evaluation never uses task identity.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Subset, TaskSplit};
use crate::error::{RfrError, Result};
use crate::linalg::DenseMatrix;
use crate::metrics::{
    rank_trajectory, representation_cosine, weight_distance, MetricsLog, MetricsRow, RankMode,
};
use crate::net::{
    argmax, epoch_batches, objective_and_backward, sgd_step, Batch, Distill, HeadInit, Network,
    NetworkSpec, Objective, ParamSet, Regularizer, TrainSchedule,
};
use crate::rng;

/// How a novel session continues from the previous network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// All parameters, cross-entropy only.
    #[default]
    Finetune,
    /// Head-only updates on a fixed extractor.
    Frozen,
    /// Cross-entropy plus distillation against the previous network.
    Distill,
    /// Exemplars mixed into every batch.
    Replay,
    DistillReplay,
}

impl Strategy {
    pub fn distills(self) -> bool {
        matches!(self, Strategy::Distill | Strategy::DistillReplay)
    }

    pub fn replays(self) -> bool {
        matches!(self, Strategy::Replay | Strategy::DistillReplay)
    }
}

/// Sessions in which the representation regularizer is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegScope {
    #[default]
    BaseOnly,
    BaseAndNovel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub split: TaskSplit,
    pub strategy: Strategy,
    pub alpha: f64,
    pub regularizer: Regularizer,
    pub reg_scope: RegScope,
    pub exemplars_per_class: usize,
    pub distill_temperature: f64,
    pub distill_weight: f64,
    pub head_init: HeadInit,
}

impl SessionPlan {
    pub fn new(split: TaskSplit, strategy: Strategy, alpha: f64) -> Self {
        SessionPlan {
            split,
            strategy,
            alpha,
            regularizer: Regularizer::Rfr,
            reg_scope: RegScope::BaseOnly,
            exemplars_per_class: 0,
            distill_temperature: 2.0,
            distill_weight: 1.0,
            head_init: HeadInit::HeUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            problems.push(format!("alpha: must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.distill_temperature > 0.0) {
            problems.push(format!(
                "distill_temperature: must be positive, got {}",
                self.distill_temperature
            ));
        }
        if !(self.distill_weight >= 0.0) {
            problems.push(format!("distill_weight: must be >= 0, got {}", self.distill_weight));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RfrError::Config(problems))
        }
    }

    fn objective_alpha(&self, session: usize) -> f64 {
        if session == 0 || self.reg_scope == RegScope::BaseAndNovel {
            self.alpha
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub session_index: usize,
    pub network: Network,
    /// Class ids in head-row order.
    pub seen_classes: Vec<usize>,
    /// Exemplar input rows per class id.
    pub exemplar_store: BTreeMap<usize, DenseMatrix>,
    pub snapshot_base: Option<Network>,
    pub snapshot_prev: Option<Network>,
}

impl SessionState {
    pub fn head_row(&self, class: usize) -> Option<usize> {
        self.seen_classes.iter().position(|&c| c == class)
    }

    pub fn exemplar_count(&self) -> usize {
        self.exemplar_store.values().map(DenseMatrix::rows).sum()
    }

    /// Rows of `data` whose classes are seen, relabeled to head rows.
    pub fn to_head_labels(&self, data: &Subset) -> Result<Subset> {
        let labels = data
            .labels
            .iter()
            .map(|&c| self.head_row(c).ok_or(RfrError::UnseenClassInEval(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Subset {
            inputs: data.inputs.clone(),
            labels,
        })
    }

    fn exemplar_pool(&self) -> Option<Subset> {
        if self.exemplar_count() == 0 {
            return None;
        }
        let mut blocks = Vec::new();
        let mut labels = Vec::new();
        for (&class, rows) in &self.exemplar_store {
            let head = self.head_row(class).expect("exemplar class is seen");
            labels.extend(std::iter::repeat_n(head, rows.rows()));
            blocks.push(rows.clone());
        }
        let inputs = blocks
            .into_iter()
            .reduce(|a, b| a.vstack(&b).expect("exemplar widths agree"))
            .unwrap();
        Some(Subset { inputs, labels })
    }
}

/// Greedy herding over one class's feature rows.
///
/// Step `k` picks the unselected row that brings the mean of the `k` chosen
/// rows closest to the class mean; ties go to the lowest index.
pub fn select_exemplars(features: &DenseMatrix, budget: usize) -> Vec<usize> {
    let (n, d) = features.shape();
    let take = budget.min(n);
    if take == 0 {
        return Vec::new();
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut chosen = Vec::with_capacity(take);
    let mut used = vec![false; n];
    let mut running = vec![0.0; d];
    for k in 1..=take {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let row = features.row(i);
            let dist: f64 = (0..d)
                .map(|j| {
                    let m = (running[j] + row[j]) / k as f64;
                    (mean[j] - m).powi(2)
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.unwrap();
        used[i] = true;
        chosen.push(i);
        for (r, v) in running.iter_mut().zip(features.row(i)) {
            *r += v;
        }
    }
    chosen
}

fn add_exemplars(
    state: &mut SessionState,
    train: &Subset,
    classes: &[usize],
    budget: usize,
) -> Result<()> {
    if budget == 0 {
        return Ok(());
    }
    for &c in classes {
        let rows = train.restrict(&[c]);
        if rows.is_empty() {
            continue;
        }
        let feats = state.network.features(&rows.inputs)?;
        let picked = select_exemplars(&feats, budget);
        state.exemplar_store.insert(c, rows.inputs.select_rows(&picked));
    }
    Ok(())
}

fn session_rng(schedule: &TrainSchedule, stream: u64) -> rng::Rng {
    rng::stream(schedule.seed, stream)
}

/// One session's optimisation loop. `train` labels are head rows.
#[allow(clippy::too_many_arguments)]
fn train_session(
    net: &mut Network,
    train: &Subset,
    replay: Option<&Subset>,
    teacher: Option<(&Network, f64, f64)>,
    alpha: f64,
    regularizer: Regularizer,
    train_extractor: bool,
    schedule: &TrainSchedule,
) -> Result<()> {
    let rfr_active = alpha > 0.0 && regularizer == Regularizer::Rfr;
    schedule.validate(net.feature_dim(), rfr_active)?;
    if train.is_empty() {
        return Err(RfrError::Empty("training data for session"));
    }
    let bs = schedule.batch_size;
    let (new_per_batch, ex_per_batch) = match replay {
        Some(_) => (bs - bs / 2, bs / 2),
        None => (bs, 0),
    };
    let mut shuffle = session_rng(schedule, rng::STREAM_SHUFFLE);
    let mut draw = session_rng(schedule, rng::STREAM_REPLAY);
    let mut velocity = ParamSet::zeros_like(net);
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        for idx in epoch_batches(train.len(), new_per_batch, &mut shuffle) {
            let mut batch = Batch {
                inputs: train.inputs.select_rows(&idx),
                labels: idx.iter().map(|&i| train.labels[i]).collect(),
            };
            if let Some(pool) = replay {
                let want = (idx.len() * ex_per_batch + new_per_batch / 2) / new_per_batch;
                let picks: Vec<usize> = if pool.len() >= want {
                    sample(&mut draw, pool.len(), want).into_vec()
                } else {
                    (0..want).map(|_| draw.gen_range(0..pool.len())).collect()
                };
                batch.inputs = batch.inputs.vstack(&pool.inputs.select_rows(&picks))?;
                batch.labels.extend(picks.iter().map(|&i| pool.labels[i]));
            }
            let teacher_logits = match teacher {
                Some((t, _, w)) if w != 0.0 => Some(t.forward(&batch.inputs)?.logits),
                _ => None,
            };
            let obj = Objective {
                alpha,
                regularizer,
                distill: teacher_logits.as_ref().map(|tl| Distill {
                    teacher_logits: tl,
                    temperature: teacher.unwrap().1,
                    weight: teacher.unwrap().2,
                }),
                train_extractor,
            };
            let (_, grads) = objective_and_backward(net, &batch, &obj)?;
            sgd_step(net, &grads, lr, schedule.momentum, &mut velocity)?;
        }
    }
    Ok(())
}

/// Trains a fresh network on the base classes with `CE + α·reg`.
pub fn run_base_session(
    plan: &SessionPlan,
    spec: &NetworkSpec,
    data: &LabeledDataset,
    schedule: &TrainSchedule,
) -> Result<SessionState> {
    plan.validate()?;
    let base = plan.split.base.clone();
    let mut state = SessionState {
        session_index: 0,
        network: Network::new(spec, base.len(), schedule.seed)?,
        seen_classes: base.clone(),
        exemplar_store: BTreeMap::new(),
        snapshot_base: None,
        snapshot_prev: None,
    };
    let train = data.train().restrict(&base);
    let labelled = state.to_head_labels(&train)?;
    train_session(
        &mut state.network,
        &labelled,
        None,
        None,
        plan.objective_alpha(0),
        plan.regularizer,
        true,
        schedule,
    )?;
    add_exemplars(&mut state, &train, &base, plan.exemplars_per_class)?;
    state.snapshot_base = Some(state.network.clone());
    state.snapshot_prev = Some(state.network.clone());
    Ok(state)
}

/// Adds `new_classes` to the head and trains according to the plan's strategy.
pub fn run_novel_session(
    state: &SessionState,
    plan: &SessionPlan,
    new_classes: &[usize],
    data: &LabeledDataset,
    schedule: &TrainSchedule,
) -> Result<SessionState> {
    plan.validate()?;
    let overlap: Vec<usize> = new_classes
        .iter()
        .copied()
        .filter(|c| state.seen_classes.contains(c))
        .collect();
    if !overlap.is_empty() {
        return Err(RfrError::ClassOverlap(overlap));
    }
    if new_classes.is_empty() {
        return Err(RfrError::Empty("novel session without classes"));
    }
    state
        .snapshot_base
        .as_ref()
        .ok_or(RfrError::MissingSnapshot("base"))?;
    let teacher = state
        .snapshot_prev
        .as_ref()
        .ok_or(RfrError::MissingSnapshot("previous"))?;

    let session = state.session_index + 1;
    let mut next = state.clone();
    next.session_index = session;
    next.seen_classes.extend_from_slice(new_classes);
    next.network = state
        .network
        .expand_head(next.seen_classes.len(), plan.head_init)?;

    let train = data.train().restrict(new_classes);
    let labelled = next.to_head_labels(&train)?;
    let replay = if plan.strategy.replays() {
        next.exemplar_pool()
    } else {
        None
    };
    let distill = plan
        .strategy
        .distills()
        .then_some((teacher, plan.distill_temperature, plan.distill_weight));
    train_session(
        &mut next.network,
        &labelled,
        replay.as_ref(),
        distill,
        plan.objective_alpha(session),
        plan.regularizer,
        plan.strategy != Strategy::Frozen,
        schedule,
    )?;
    add_exemplars(&mut next, &train, new_classes, plan.exemplars_per_class)?;
    next.snapshot_prev = Some(next.network.clone());
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy per class id.
    pub per_class: BTreeMap<usize, f64>,
    pub overall: f64,
}

impl EvalReport {
    /// Sample-weighted accuracy restricted to `classes`, from per-class counts.
    fn subset_accuracy(counts: &BTreeMap<usize, (usize, usize)>, classes: &[usize]) -> f64 {
        let (hit, total) = classes
            .iter()
            .filter_map(|c| counts.get(c))
            .fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

fn class_counts(state: &SessionState, eval: &Subset) -> Result<BTreeMap<usize, (usize, usize)>> {
    let labelled = state.to_head_labels(eval)?;
    let logits = state.network.forward(&labelled.inputs)?.logits;
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &class) in eval.labels.iter().enumerate() {
        let e = counts.entry(class).or_default();
        e.1 += 1;
        if argmax(logits.row(i)) == labelled.labels[i] {
            e.0 += 1;
        }
    }
    Ok(counts)
}

/// Argmax over every head row; `eval` labels are class ids and must all be seen.
pub fn evaluate_overall(state: &SessionState, eval: &Subset) -> Result<EvalReport> {
    let counts = class_counts(state, eval)?;
    let per_class = counts
        .iter()
        .map(|(&c, &(h, t))| (c, h as f64 / t as f64))
        .collect();
    let (hit, total) = counts.values().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    Ok(EvalReport {
        per_class,
        overall: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
    })
}

/// Everything a protocol run needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSetup {
    pub plan: SessionPlan,
    pub network: NetworkSpec,
    pub base_schedule: TrainSchedule,
    pub novel_schedule: TrainSchedule,
    /// Batch size for batch-mean effective rank probes.
    pub probe_batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: usize,
    pub new_classes: Vec<usize>,
    pub per_class_acc: BTreeMap<usize, f64>,
    pub overall_acc: f64,
    pub novel_acc_at_session: f64,
    pub novel_acc_final: f64,
    pub base_acc: f64,
    pub diagnostics: MetricsRow,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub records: Vec<SessionRecord>,
    pub log: MetricsLog,
    pub final_state: SessionState,
}

fn session_schedule(base: &TrainSchedule, session: usize) -> TrainSchedule {
    TrainSchedule {
        seed: rng::derive_seed(base.seed, session as u64),
        ..base.clone()
    }
}

/// Runs every session of the plan and records the diagnostics after each one.
///
/// Cosine similarity and effective rank are probed on the base classes'
/// eval rows; `prev` comparisons at session 0 are against the network itself.
pub fn run_protocol(setup: &ProtocolSetup, data: &LabeledDataset) -> Result<ProtocolRun> {
    let plan = &setup.plan;
    let eval = data.eval();
    let base_probe = eval.restrict(&plan.split.base);
    if base_probe.is_empty() {
        return Err(RfrError::Empty("eval rows for the base classes"));
    }

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut states: Vec<SessionState> = Vec::new();
    for t in 0..plan.split.num_sessions() {
        let started = Instant::now();
        let state = if t == 0 {
            run_base_session(plan, &setup.network, data, &setup.base_schedule)?
        } else {
            run_novel_session(
                states.last().unwrap(),
                plan,
                plan.split.session_classes(t),
                data,
                &session_schedule(&setup.novel_schedule, t),
            )?
        };
        let seen_eval = eval.restrict(&state.seen_classes);
        let counts = class_counts(&state, &seen_eval)?;
        let report = evaluate_overall(&state, &seen_eval)?;
        let new_classes = plan.split.session_classes(t).to_vec();
        let base_acc = EvalReport::subset_accuracy(&counts, &plan.split.base);
        let novel_acc = EvalReport::subset_accuracy(&counts, &new_classes);

        let base_net = state.snapshot_base.as_ref().unwrap();
        let prev_net = states.last().map_or(&state.network, |s| &s.network);
        let seed = setup.base_schedule.seed;
        let row = MetricsRow {
            session: t,
            overall_acc: report.overall,
            novel_acc,
            base_acc,
            forgetting: rows.first().map_or(0.0, |r: &MetricsRow| r.base_acc - base_acc),
            weight_dist_base: weight_distance(base_net, &state.network)?,
            weight_dist_prev: weight_distance(prev_net, &state.network)?,
            cos_sim_base: representation_cosine(base_net, &state.network, &base_probe.inputs)?,
            cos_sim_prev: representation_cosine(prev_net, &state.network, &base_probe.inputs)?,
            erank_batch_mean: rank_trajectory(
                &state.network,
                &base_probe.inputs,
                setup.probe_batch_size,
                RankMode::BatchMean,
                seed,
            )?,
            erank_pool: rank_trajectory(&state.network, &base_probe.inputs, 0, RankMode::Pool, seed)?,
            novel_acc_final: 0.0,
        };
        records.push(SessionRecord {
            session: t,
            new_classes,
            per_class_acc: report.per_class,
            overall_acc: report.overall,
            novel_acc_at_session: novel_acc,
            novel_acc_final: 0.0,
            base_acc,
            diagnostics: row.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        rows.push(row);
        states.push(state);
    }

    let final_state = states.pop().unwrap();
    let final_counts = class_counts(&final_state, &eval.restrict(&final_state.seen_classes))?;
    for (t, (row, rec)) in rows.iter_mut().zip(records.iter_mut()).enumerate() {
        let acc = EvalReport::subset_accuracy(&final_counts, plan.split.session_classes(t));
        row.novel_acc_final = acc;
        rec.novel_acc_final = acc;
        rec.diagnostics.novel_acc_final = acc;
    }
    Ok(ProtocolRun {
        records,
        log: MetricsLog { rows },
        final_state,
    })
}
