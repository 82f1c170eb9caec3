//! One PASS/FAIL line per acceptance criterion, in order, with timings.
//!
//! Lines go straight to stderr so they show up without `--nocapture`.

mod common;

use std::io::Write as _;
use std::time::{Duration, Instant};

use rand::Rng as _;

use common::{network_gradient_check, rfr_gradient_check, small_net};
use rfr_core::checks::{run_battery, VerifyOptions};
use rfr_core::config::{DatasetConfig, ExperimentConfig};
use rfr_core::data::{encode_cifar100, make_task_split, parse_cifar100_binary, OrderingSource, CIFAR100_PIXELS};
use rfr_core::error::RfrError;
use rfr_core::harness::{RegScope, Strategy};
use rfr_core::linalg::DenseMatrix;
use rfr_core::metrics::{average_incremental_accuracy, mean_std};
use rfr_core::rank::{algebraic_rank, erank, representation_spectrum, rfr_loss_and_grad, trank};
use rfr_core::rng;
use rfr_core::runner::{run_seed, run_train, SeedRun};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    writeln!(err, "{text}").ok();
}

fn gaussian_with(r: &mut rng::Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng::normal(r))
}

fn criterion_1() -> Outcome {
    let mut r = rng::seeded(1);
    let dims = [4usize, 16, 64];
    let mut violations = Vec::new();
    for trial in 0..1000 {
        let d = dims[trial % 3];
        let n = r.gen_range(2 * d..=8 * d);
        // generic product of rank k
        let k = r.gen_range(1..=d);
        let h = gaussian_with(&mut r, n, k).matmul(&gaussian_with(&mut r, k, d)).unwrap();
        let spec = representation_spectrum(&h).unwrap();
        let rank = algebraic_rank(&spec);
        let e = erank(&spec).unwrap();
        let tranks: Vec<usize> = (1..=10).map(|i| trank(&spec, i as f64 / 10.0).unwrap()).collect();
        if rank != k {
            violations.push(format!("trial {trial}: rank {rank}, constructed {k}"));
        }
        if e > rank as f64 {
            violations.push(format!("trial {trial}: erank {e} > rank {rank}"));
        }
        if !(1.0..=d as f64).contains(&e) {
            violations.push(format!("trial {trial}: erank {e} outside [1, {d}]"));
        }
        if tranks.windows(2).any(|w| w[1] < w[0]) {
            violations.push(format!("trial {trial}: trank decreases {tranks:?}"));
        }
        if tranks[9] != rank {
            violations.push(format!("trial {trial}: trank(1) = {} != rank {rank}", tranks[9]));
        }
    }
    let detail = match violations.first() {
        None => "1000 matrices, 0 violations".to_string(),
        Some(v) => format!("{} violations, first: {v}", violations.len()),
    };
    outcome(violations.is_empty(), detail)
}

fn random_orthogonal(d: usize, r: &mut rng::Rng) -> DenseMatrix {
    let a = gaussian_with(r, d, d);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = a.row(i).to_vec();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    DenseMatrix::from_rows(&q).unwrap()
}

fn criterion_2() -> Outcome {
    let mut r = rng::seeded(2);
    let mut worst_uniform: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut worst_rank1: f64 = 0.0;
    for d in [2usize, 4, 16, 64] {
        // rows of an orthogonal matrix, twice, with arbitrary scales: C = I/d
        let q = random_orthogonal(d, &mut r);
        let h = DenseMatrix::from_fn(2 * d, d, |i, j| q.get(i % d, j) * (1.0 + (i / d) as f64 * 2.5));
        let spec = representation_spectrum(&h).unwrap();
        worst_uniform = worst_uniform.max((erank(&spec).unwrap() - d as f64).abs());
        worst_grad = worst_grad.max(rfr_loss_and_grad(&h).unwrap().grad_h.max_abs());

        let v = gaussian_with(&mut r, 1, d);
        let h1 = DenseMatrix::from_fn(3 * d, d, |i, j| v.get(0, j) * if i % 2 == 0 { 1.0 + i as f64 } else { -0.5 });
        worst_rank1 = worst_rank1.max((erank(&representation_spectrum(&h1).unwrap()).unwrap() - 1.0).abs());
    }
    outcome(
        worst_uniform <= 1e-9 && worst_grad <= 1e-9 && worst_rank1 <= 1e-9,
        format!("|erank - d| {worst_uniform:.1e}, grad inf-norm {worst_grad:.1e}, |erank - 1| {worst_rank1:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let rank = rfr_gradient_check(50, 32, 8, 3, 1e-8);
    let net = network_gradient_check(&small_net(3), 16, 0.1, 3, 1e-8);
    outcome(
        rank.max_rel_err <= 1e-5 && net.max_rel_err <= 1e-4,
        format!(
            "rank loss max rel err {:.2e} over {} entries, network {:.2e} over {} parameters",
            rank.max_rel_err, rank.compared, net.max_rel_err, net.compared
        ),
    )
}

fn criterion_4() -> Outcome {
    let reports = run_battery(&VerifyOptions::default()).unwrap();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} d={} seed={}", r.name, r.dim, r.seed))
        .collect();
    let gap = reports[0].measured["gap"].as_f64().unwrap_or(f64::NAN);
    let oracle = 0.5 * (0.25f64 / 0.09).ln();
    let gap_ok = (gap - oracle).abs() <= 1e-3 && (gap - 0.5108).abs() <= 1e-3;
    outcome(
        failed.is_empty() && gap_ok,
        format!(
            "{} reports, {} failed{}; entropy gap {gap:.6} (oracle {oracle:.6})",
            reports.len(),
            failed.len(),
            failed.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

/// The frozen desk benchmark with one method variant.
fn bench(alpha: f64, strategy: Strategy, scope: RegScope) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.method.alpha = alpha;
    cfg.method.strategy = strategy;
    cfg.method.reg_scope = scope;
    cfg
}

fn runs(cfg: &ExperimentConfig) -> Vec<SeedRun> {
    cfg.seeds.iter().map(|&s| run_seed(cfg, s, None).unwrap()).collect()
}

fn mean_of(runs: &[SeedRun], f: impl Fn(&SeedRun) -> f64) -> f64 {
    mean_std(&runs.iter().map(f).collect::<Vec<_>>()).0
}

struct Bench {
    finetune_plain: Vec<SeedRun>,
    finetune_rfr: Vec<SeedRun>,
}

fn criterion_5(bench_out: &mut Option<Bench>) -> Outcome {
    let ft0 = runs(&bench(0.0, Strategy::Finetune, RegScope::BaseOnly));
    let ft1 = runs(&bench(0.1, Strategy::Finetune, RegScope::BaseOnly));
    let fr0 = runs(&bench(0.0, Strategy::Frozen, RegScope::BaseOnly));
    let fr1 = runs(&bench(0.1, Strategy::Frozen, RegScope::BaseOnly));

    let erank = |r: &SeedRun| r.log.rows[0].erank_pool;
    let novel = |r: &SeedRun| r.log.mean_novel_acc().unwrap();
    let forget = |r: &SeedRun| r.log.rows.last().unwrap().forgetting;
    let wdist = |r: &SeedRun| r.log.rows.last().unwrap().weight_dist_base;

    let parts = [
        ("a", "base pool erank", mean_of(&ft0, erank), mean_of(&ft1, erank), true),
        ("b", "frozen novel acc", mean_of(&fr0, novel), mean_of(&fr1, novel), true),
        ("c", "finetune forgetting", mean_of(&ft0, forget), mean_of(&ft1, forget), false),
        ("d", "weight distance", mean_of(&ft0, wdist), mean_of(&ft1, wdist), false),
    ];
    let mut passed = true;
    let mut detail = Vec::new();
    for (tag, name, plain, rfr, higher) in parts {
        let ok = if higher { rfr > plain } else { rfr < plain };
        passed &= ok;
        detail.push(format!(
            "({tag}) {name} {plain:.4} -> {rfr:.4} [{}]",
            if ok { "ok" } else { "wrong sign" }
        ));
    }
    *bench_out = Some(Bench { finetune_plain: ft0, finetune_rfr: ft1 });
    outcome(passed, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let mut means = Vec::new();
    for classes in [2usize, 4, 8, 16] {
        let mut cfg = ExperimentConfig::default();
        cfg.method.alpha = 0.0;
        if let DatasetConfig::Synthetic { num_classes, .. } = &mut cfg.dataset {
            *num_classes = classes;
        }
        cfg.split.base_classes = classes;
        let runs = runs(&cfg);
        means.push(mean_of(&runs, |r| r.log.rows[0].erank_pool));
    }
    let ok = means.windows(2).all(|w| w[1] >= w[0]);
    outcome(ok, format!("pool erank at 2/4/8/16 classes: {means:.3?}"))
}

fn criterion_7() -> Outcome {
    let aic = average_incremental_accuracy(&[0.80, 0.70, 0.60]).unwrap();
    let split = make_task_split(100, 50, 10, &OrderingSource::Seed(0)).unwrap();
    outcome(
        aic == 0.70 && split.novel_tasks.len() == 5,
        format!("AIC {aic:?}, {} novel tasks", split.novel_tasks.len()),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig { seeds: vec![7], ..Default::default() };
    cfg.method.alpha = 0.1;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            cfg.outdir = d.path().to_path_buf();
            run_train(&cfg, None, 1).unwrap();
            std::fs::read(d.path().join(&cfg.name).join("seed7").join("metrics.csv")).unwrap()
        })
        .collect();
    outcome(
        files[0] == files[1] && !files[0].is_empty(),
        format!("metrics.csv {} vs {} bytes, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    )
}

fn criterion_9() -> Outcome {
    // two records laid out by hand: coarse label, fine label, 3072 pixel bytes
    let pixels_a: Vec<u8> = (0..CIFAR100_PIXELS).map(|i| (i % 251) as u8).collect();
    let pixels_b: Vec<u8> = (0..CIFAR100_PIXELS).map(|i| 255 - (i * 7 % 256) as u8).collect();
    let mut bytes = vec![3u8, 17];
    bytes.extend_from_slice(&pixels_a);
    bytes.extend_from_slice(&[19, 99]);
    bytes.extend_from_slice(&pixels_b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.bin");
    std::fs::write(&path, &bytes).unwrap();
    let ds = parse_cifar100_binary(&path).unwrap();
    let back: Vec<(u8, u8, Vec<u8>)> = [3u8, 19]
        .iter()
        .enumerate()
        .map(|(i, &coarse)| {
            let px = ds.inputs.row(i).iter().map(|v| (v * 255.0).round() as u8).collect();
            (coarse, ds.labels[i] as u8, px)
        })
        .collect();
    let round_trip = bytes.len() == 6148 && encode_cifar100(&back) == bytes && ds.labels == [17, 99];

    let short = dir.path().join("short.bin");
    std::fs::write(&short, &bytes[..3073]).unwrap();
    let truncated = matches!(parse_cifar100_binary(&short), Err(RfrError::TruncatedFile(3073)));
    outcome(
        round_trip && truncated,
        format!("6148-byte fixture round trip: {round_trip}, 3073 bytes rejected as truncated: {truncated}"),
    )
}

fn criterion_10(bench: &Bench) -> Outcome {
    let both = runs(&bench_scope());
    let aic = |runs: &[SeedRun]| mean_of(runs, |r| r.aic());
    let base_only = aic(&bench.finetune_rfr);
    let plain = aic(&bench.finetune_plain);
    let with_novel = aic(&both);
    let scope_diff = (with_novel - base_only).abs();
    let gap = (base_only - plain).abs();
    outcome(
        with_novel.is_finite(),
        format!(
            "AIC base_only {base_only:.4}, base_and_novel {with_novel:.4}, alpha=0 {plain:.4}; \
             |scope diff| {scope_diff:.4} vs |RFR gap| {gap:.4} (reported, not thresholded)"
        ),
    )
}

fn bench_scope() -> ExperimentConfig {
    bench(0.1, Strategy::Finetune, RegScope::BaseAndNovel)
}

#[test]
fn acceptance_criteria() {
    let mut bench_runs = None;
    let mut results: Vec<(usize, &str, Duration, Duration, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, budget: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let budget = Duration::from_secs(budget);
        let passed = out.passed && took < budget;
        line(&format!(
            "{} criterion {n} ({name}) in {:.2}s (budget {}s): {}",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            out.detail
        ));
        results.push((n, name, took, budget, Outcome { passed, detail: out.detail }));
    };
    run(1, "rank metric properties", 10, &mut criterion_1);
    run(2, "analytic fixed points", 1, &mut criterion_2);
    run(3, "gradient oracle", 30, &mut criterion_3);
    run(4, "entropy battery", 60, &mut criterion_4);
    run(5, "directional desk benchmark", 600, &mut || criterion_5(&mut bench_runs));
    run(6, "erank vs class count", 300, &mut criterion_6);
    run(7, "protocol arithmetic", 1, &mut criterion_7);
    run(8, "determinism", 120, &mut criterion_8);
    run(9, "CIFAR-100 binary parser", 1, &mut criterion_9);
    let bench = bench_runs.expect("criterion 5 ran");
    run(10, "reg_scope comparison", 600, &mut || criterion_10(&bench));

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.4.passed)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    line(&format!("{} of {} criteria pass", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}
