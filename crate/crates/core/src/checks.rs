//! Numerical checks of the entropy and effective-rank results the
//! regularizer rests on.
//!
//! * Among trace-one covariances the Gaussian entropy peaks at `I/d`.
//! * Projected gradient ascent of `−Σ λ log λ` on the simplex reaches the
//!   uniform distribution, where `erank = d`.
//! * `erank ≤ rank` for arbitrary representation matrices.
//!
//! Trials are independent, run on the rayon pool and are reported in trial
//! order, so every report is a pure function of its arguments.

use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};
use crate::linalg::{sym_eigen, DenseMatrix, Spectrum};
use crate::rank::{algebraic_rank, erank, representation_spectrum, LOG_CLAMP};
use crate::rng;

pub const ENTROPY_TOL: f64 = 1e-9;
/// `‖Σ − I/d‖_F` below which a sample counts as the maximizer itself.
pub const AT_MAXIMUM: f64 = 1e-9;
pub const UNIFORM_TOL: f64 = 1e-4;
pub const ERANK_AT_UNIFORM_TOL: f64 = 1e-3;
pub const RANK_BOUND_TOL: f64 = 1e-9;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_ASCENT_STEPS: usize = 2000;

const TAG_ENTROPY: u64 = 0x11;
const TAG_ASCENT: u64 = 0x12;
const TAG_BOUND: u64 = 0x13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub dim: usize,
    pub seed: u64,
    pub passed: bool,
    pub trials: usize,
    pub violations: usize,
    pub tolerance: f64,
    /// Largest violation margin observed (negative when every trial passed with room).
    pub worst: f64,
    /// Check-specific measurements.
    pub measured: serde_json::Value,
}

fn trial_rng(seed: u64, tag: u64, trial: usize) -> rng::Rng {
    rng::seeded(rng::derive_seed(rng::derive_seed(seed, tag), trial as u64))
}

fn gaussian_matrix(rows: usize, cols: usize, r: &mut rng::Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng::normal(r))
}

/// Differential entropy `(d/2)·log(2πe) + ½·log det Σ` from the eigenvalues of Σ.
///
/// A non-positive eigenvalue makes the determinant zero and the entropy `−∞`.
pub fn gaussian_entropy(eigenvalues: &[f64]) -> f64 {
    let d = eigenvalues.len() as f64;
    let mut log_det = 0.0;
    for &l in eigenvalues {
        if l <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_det += l.ln();
    }
    0.5 * d * (2.0 * PI * E).ln() + 0.5 * log_det
}

/// Entropy of `I/d`, the largest value among trace-one covariances.
pub fn max_gaussian_entropy(dim: usize) -> f64 {
    let d = dim as f64;
    0.5 * d * (2.0 * PI * E).ln() - 0.5 * d * d.ln()
}

/// `entropy(I/d) − entropy(Σ)` for a trace-one covariance given by its eigenvalues.
pub fn entropy_gap(eigenvalues: &[f64]) -> f64 {
    max_gaussian_entropy(eigenvalues.len()) - gaussian_entropy(eigenvalues)
}

/// Trace-normalized Wishart draw `AAᵀ / tr(AAᵀ)` with `A` of shape `dim × width`.
pub fn random_trace_one_psd(dim: usize, width: usize, r: &mut rng::Rng) -> DenseMatrix {
    let a = gaussian_matrix(dim, width, r);
    let s = a.matmul_nt(&a).expect("square product");
    let tr = s.trace();
    s.scale(1.0 / tr)
}

fn finish(
    name: &str,
    dim: usize,
    seed: u64,
    tolerance: f64,
    margins: &[f64],
    measured: serde_json::Value,
) -> CheckReport {
    let violations = margins.iter().filter(|&&m| !(m <= 0.0)).count();
    let worst = margins.iter().cloned().fold(f64::NEG_INFINITY, |a, b| {
        if b.is_nan() {
            f64::INFINITY
        } else {
            a.max(b)
        }
    });
    CheckReport {
        name: name.to_string(),
        dim,
        seed,
        passed: violations == 0,
        trials: margins.len(),
        violations,
        tolerance,
        worst,
        measured,
    }
}

/// Samples `trials` trace-one covariances (Wishart widths cycling through
/// `1..=2·dim`, so rank-deficient draws are included) and checks
/// `entropy(Σ) ≤ entropy(I/d)`, strictly unless `Σ` is `I/d` itself.
///
/// Trial 0 is `I/d`, which must reach the maximum within the tolerance.
pub fn check_gaussian_entropy_max(
    dim: usize,
    trials: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<CheckReport> {
    if dim < 2 {
        return Err(RfrError::Dimension(format!("dim must be >= 2, got {dim}")));
    }
    let tol = tolerance.unwrap_or(ENTROPY_TOL);
    let h_max = max_gaussian_entropy(dim);
    let uniform = DenseMatrix::identity(dim).scale(1.0 / dim as f64);
    let outcomes: Vec<Result<(f64, bool)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sigma = if t == 0 {
                uniform.clone()
            } else {
                let mut r = trial_rng(seed, TAG_ENTROPY, t);
                random_trace_one_psd(dim, 1 + (t - 1) % (2 * dim), &mut r)
            };
            let spec = sym_eigen(&sigma)?;
            let h = gaussian_entropy(&spec.psd_eigenvalues());
            let at_max = sigma.sub(&uniform)?.frobenius_norm() < AT_MAXIMUM;
            Ok((h, at_max))
        })
        .collect();
    let mut margins = Vec::with_capacity(trials);
    let mut degenerate = 0usize;
    let mut at_max_error = 0.0f64;
    for o in outcomes {
        let (h, at_max) = o?;
        if h == f64::NEG_INFINITY {
            degenerate += 1;
        }
        let margin = if at_max {
            at_max_error = at_max_error.max((h - h_max).abs());
            (h - h_max).abs() - tol
        } else if h >= h_max {
            // away from I/d the inequality is strict
            f64::MIN_POSITIVE.max(h - h_max - tol)
        } else {
            h - h_max - tol
        };
        margins.push(margin);
    }
    Ok(finish(
        "gaussian_entropy_max",
        dim,
        seed,
        tol,
        &margins,
        serde_json::json!({
            "max_entropy": h_max,
            "rank_deficient_samples": degenerate,
            "abs_error_at_identity": at_max_error,
        }),
    ))
}

pub const GAP_EXAMPLE_TOL: f64 = 1e-3;

/// `Σ = diag(0.9, 0.1)`: the entropy gap to `I/2` computed through the
/// eigensolver, compared with `½·ln(0.25 / 0.09)`.
pub fn check_entropy_gap_example(tolerance: Option<f64>) -> Result<CheckReport> {
    let tol = tolerance.unwrap_or(GAP_EXAMPLE_TOL);
    let spec = sym_eigen(&DenseMatrix::diagonal(&[0.9, 0.1]))?;
    let measured = entropy_gap(&spec.psd_eigenvalues());
    let oracle = 0.5 * (0.25f64 / 0.09).ln();
    Ok(finish(
        "entropy_gap_example",
        2,
        0,
        tol,
        &[(measured - oracle).abs() - tol],
        serde_json::json!({ "gap": measured, "oracle": oracle }),
    ))
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn entropy_grad(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|&l| -(l.max(LOG_CLAMP).ln()) - 1.0).collect()
}

fn simplex_entropy(lambda: &[f64]) -> f64 {
    lambda.iter().filter(|&&l| l > 0.0).map(|&l| -l * l.ln()).sum()
}

/// Projected gradient ascent of `−Σ λ log λ` from `start` until every
/// coordinate is within `tol` of `1/d`. Returns the final point and the
/// number of steps taken.
///
/// The step starts at `0.5/d` (a contraction by one half near the uniform
/// point) and is halved until the Armijo condition holds, so the entropy never
/// decreases even when clamped logs at zero coordinates produce large gradients.
pub fn simplex_entropy_ascent(start: &[f64], steps: usize, tol: f64) -> Result<(Vec<f64>, usize)> {
    let d = start.len();
    if d < 2 {
        return Err(RfrError::Dimension(format!("dim must be >= 2, got {d}")));
    }
    let target = 1.0 / d as f64;
    let eta0 = 0.5 / d as f64;
    let close = |l: &[f64]| l.iter().all(|&x| (x - target).abs() <= tol);
    let mut lambda = project_simplex(start);
    let mut f = simplex_entropy(&lambda);
    for step in 0..=steps {
        if close(&lambda) {
            return Ok((lambda, step));
        }
        if step == steps {
            break;
        }
        let g = entropy_grad(&lambda);
        let mut eta = eta0;
        loop {
            let moved: Vec<f64> = lambda.iter().zip(&g).map(|(l, g)| l + eta * g).collect();
            let cand = project_simplex(&moved);
            let f_cand = simplex_entropy(&cand);
            let ascent: f64 = g.iter().zip(&cand).zip(&lambda).map(|((g, c), l)| g * (c - l)).sum();
            if f_cand >= f + 1e-4 * ascent || eta < 1e-20 {
                lambda = cand;
                f = f_cand;
                break;
            }
            eta *= 0.5;
        }
    }
    Err(RfrError::NoConvergence(steps))
}

fn random_simplex_start(dim: usize, trial: usize, seed: u64) -> Vec<f64> {
    match trial {
        0 => vec![1.0 / dim as f64; dim],
        1 => {
            let mut v = vec![0.01 / (dim - 1) as f64; dim];
            v[0] = 0.99;
            v
        }
        _ => {
            let mut r = trial_rng(seed, TAG_ASCENT, trial);
            let raw: Vec<f64> = (0..dim).map(|_| (3.0 * rng::normal(&mut r)).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        }
    }
}

/// Runs the simplex ascent from `trials` starts (uniform, a near-vertex point,
/// then random log-normal draws) and checks convergence to `1/d` within the
/// tolerance in ∞-norm, and `erank = d ± 1e-3` at every converged point.
pub fn check_erank_max_uniform(
    dim: usize,
    trials: usize,
    steps: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<CheckReport> {
    if dim < 2 {
        return Err(RfrError::Dimension(format!("dim must be >= 2, got {dim}")));
    }
    let tol = tolerance.unwrap_or(UNIFORM_TOL);
    let erank_tol = tolerance.map_or(ERANK_AT_UNIFORM_TOL, |t| t.min(ERANK_AT_UNIFORM_TOL));
    let target = 1.0 / dim as f64;
    let outcomes: Vec<(f64, f64, usize)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let start = random_simplex_start(dim, t, seed);
            // iterate past the tolerance so the erank check is not evaluated
            // at the edge of the convergence ball
            match simplex_entropy_ascent(&start, steps, tol.max(0.0) * 1e-2) {
                Ok((lambda, used)) => {
                    let dist = lambda.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
                    let e = erank(&Spectrum::from_eigenvalues(lambda)).unwrap_or(f64::NAN);
                    (dist, (e - dim as f64).abs(), used)
                }
                Err(_) => (f64::INFINITY, f64::INFINITY, steps),
            }
        })
        .collect();
    let margins: Vec<f64> = outcomes
        .iter()
        .map(|&(dist, de, _)| {
            let a = dist - tol;
            let b = de - erank_tol;
            // a point exactly at the tolerance still passes
            let m = a.max(b);
            if m == 0.0 {
                -f64::MIN_POSITIVE
            } else {
                m
            }
        })
        .collect();
    let max_dist = outcomes.iter().map(|o| o.0).fold(0.0, f64::max);
    let max_erank_err = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
    let max_steps = outcomes.iter().map(|o| o.2).max().unwrap_or(0);
    Ok(finish(
        "erank_max_uniform",
        dim,
        seed,
        tol,
        &margins,
        serde_json::json!({
            "max_inf_distance": max_dist,
            "max_erank_error": max_erank_err,
            "max_steps": max_steps,
            "step_limit": steps,
        }),
    ))
}

/// Random representation matrix with prescribed rank and conditioning.
fn structured_matrix(dim: usize, trial: usize, seed: u64) -> DenseMatrix {
    match trial {
        // rank one: every row is a positive multiple of the same direction
        0 => DenseMatrix::from_fn(2 * dim, dim, |i, j| (1 + i) as f64 * (1 + j) as f64),
        // isotropic: the identity repeated twice
        1 => DenseMatrix::from_fn(2 * dim, dim, |i, j| if i % dim == j { 1.0 } else { 0.0 }),
        _ => {
            let mut r = trial_rng(seed, TAG_BOUND, trial);
            use rand::Rng as _;
            let n = r.gen_range(2..=4 * dim);
            let rank = r.gen_range(1..=dim.min(n));
            let decades = r.gen_range(0.0..8.0);
            let mut u = gaussian_matrix(n, rank, &mut r);
            for k in 0..rank {
                let s = 10f64.powf(-decades * k as f64 / rank as f64);
                for i in 0..n {
                    u.set(i, k, u.get(i, k) * s);
                }
            }
            let v = gaussian_matrix(rank, dim, &mut r);
            u.matmul(&v).expect("inner dims agree")
        }
    }
}

/// `erank ≤ rank` over random matrices with varied shape, rank and
/// conditioning; trials 0 and 1 are the rank-one and isotropic equality cases.
pub fn check_erank_rank_bound(
    dim: usize,
    trials: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<CheckReport> {
    if dim < 2 {
        return Err(RfrError::Dimension(format!("dim must be >= 2, got {dim}")));
    }
    let tol = tolerance.unwrap_or(RANK_BOUND_TOL);
    let outcomes: Vec<Result<(f64, usize)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let h = structured_matrix(dim, t, seed);
            let spec = representation_spectrum(&h)?;
            Ok((erank(&spec)?, algebraic_rank(&spec)))
        })
        .collect();
    let mut margins = Vec::with_capacity(trials);
    let mut equality_cases = Vec::new();
    for (t, o) in outcomes.into_iter().enumerate() {
        let (e, k) = o?;
        let m = e - k as f64 - tol;
        margins.push(if m == 0.0 { -f64::MIN_POSITIVE } else { m });
        if t < 2 {
            equality_cases.push(serde_json::json!({"erank": e, "rank": k}));
        }
    }
    Ok(finish(
        "erank_rank_bound",
        dim,
        seed,
        tol,
        &margins,
        serde_json::json!({ "equality_cases": equality_cases }),
    ))
}

/// Pretty JSON array of reports, as printed by `rfr verify`.
pub fn reports_to_json(reports: &[CheckReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

/// Parameters of the full verification battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub dims: Vec<usize>,
    pub trials: usize,
    pub ascent_steps: usize,
    pub seeds: Vec<u64>,
    /// Replaces every check's tolerance; a negative value makes each check fail.
    pub tolerance_override: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            dims: vec![2, 8, 64],
            trials: DEFAULT_TRIALS,
            ascent_steps: DEFAULT_ASCENT_STEPS,
            seeds: vec![0, 1, 2],
            tolerance_override: None,
        }
    }
}

/// The entropy-gap example, then every check at every (seed, dim).
pub fn run_battery(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    let mut out = vec![check_entropy_gap_example(opts.tolerance_override)?];
    for &seed in &opts.seeds {
        for &dim in &opts.dims {
            let tol = opts.tolerance_override;
            out.push(check_gaussian_entropy_max(dim, opts.trials, seed, tol)?);
            out.push(check_erank_max_uniform(dim, opts.trials, opts.ascent_steps, seed, tol)?);
            out.push(check_erank_rank_bound(dim, opts.trials, seed, tol)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        for d in [2, 5, 64] {
            let u = vec![1.0 / d as f64; d];
            assert!((gaussian_entropy(&u) - max_gaussian_entropy(d)).abs() < 1e-12);
        }
        // ½(log(1/4) − log(0.09))
        let gap = entropy_gap(&[0.9, 0.1]);
        let by_hand = 0.5 * ((0.25f64).ln() - (0.09f64).ln());
        assert!((gap - by_hand).abs() < 1e-14);
        assert!((gap - 0.5108).abs() < 1e-3);
        assert_eq!(gaussian_entropy(&[1.0, 0.0]), f64::NEG_INFINITY);
        assert!(entropy_gap(&[1.0, 0.0]) == f64::INFINITY);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, 0.3, 0.3]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = project_simplex(&[1.0, 0.6, -2.0]);
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn ascent_fixed_point_and_vertex_start() {
        let (u, steps) = simplex_entropy_ascent(&[0.25; 4], 10, 1e-4).unwrap();
        assert_eq!(steps, 0);
        assert_eq!(u, vec![0.25; 4]);
        let mut start = vec![0.01 / 7.0; 8];
        start[0] = 0.99;
        let (l, _) = simplex_entropy_ascent(&start, 2000, 1e-4).unwrap();
        assert!(l.iter().all(|x| (x - 0.125).abs() <= 1e-4));
        assert!(matches!(
            simplex_entropy_ascent(&start, 1, 1e-4),
            Err(RfrError::NoConvergence(1))
        ));
    }

    #[test]
    fn small_battery_passes_and_is_deterministic() {
        let opts = VerifyOptions {
            dims: vec![2, 8],
            trials: 50,
            seeds: vec![3],
            ..Default::default()
        };
        let a = run_battery(&opts).unwrap();
        assert_eq!(a.len(), 7);
        assert!(a.iter().all(|r| r.passed), "{a:#?}");
        assert_eq!(a, run_battery(&opts).unwrap());
    }

    #[test]
    fn equality_cases_of_the_bound() {
        let r = check_erank_rank_bound(6, 2, 0, None).unwrap();
        let cases = r.measured["equality_cases"].as_array().unwrap();
        assert!((cases[0]["erank"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cases[0]["rank"], 1);
        assert!((cases[1]["erank"].as_f64().unwrap() - 6.0).abs() < 1e-9);
        assert_eq!(cases[1]["rank"], 6);
    }

    #[test]
    fn broken_tolerance_fails() {
        let opts = VerifyOptions {
            dims: vec![2],
            trials: 10,
            seeds: vec![0],
            tolerance_override: Some(-1.0),
            ..Default::default()
        };
        assert!(run_battery(&opts).unwrap().iter().all(|r| !r.passed));
    }
}
