//! Rank metrics of a representation batch and the rank regularizer.
//!
//! All metrics are evaluated on the spectrum of `C = H̄ᵀH̄ / N`, where `H̄` is
//! the row-normalized representation matrix. Its eigenvalues `λ_i` sum to one
//! and relate to the singular values of `H̄` through `σ_i² = N·λ_i`.

use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};
use crate::linalg::{gram_scaled, row_normalize_with_norms, sym_eigen, DenseMatrix, Spectrum};

/// Eigenvalues at or below this are counted as zero.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Clamp applied to eigenvalues inside the logarithm of the regularizer.
pub const LOG_CLAMP: f64 = 1e-12;
/// Allowed deviation of the eigenvalue sum from one in [`erank`].
pub const SIMPLEX_TOL: f64 = 1e-6;

/// The three rank quantities of one representation batch.
///
/// Field order is the JSON key order emitted by the `rank` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    #[serde(rename = "rank")]
    pub algebraic_rank: usize,
    pub trank: usize,
    pub erank: f64,
    pub rho: f64,
    pub eigenvalues: Vec<f64>,
}

impl RankReport {
    /// Compact JSON with stable key order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rank report serializes")
    }
}

/// Value and gradient of `Σ λ_i log λ_i` with respect to the raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct RfrGradient {
    pub loss: f64,
    pub grad_h: DenseMatrix,
}

fn floored(spec: &Spectrum) -> impl Iterator<Item = f64> + '_ {
    spec.eigenvalues()
        .iter()
        .map(|&l| if l > NOISE_FLOOR { l } else { 0.0 })
}

/// Number of eigenvalues above the noise floor.
pub fn algebraic_rank(spec: &Spectrum) -> usize {
    floored(spec).filter(|&l| l > 0.0).count()
}

/// Smallest `k` whose leading `k` eigenvalues hold at least `rho` of the total energy.
pub fn trank(spec: &Spectrum, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(RfrError::BadRho(rho));
    }
    let energies: Vec<f64> = floored(spec).collect();
    // summing in the same order as the running total makes rho = 1 land
    // exactly on the last nonzero value
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let threshold = rho * total;
    let mut acc = 0.0;
    for (k, e) in energies.iter().enumerate() {
        acc += e;
        if acc >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(energies.len())
}

/// `exp(-Σ λ_i log λ_i)` over the eigenvalues, with `0·log 0 = 0`.
pub fn erank(spec: &Spectrum) -> Result<f64> {
    let sum: f64 = spec.eigenvalues().iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(RfrError::BadSimplex(sum));
    }
    let kept: Vec<f64> = floored(spec).collect();
    let kept_sum: f64 = kept.iter().sum();
    let entropy: f64 = kept
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| {
            let p = l / kept_sum;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp().clamp(1.0, spec.source_dim().max(1) as f64))
}

/// Spectrum of the scaled Gram matrix of the row-normalized `h_raw`.
pub fn representation_spectrum(h_raw: &DenseMatrix) -> Result<Spectrum> {
    let (h_norm, _) = row_normalize_with_norms(h_raw)?;
    sym_eigen(&gram_scaled(&h_norm)?)
}

/// Normalize, form the Gram matrix, diagonalize and evaluate all three metrics.
pub fn rank_report(h_raw: &DenseMatrix, rho: f64) -> Result<RankReport> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(RfrError::BadRho(rho));
    }
    let spec = representation_spectrum(h_raw)?;
    report_from_spectrum(&spec, rho)
}

pub fn report_from_spectrum(spec: &Spectrum, rho: f64) -> Result<RankReport> {
    Ok(RankReport {
        algebraic_rank: algebraic_rank(spec),
        trank: trank(spec, rho)?,
        erank: erank(spec)?,
        rho,
        eigenvalues: spec.psd_eigenvalues(),
    })
}

/// The rank regularizer `Σ λ̃_i log λ̃_i`, `λ̃ = max(λ, 1e-12)`, and its exact
/// gradient with respect to the raw (un-normalized) features.
///
/// Backward chain: `∂L/∂C = V diag(1 + log λ) Vᵀ` (zero weight on clamped
/// eigenvalues), `∂L/∂H̄ = (2/N) H̄ ∂L/∂C`, then per row
/// `∂L/∂h = (I − h̄h̄ᵀ) ∂L/∂h̄ / ‖h‖`.
pub fn rfr_loss_and_grad(h_raw: &DenseMatrix) -> Result<RfrGradient> {
    let (n, d) = h_raw.shape();
    if n <= d {
        return Err(RfrError::Dimension(format!(
            "rank regularizer needs more samples than feature dimensions (N={n}, d={d})"
        )));
    }
    let (h_norm, norms) = row_normalize_with_norms(h_raw)?;
    let spec = sym_eigen(&gram_scaled(&h_norm)?)?;

    let loss = spec
        .eigenvalues()
        .iter()
        .map(|&l| {
            let l = l.max(LOG_CLAMP);
            l * l.ln()
        })
        .sum();

    let dc = spec.reconstruct_with(|l| if l > LOG_CLAMP { 1.0 + l.ln() } else { 0.0 });
    let scale = 2.0 / n as f64;
    let mut grad = h_norm.matmul(&dc)?;
    for i in 0..n {
        let hbar = h_norm.row(i);
        let g = grad.row_mut(i);
        let radial: f64 = hbar.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let inv = scale / norms[i];
        for (gj, hj) in g.iter_mut().zip(hbar) {
            *gj = (*gj - radial * hj) * inv;
        }
    }
    Ok(RfrGradient { loss, grad_h: grad })
}
