//! Neighborhood regression with per-coordinate ℓ1 penalties.
//!
//! Solves
//!
//! ```text
//! min_θ  ½ θᵀ S θ - S_{t,:} θ + Σ_j λ_j |θ_j|     subject to θ_E = 0
//! ```
//!
//! for a PSD covariance `S`, target node `t` and an excluded set `E ∋ t`, by
//! cyclic coordinate descent. The same solver gives the node-wise fit for `a`
//! (`E = {a}`) and the debiasing fit for `(a, b)` (`t = b`, `E = {a, b}`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obsmodel::PairCounts;

/// Per-node penalties `λ_j = C sqrt(log p / max(1, min_{k != j} n_{j,k}))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyVector {
    pub lambdas: Vec<f64>,
    pub constant: f64,
    /// The `max(1, min_k n_{j,k})` used for each node.
    pub effective_counts: Vec<usize>,
}

impl PenaltyVector {
    pub fn uniform(p: usize, lambda: f64) -> Self {
        PenaltyVector {
            lambdas: vec![lambda; p],
            constant: lambda,
            effective_counts: vec![1; p],
        }
    }

    pub fn scaled(&self, t: f64) -> Self {
        PenaltyVector {
            lambdas: self.lambdas.iter().map(|l| l * t).collect(),
            constant: self.constant * t,
            effective_counts: self.effective_counts.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

pub fn default_penalties(counts: &PairCounts, c: f64) -> Result<PenaltyVector> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty constant must be positive, got {c}")));
    }
    let p = counts.p();
    let log_p = (p as f64).ln().max(0.0);
    let effective_counts: Vec<usize> = (0..p).map(|j| counts.min_offdiag(j).max(1)).collect();
    let lambdas = effective_counts
        .iter()
        .map(|&n| c * (log_p / n as f64).sqrt())
        .collect();
    Ok(PenaltyVector {
        lambdas,
        constant: c,
        effective_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodFit {
    pub target: usize,
    pub theta: Vec<f64>,
    pub excluded: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NeighborhoodFit {
    /// `{j : θ_j != 0}`.
    pub fn support(&self) -> Vec<usize> {
        neighborhood_support(self)
    }
}

pub fn neighborhood_support(fit: &NeighborhoodFit) -> Vec<usize> {
    fit.theta
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, _)| j)
        .collect()
}

#[inline]
fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Value of `½ θᵀSθ - S_{t,:}θ + Σ λ|θ|`.
pub fn objective(sigma: &DMatrix<f64>, target: usize, penalties: &PenaltyVector, theta: &[f64]) -> f64 {
    let p = theta.len();
    let mut quad = 0.0;
    let mut lin = 0.0;
    let mut pen = 0.0;
    for j in 0..p {
        if theta[j] == 0.0 {
            continue;
        }
        for k in 0..p {
            quad += theta[j] * sigma[(j, k)] * theta[k];
        }
        lin += sigma[(target, j)] * theta[j];
        pen += penalties.lambdas[j] * theta[j].abs();
    }
    0.5 * quad - lin + pen
}

/// Largest violation of the stationarity conditions over free coordinates.
pub fn kkt_residual(
    sigma: &DMatrix<f64>,
    target: usize,
    excluded: &[usize],
    penalties: &PenaltyVector,
    theta: &[f64],
) -> f64 {
    let p = theta.len();
    let mut worst: f64 = 0.0;
    for j in (0..p).filter(|j| !excluded.contains(j)) {
        let grad: f64 = (0..p).map(|k| sigma[(j, k)] * theta[k]).sum::<f64>() - sigma[(j, target)];
        let lam = penalties.lambdas[j];
        let v = if theta[j] != 0.0 {
            (grad + lam * theta[j].signum()).abs()
        } else {
            (grad.abs() - lam).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub fn solve_penalized_quadratic(
    sigma: &DMatrix<f64>,
    target: usize,
    excluded: &[usize],
    penalties: &PenaltyVector,
    cfg: &LassoConfig,
) -> Result<NeighborhoodFit> {
    solve_penalized_quadratic_warm(sigma, target, excluded, penalties, cfg, None)
}

/// Same as [`solve_penalized_quadratic`], starting from `init` when given.
pub fn solve_penalized_quadratic_warm(
    sigma: &DMatrix<f64>,
    target: usize,
    excluded: &[usize],
    penalties: &PenaltyVector,
    cfg: &LassoConfig,
    init: Option<&[f64]>,
) -> Result<NeighborhoodFit> {
    let p = sigma.nrows();
    if !sigma.is_square() || penalties.len() != p {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{} but {} penalties were given",
            sigma.nrows(),
            sigma.ncols(),
            penalties.len()
        )));
    }
    if target >= p {
        return Err(Error::IndexOutOfRange { index: target, p });
    }
    if let Some(&e) = excluded.iter().find(|&&e| e >= p) {
        return Err(Error::IndexOutOfRange { index: e, p });
    }
    let mut is_free = vec![true; p];
    for &e in excluded {
        is_free[e] = false;
    }
    is_free[target] = false;
    let free: Vec<usize> = (0..p).filter(|&j| is_free[j]).collect();
    if let Some(&j) = free.iter().find(|&&j| !(sigma[(j, j)] > 0.0)) {
        return Err(Error::NonPositiveDiagonal {
            node: j,
            value: sigma[(j, j)],
        });
    }

    let mut theta = vec![0.0; p];
    if let Some(init) = init {
        for &j in &free {
            theta[j] = init.get(j).copied().unwrap_or(0.0);
        }
    }
    // grad_part[j] = (Sθ)_j, kept in sync with θ.
    let mut s_theta = vec![0.0; p];
    for k in 0..p {
        if theta[k] != 0.0 {
            for j in 0..p {
                s_theta[j] += sigma[(j, k)] * theta[k];
            }
        }
    }

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for &j in &free {
            let sjj = sigma[(j, j)];
            let old = theta[j];
            let partial = sigma[(j, target)] - (s_theta[j] - sjj * old);
            let new = soft_threshold(partial, penalties.lambdas[j]) / sjj;
            if new != old {
                let delta = new - old;
                for (r, st) in s_theta.iter_mut().enumerate() {
                    *st += sigma[(r, j)] * delta;
                }
                theta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < cfg.tol {
            converged = true;
            break;
        }
    }

    let excluded_all: Vec<usize> = (0..p).filter(|&j| !is_free[j]).collect();
    let kkt = kkt_residual(sigma, target, &excluded_all, penalties, &theta);
    Ok(NeighborhoodFit {
        target,
        theta,
        excluded: excluded_all,
        kkt_residual: kkt,
        iterations: sweeps,
        converged,
    })
}

/// Row `b` of the debiasing matrix built from the `(a, b)` fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRow {
    pub a: usize,
    pub b: usize,
    pub row: Vec<f64>,
    pub tau: f64,
    /// Nonzero positions of `row`: the fit's support plus `b`.
    pub support: Vec<usize>,
}

/// `τ = (S_{b,b} - S_{b,:}θ)⁻¹`, `row[b] = τ`, `row[k] = -τ θ_k` elsewhere, `row[a] = 0`.
pub fn tau_and_row(sigma: &DMatrix<f64>, a: usize, b: usize, fit: &NeighborhoodFit) -> Result<DebiasRow> {
    let p = sigma.nrows();
    if a >= p || b >= p {
        return Err(Error::IndexOutOfRange { index: a.max(b), p });
    }
    if a == b {
        return Err(Error::InvalidArgument("debiasing row needs a != b".into()));
    }
    let resid = sigma[(b, b)]
        - fit
            .theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != 0.0)
            .map(|(k, &t)| sigma[(b, k)] * t)
            .sum::<f64>();
    if !(resid > 0.0) {
        return Err(Error::DegenerateTau { node: b, value: resid });
    }
    let tau = 1.0 / resid;
    let mut row: Vec<f64> = fit.theta.iter().map(|&t| if t != 0.0 { -tau * t } else { 0.0 }).collect();
    row[a] = 0.0;
    row[b] = tau;
    let support = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, _)| k)
        .collect();
    Ok(DebiasRow {
        a,
        b,
        row,
        tau,
        support,
    })
}
