//! Projection of an entrywise covariance estimate onto `{S : S = S^T, λ_min(S) >= ε}`
//! under the weighted sup-norm `max_{j,k} sqrt(n_{j,k}) |S_{j,k} - Σ̂_{j,k}|`.
//!
//! The problem is split as `S - B = Σ̂` and solved by ADMM:
//!
//! ```text
//! S ← P_ε(B + Σ̂ + μΛ)
//! A ← S - μΛ - Σ̂
//! B ← A - P_ball(A)          ball = {Δ : Σ ω⁻¹|Δ| <= μ/2}
//! Λ ← Λ - (S - B - Σ̂)/μ
//! ```
//!
//! `P_ε` clamps eigenvalues from below; `P_ball` is a Frobenius projection onto
//! a weighted ℓ1 ball, computed exactly by sorting soft-threshold breakpoints.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covest::PairwiseCovariance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub mu: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_change: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            mu: 1.0,
            eps: 1e-3,
            max_iter: 2000,
            tol_primal: 1e-7,
            tol_change: 1e-9,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("mu", self.mu)?;
        positive("eps", self.eps)?;
        positive("tol_primal", self.tol_primal)?;
        positive("tol_change", self.tol_change)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedCovariance {
    pub sigma_tilde: DMatrix<f64>,
    pub iterations_used: usize,
    /// `‖S - B - Σ̂‖_F` at the last iterate.
    pub final_residual: f64,
    /// `max_{j,k} sqrt(n_{j,k}) |Σ̃_{j,k} - Σ̂_{j,k}|`.
    pub objective: f64,
    pub converged: bool,
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Frobenius-nearest symmetric matrix with every eigenvalue at least `eps`.
pub fn eig_threshold(a: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("eig_threshold needs a square matrix".into()));
    }
    let sym = symmetrize(a);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite entries before eigendecomposition", &sym));
    }
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("symmetric eigendecomposition did not converge", &sym))?;
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(eps));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    out = symmetrize(&out);
    Ok(out)
}

/// Projection of a flat vector onto `{δ : Σ u_i |δ_i| <= radius}`.
///
/// `u_i = +∞` forces `δ_i = 0`; `u_i = 0` leaves the coordinate free.
/// Returns the projection and the threshold `c` of the soft-threshold map
/// `δ_i = sgn(a_i) max(|a_i| - c u_i, 0)` (0 when `a` is already inside).
pub fn project_weighted_l1_ball_vec(a: &[f64], inv_weights: &[f64], radius: f64) -> Result<(Vec<f64>, f64)> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
    }
    if a.len() != inv_weights.len() {
        return Err(Error::InvalidArgument("value and weight lengths differ".into()));
    }
    if inv_weights.iter().any(|&u| u < 0.0 || u.is_nan()) {
        return Err(Error::InvalidArgument("inverse weights must be nonnegative".into()));
    }

    let mut out: Vec<f64> = a
        .iter()
        .zip(inv_weights)
        .map(|(&x, &u)| if u.is_infinite() { 0.0 } else { x })
        .collect();
    let norm: f64 = out
        .iter()
        .zip(inv_weights)
        .filter(|(_, &u)| u.is_finite())
        .map(|(&x, &u)| u * x.abs())
        .sum();
    if norm <= radius {
        return Ok((out, 0.0));
    }

    // Breakpoints c_i = |a_i| / u_i over finite, positive weights; sort descending.
    let mut bps: Vec<(f64, f64, f64)> = a
        .iter()
        .zip(inv_weights)
        .filter(|(&x, &u)| u > 0.0 && u.is_finite() && x != 0.0)
        .map(|(&x, &u)| (x.abs() / u, u * x.abs(), u * u))
        .collect();
    bps.sort_by(|l, r| r.0.total_cmp(&l.0));

    // f(c) = Σ_{active} (u|a|) - c Σ_{active} u², active = {i : c_i > c}.
    let mut sum_ua = 0.0;
    let mut sum_uu = 0.0;
    let mut c = 0.0;
    for (idx, &(bp, ua, uu)) in bps.iter().enumerate() {
        sum_ua += ua;
        sum_uu += uu;
        let next = bps.get(idx + 1).map_or(0.0, |b| b.0);
        // value of f at the next breakpoint, with this segment's active set
        let f_next = sum_ua - next * sum_uu;
        if f_next >= radius || idx + 1 == bps.len() {
            c = ((sum_ua - radius) / sum_uu).clamp(next, bp);
            break;
        }
    }

    for (o, (&x, &u)) in out.iter_mut().zip(a.iter().zip(inv_weights)) {
        if u.is_finite() {
            let mag = (x.abs() - c * u).max(0.0);
            *o = mag.copysign(x);
            if mag == 0.0 {
                *o = 0.0;
            }
        }
    }
    Ok((out, c))
}

/// Frobenius projection of `a` onto `{Δ : Σ ω⁻¹_{j,k} |Δ_{j,k}| <= radius}`.
pub fn project_weighted_l1_ball(a: &DMatrix<f64>, inv_weights: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>> {
    if a.shape() != inv_weights.shape() {
        return Err(Error::InvalidArgument("matrix and weight shapes differ".into()));
    }
    let (v, _) = project_weighted_l1_ball_vec(a.as_slice(), inv_weights.as_slice(), radius)?;
    Ok(DMatrix::from_vec(a.nrows(), a.ncols(), v))
}

/// `ω⁻¹ = 1/sqrt(n_{j,k})`, `+∞` where the pair was never jointly observed.
pub fn inverse_weights(cov: &PairwiseCovariance) -> DMatrix<f64> {
    let p = cov.p();
    DMatrix::from_fn(p, p, |j, k| {
        let n = cov.counts.get(j, k);
        if n == 0 {
            f64::INFINITY
        } else {
            1.0 / (n as f64).sqrt()
        }
    })
}

/// Weighted sup-norm distance, ignoring never-observed pairs.
pub fn weighted_sup_distance(cov: &PairwiseCovariance, s: &DMatrix<f64>) -> f64 {
    let p = cov.p();
    let mut best: f64 = 0.0;
    for j in 0..p {
        for k in 0..p {
            let n = cov.counts.get(j, k);
            if n > 0 {
                best = best.max((n as f64).sqrt() * (s[(j, k)] - cov.sigma_hat[(j, k)]).abs());
            }
        }
    }
    best
}

pub fn project_psd_weighted(cov: &PairwiseCovariance, cfg: &ProjectionConfig) -> Result<ProjectedCovariance> {
    cfg.validate()?;
    let p = cov.p();
    let target = &cov.sigma_hat;
    let inv_w = inverse_weights(cov);
    let radius = cfg.mu / 2.0;

    let mut b = DMatrix::<f64>::zeros(p, p);
    let mut lambda = DMatrix::<f64>::zeros(p, p);
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let next = eig_threshold(&(&b + target + &lambda * cfg.mu), cfg.eps)?;
        let a = &next - &lambda * cfg.mu - target;
        b = &a - project_weighted_l1_ball(&a, &inv_w, radius)?;
        let gap = &next - &b - target;
        lambda -= &gap / cfg.mu;
        residual = gap.norm();
        let change = (&next - &sigma).norm();
        sigma = next;
        if residual <= cfg.tol_primal * p as f64 && change <= cfg.tol_change {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "PSD projection stopped at max_iter = {} with residual {residual:.3e}",
            cfg.max_iter
        );
    }
    let objective = weighted_sup_distance(cov, &sigma);
    Ok(ProjectedCovariance {
        sigma_tilde: sigma,
        iterations_used: iterations,
        final_residual: residual,
        objective,
        converged,
    })
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}
