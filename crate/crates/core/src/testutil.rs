//! Shared helpers and brute-force oracles for tests.
//!
//! Also compiled into integration tests through a `#[path]` include, so every
//! path goes through the crate name.
#![allow(dead_code)]

use erosegm::obsmodel::{MaskedDataset, Sample};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each variable kept independently with probability `keep`; values in `[-1, 1)`.
pub fn random_masked(p: usize, n: usize, keep: f64, seed: u64) -> MaskedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let idx: Vec<usize> = (0..p).filter(|_| rng.random::<f64>() < keep).collect();
            let vals = idx.iter().map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            Sample::new(idx, vals).unwrap()
        })
        .collect();
    MaskedDataset::new(p, samples).unwrap()
}

/// `A Aᵀ / p + 0.5 I` with Gaussian-ish entries of `A`.
pub fn random_spd<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5
}

/// Number of samples observing every listed variable, by direct scan.
pub fn brute_count(data: &MaskedDataset, vars: &[usize]) -> usize {
    data.samples()
        .iter()
        .filter(|s| vars.iter().all(|v| s.indices().binary_search(v).is_ok()))
        .count()
}

pub fn lasso_objective(sigma: &DMatrix<f64>, target: usize, lambdas: &[f64], theta: &[f64]) -> f64 {
    let p = sigma.nrows();
    let mut quad = 0.0;
    let mut lin = 0.0;
    let mut pen = 0.0;
    for j in 0..p {
        for k in 0..p {
            quad += theta[j] * sigma[(j, k)] * theta[k];
        }
        lin += sigma[(j, target)] * theta[j];
        pen += lambdas[j] * theta[j].abs();
    }
    0.5 * quad - lin + pen
}

/// Exact minimizer of `½θᵀSθ - S_{:,t}ᵀθ + Σ λ_j|θ_j|` over coordinates not in
/// `excluded ∪ {target}`, by enumerating all `3^m` sign patterns and keeping
/// the best one that satisfies the optimality conditions.
pub fn enumerate_lasso(sigma: &DMatrix<f64>, target: usize, excluded: &[usize], lambdas: &[f64]) -> Vec<f64> {
    let p = sigma.nrows();
    let free: Vec<usize> = (0..p).filter(|&j| j != target && !excluded.contains(&j)).collect();
    let m = free.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut signs = vec![0i32; m];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i32 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..m).filter(|&u| signs[u] != 0).collect();
        let mut theta = vec![0.0; p];
        if !active.is_empty() {
            let q = active.len();
            let mat = DMatrix::from_fn(q, q, |r, c| sigma[(free[active[r]], free[active[c]])]);
            let rhs = nalgebra::DVector::from_fn(q, |r, _| {
                let j = free[active[r]];
                sigma[(j, target)] - lambdas[j] * signs[active[r]] as f64
            });
            let Some(sol) = mat.lu().solve(&rhs) else { continue };
            let mut consistent = true;
            for (r, &u) in active.iter().enumerate() {
                if sol[r] * signs[u] as f64 <= 0.0 {
                    consistent = false;
                }
                theta[free[u]] = sol[r];
            }
            if !consistent {
                continue;
            }
        }
        let inactive_ok = (0..m).filter(|&u| signs[u] == 0).all(|u| {
            let j = free[u];
            let grad: f64 = sigma[(j, target)] - (0..p).map(|k| sigma[(j, k)] * theta[k]).sum::<f64>();
            grad.abs() <= lambdas[j] + 1e-10
        });
        if !inactive_ok {
            continue;
        }
        let obj = lasso_objective(sigma, target, lambdas, &theta);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, theta));
        }
    }
    best.expect("strictly convex problem has a stationary point").1
}

/// Dense `p⁴` contraction of the fourth-moment tensor with `row` and `theta_bar`,
/// using counts taken directly from the samples.
pub fn dense_variance_oracle(data: &MaskedDataset, sigma_hat: &DMatrix<f64>, row: &[f64], theta_bar: &[f64]) -> f64 {
    let p = data.n_vars();
    let s = sigma_hat;
    let pair: Vec<Vec<usize>> = (0..p).map(|j| (0..p).map(|k| brute_count(data, &[j, k])).collect()).collect();
    let mut total = 0.0;
    for j in 0..p {
        for k in 0..p {
            if pair[j][k] == 0 || row[j] == 0.0 || theta_bar[k] == 0.0 {
                continue;
            }
            for j2 in 0..p {
                for k2 in 0..p {
                    if pair[j2][k2] == 0 || row[j2] == 0.0 || theta_bar[k2] == 0.0 {
                        continue;
                    }
                    let quad = brute_count(data, &[j, k, j2, k2]) as f64;
                    let t = (s[(j, j2)] * s[(k, k2)] + s[(j, k2)] * s[(k, j2)]) * quad
                        / (pair[j][k] as f64 * pair[j2][k2] as f64);
                    total += row[j] * theta_bar[k] * row[j2] * theta_bar[k2] * t;
                }
            }
        }
    }
    total
}

/// Dense `θ̂_b - row·(Σ̂θ̂ - Σ̂_{:,a})`.
pub fn dense_debiased(sigma_hat: &DMatrix<f64>, theta: &[f64], row: &[f64], a: usize, b: usize) -> f64 {
    let p = sigma_hat.nrows();
    let mut corr = 0.0;
    for j in 0..p {
        let mut resid = 0.0;
        for k in 0..p {
            resid += sigma_hat[(j, k)] * theta[k];
        }
        resid -= sigma_hat[(j, a)];
        corr += row[j] * resid;
    }
    theta[b] - corr
}
