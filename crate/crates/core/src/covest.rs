//! Entrywise covariance estimation from masked samples.

use nalgebra::DMatrix;

use crate::obsmodel::{MaskedDataset, PairCounts};

/// Entrywise covariance estimate together with the counts that produced it.
#[derive(Debug, Clone)]
pub struct PairwiseCovariance {
    pub sigma_hat: DMatrix<f64>,
    pub counts: PairCounts,
    /// Pairs `(j, k)`, `j <= k`, never observed together. Their entries are 0.
    pub zero_count_pairs: Vec<(usize, usize)>,
}

impl PairwiseCovariance {
    pub fn p(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn is_zero_count(&self, j: usize, k: usize) -> bool {
        self.counts.get(j, k) == 0
    }
}

/// `sigma_hat[j,k]` is the mean of `x_{i,j} x_{i,k}` over samples observing both.
///
/// With `center`, each pair subtracts the means of `j` and `k` taken over the
/// same jointly observing samples and divides by `n_{j,k} - 1` (or 1 when a
/// single sample is shared).
pub fn unbiased_cov(data: &MaskedDataset, counts: &PairCounts, center: bool) -> PairwiseCovariance {
    let p = data.n_vars();
    let mut sums = DMatrix::<f64>::zeros(p, p);
    for s in data.samples() {
        let idx = s.indices();
        let vals = s.values();
        for u in 0..idx.len() {
            for v in u..idx.len() {
                sums[(idx[u], idx[v])] += vals[u] * vals[v];
            }
        }
    }

    // Per-pair means, only needed when centering.
    let (mean_first, mean_second) = if center {
        let mut m1 = DMatrix::<f64>::zeros(p, p);
        let mut m2 = DMatrix::<f64>::zeros(p, p);
        for s in data.samples() {
            let idx = s.indices();
            let vals = s.values();
            for u in 0..idx.len() {
                for v in u..idx.len() {
                    m1[(idx[u], idx[v])] += vals[u];
                    m2[(idx[u], idx[v])] += vals[v];
                }
            }
        }
        (Some(m1), Some(m2))
    } else {
        (None, None)
    };

    let mut sigma_hat = DMatrix::<f64>::zeros(p, p);
    let mut zero_count_pairs = Vec::new();
    for j in 0..p {
        for k in j..p {
            let n = counts.get(j, k);
            if n == 0 {
                zero_count_pairs.push((j, k));
                continue;
            }
            let nf = n as f64;
            let value = match (&mean_first, &mean_second) {
                (Some(m1), Some(m2)) => {
                    let (s1, s2) = (m1[(j, k)], m2[(j, k)]);
                    let centered = sums[(j, k)] - s1 * s2 / nf;
                    centered / (nf - 1.0).max(1.0)
                }
                _ => sums[(j, k)] / nf,
            };
            sigma_hat[(j, k)] = value;
            sigma_hat[(k, j)] = value;
        }
    }

    PairwiseCovariance {
        sigma_hat,
        counts: counts.clone(),
        zero_count_pairs,
    }
}
