//! Edge-wise debiased inference.
//!
//! For an ordered pair `(a, b)`, the node-wise fit `θ̂^(a)` (target `a`) is
//! debiased at coordinate `b` with the row `Θ̂^(a)_{b,:}` built from the
//! `(a, b)` fit:
//!
//! ```text
//! θ̃ = θ̂^(a)_b - Θ̂^(a)_{b,:} (Σ̂ θ̂^(a) - Σ̂_{:,a})
//! ```
//!
//! Its variance contracts the fourth-moment tensor
//! `T_{j,k,j',k'} = (Σ̂_{j,j'}Σ̂_{k,k'} + Σ̂_{j,k'}Σ̂_{k,j'}) n_{j,k,j',k'} / (n_{j,k} n_{j',k'})`
//! with the debiasing row in modes 1 and 3 and `θ̄ = (1 at a, -θ̂^(a) elsewhere)`
//! in modes 2 and 4. Only supports of the two vectors contribute, so the
//! contraction runs over `supp(row) x supp(θ̄)` with quadruple counts fetched
//! as popcounts of intersected observation sets.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covest::{unbiased_cov, PairwiseCovariance};
use crate::error::{Error, Result};
use crate::nblasso::{
    default_penalties, solve_penalized_quadratic, tau_and_row, DebiasRow, LassoConfig, NeighborhoodFit,
    PenaltyVector,
};
use crate::normal::{normal_sf, two_sided_critical, two_sided_p};
use crate::obsmodel::{pairwise_counts, MaskedDataset, ObservationIndex, PairCounts, SampleSet};
use crate::psdproj::{project_psd_weighted, ProjectedCovariance, ProjectionConfig};

/// `θ̄^(a)`: 1 at `a`, `-θ̂^(a)` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBar {
    pub a: usize,
    pub vec: Vec<f64>,
}

impl ThetaBar {
    pub fn from_fit(fit: &NeighborhoodFit, a: usize) -> Self {
        let mut vec: Vec<f64> = fit.theta.iter().map(|&t| if t != 0.0 { -t } else { 0.0 }).collect();
        vec[a] = 1.0;
        ThetaBar { a, vec }
    }

    pub fn support(&self) -> Vec<usize> {
        nonzero(&self.vec)
    }
}

fn nonzero(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(j, _)| j)
        .collect()
}

/// `θ̃^(a)_b`. Products are restricted to the supports of the row and of
/// `θ̂^(a)`; summation follows increasing index order, so the result equals
/// the dense evaluation.
pub fn debiased_stat(theta_fit: &NeighborhoodFit, row: &DebiasRow, sigma_hat: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let theta = &theta_fit.theta;
    let theta_support = nonzero(theta);
    let mut correction = 0.0;
    for &j in &row.support {
        let mut resid = 0.0;
        for &k in &theta_support {
            resid += sigma_hat[(j, k)] * theta[k];
        }
        resid -= sigma_hat[(j, a)];
        correction += row.row[j] * resid;
    }
    theta[b] - correction
}

/// Contracted variance estimate `σ̂²(a, b)`.
///
/// Pairs never observed jointly contribute nothing. A non-positive result is
/// reported as [`Error::DegenerateVariance`].
pub fn variance_estimate(
    cov: &PairwiseCovariance,
    idx: &ObservationIndex,
    row: &DebiasRow,
    theta_bar: &ThetaBar,
) -> Result<f64> {
    let s = &cov.sigma_hat;
    let tb_support = theta_bar.support();

    struct Term {
        j: usize,
        k: usize,
        weight: f64,
        joint: SampleSet,
    }
    // batch every (j, k) in supp(row) x supp(θ̄) with its joint observation set
    let mut terms = Vec::with_capacity(row.support.len() * tb_support.len());
    for &j in &row.support {
        for &k in &tb_support {
            let n = cov.counts.get(j, k);
            if n == 0 {
                continue;
            }
            terms.push(Term {
                j,
                k,
                weight: row.row[j] * theta_bar.vec[k] / n as f64,
                joint: idx.joint(j, k),
            });
        }
    }

    let mut total = 0.0;
    for (u, t1) in terms.iter().enumerate() {
        for t2 in &terms[u..] {
            let quad = t1.joint.intersection_len(&t2.joint);
            if quad == 0 {
                continue;
            }
            let moment = s[(t1.j, t2.j)] * s[(t1.k, t2.k)] + s[(t1.j, t2.k)] * s[(t1.k, t2.j)];
            let mult = if std::ptr::eq(t1, t2) { 1.0 } else { 2.0 };
            total += mult * t1.weight * t2.weight * moment * quad as f64;
        }
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateVariance {
            a: row.a,
            b: row.b,
            value: total,
        });
    }
    Ok(total)
}

/// Index sets governing bias and variance of the `(a, b)` statistic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub a: usize,
    pub b: usize,
    /// `N̄_a = N_a ∪ {a}`.
    pub closed_a: BTreeSet<usize>,
    /// `N̄_b^(a)`: `N̄_a ∪ N̄_b` when `b ∈ N_a`, otherwise `N̄_b`.
    pub closed_b_given_a: BTreeSet<usize>,
    /// Nodes `N_a ∪ N̄_b^(a)`; S1 holds every pair touching one of them.
    pub s1_nodes: BTreeSet<usize>,
    /// Ordered pairs of `(N̄_a × N̄_b^(a)) ∪ (N̄_b^(a) × N̄_a)`.
    pub s2: BTreeSet<(usize, usize)>,
}

impl IndexSets {
    pub fn in_s1(&self, j: usize, k: usize) -> bool {
        self.s1_nodes.contains(&j) || self.s1_nodes.contains(&k)
    }

    pub fn in_s2(&self, j: usize, k: usize) -> bool {
        self.s2.contains(&(j, k))
    }

    /// `(n1, n2)`: minimum pairwise counts over S1 and S2.
    pub fn sample_sizes(&self, counts: &PairCounts) -> (usize, usize) {
        let n1 = self
            .s1_nodes
            .iter()
            .map(|&j| counts.min_row(j))
            .min()
            .unwrap_or(0);
        let n2 = self
            .s2
            .iter()
            .map(|&(j, k)| counts.get(j, k))
            .min()
            .unwrap_or(0);
        (n1, n2)
    }
}

/// S1/S2 from open neighborhoods of `a` and `b`.
pub fn s1_s2_sets_from(neighbors_a: &[usize], neighbors_b: &[usize], a: usize, b: usize) -> IndexSets {
    let open_a: BTreeSet<usize> = neighbors_a.iter().copied().filter(|&j| j != a).collect();
    let mut closed_a = open_a.clone();
    closed_a.insert(a);
    let mut closed_b: BTreeSet<usize> = neighbors_b.iter().copied().collect();
    closed_b.insert(b);
    let closed_b_given_a: BTreeSet<usize> = if open_a.contains(&b) {
        closed_a.union(&closed_b).copied().collect()
    } else {
        closed_b
    };
    let s1_nodes = open_a.union(&closed_b_given_a).copied().collect();
    let mut s2 = BTreeSet::new();
    for &j in &closed_a {
        for &k in &closed_b_given_a {
            s2.insert((j, k));
            s2.insert((k, j));
        }
    }
    IndexSets {
        a,
        b,
        closed_a,
        closed_b_given_a,
        s1_nodes,
        s2,
    }
}

/// S1/S2 from a neighbor list per node (a true graph or estimated supports).
pub fn s1_s2_sets(neighbors: &[Vec<usize>], a: usize, b: usize) -> IndexSets {
    s1_s2_sets_from(&neighbors[a], &neighbors[b], a, b)
}

/// Result of one edge test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeInference {
    pub a: usize,
    pub b: usize,
    pub theta_tilde: f64,
    pub sigma_hat_n: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// From estimated supports, not the true graph.
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
}

impl EdgeInference {
    fn assemble(a: usize, b: usize, theta_tilde: f64, variance: f64, n1: usize, n2: usize, alpha: f64) -> Result<Self> {
        let sigma = variance.sqrt();
        let z = theta_tilde / sigma;
        let crit = two_sided_critical(alpha)?;
        Ok(EdgeInference {
            a,
            b,
            theta_tilde,
            sigma_hat_n: sigma,
            z,
            p_value: two_sided_p(z),
            ci_low: theta_tilde - crit * sigma,
            ci_high: theta_tilde + crit * sigma,
            n1,
            n2,
            alpha,
        })
    }

    pub fn rejects(&self) -> bool {
        self.p_value <= self.alpha
    }
}

/// p-value for `|Θ_{a,b}/Θ_{a,a}| <= eps_thr`: `min(1, 2(1 - Φ((|θ̃| - ε)/σ̂)))`.
pub fn threshold_test(edge: &EdgeInference, eps_thr: f64) -> Result<f64> {
    if !(eps_thr >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {eps_thr}")));
    }
    let shifted = (edge.theta_tilde.abs() - eps_thr) / edge.sigma_hat_n;
    Ok((2.0 * normal_sf(shifted)).min(1.0))
}

/// Serializable per-edge record; numeric fields are absent for untestable pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub a: usize,
    pub b: usize,
    pub theta_tilde: Option<f64>,
    pub sigma: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub flags: Vec<String>,
}

/// Outcome of testing one pair within a full-graph run.
#[derive(Debug)]
pub struct EdgeOutcome {
    pub a: usize,
    pub b: usize,
    pub result: Result<EdgeInference>,
    pub flags: Vec<String>,
}

impl EdgeOutcome {
    pub fn p_value(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|e| e.p_value)
    }

    pub fn to_record(&self) -> EdgeRecord {
        match &self.result {
            Ok(e) => EdgeRecord {
                a: e.a,
                b: e.b,
                theta_tilde: Some(e.theta_tilde),
                sigma: Some(e.sigma_hat_n),
                z: Some(e.z),
                p: Some(e.p_value),
                ci: Some([e.ci_low, e.ci_high]),
                n1: Some(e.n1),
                n2: Some(e.n2),
                flags: self.flags.clone(),
            },
            Err(err) => {
                let mut flags = self.flags.clone();
                flags.push(match err {
                    Error::DegenerateVariance { .. } => "degenerate_variance".into(),
                    Error::DegenerateTau { .. } => "degenerate_tau".into(),
                    other => format!("error: {other}"),
                });
                EdgeRecord {
                    a: self.a,
                    b: self.b,
                    theta_tilde: None,
                    sigma: None,
                    z: None,
                    p: None,
                    ci: None,
                    n1: None,
                    n2: None,
                    flags,
                }
            }
        }
    }
}

/// Shared state for testing edges of one dataset: `Σ̂`, `Σ̃`, the observation
/// index, penalties and a per-node cache of `θ̂^(a)`.
pub struct EdgeTester {
    pub cov: PairwiseCovariance,
    pub projected: ProjectedCovariance,
    pub index: ObservationIndex,
    pub penalties: PenaltyVector,
    pub lasso: LassoConfig,
    node_fits: Vec<OnceLock<std::result::Result<NeighborhoodFit, String>>>,
}

impl EdgeTester {
    /// Runs covariance estimation and projection for `data`.
    pub fn prepare(
        data: &MaskedDataset,
        penalty_c: f64,
        projection: &ProjectionConfig,
        lasso: &LassoConfig,
    ) -> Result<Self> {
        let counts = pairwise_counts(data);
        let cov = unbiased_cov(data, &counts, false);
        let projected = project_psd_weighted(&cov, projection)?;
        let penalties = default_penalties(&counts, penalty_c)?;
        Ok(Self::from_parts(cov, projected, ObservationIndex::new(data), penalties, *lasso))
    }

    pub fn from_parts(
        cov: PairwiseCovariance,
        projected: ProjectedCovariance,
        index: ObservationIndex,
        penalties: PenaltyVector,
        lasso: LassoConfig,
    ) -> Self {
        let p = cov.p();
        EdgeTester {
            cov,
            projected,
            index,
            penalties,
            lasso,
            node_fits: (0..p).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.cov.p()
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.p() {
            Err(Error::IndexOutOfRange { index: j, p: self.p() })
        } else {
            Ok(())
        }
    }

    /// `θ̂^(a)`, solved once and cached.
    pub fn node_fit(&self, a: usize) -> Result<&NeighborhoodFit> {
        self.check_index(a)?;
        let slot = self.node_fits[a].get_or_init(|| {
            solve_penalized_quadratic(&self.projected.sigma_tilde, a, &[a], &self.penalties, &self.lasso)
                .map_err(|e| e.to_string())
        });
        slot.as_ref().map_err(|m| Error::InvalidArgument(m.clone()))
    }

    /// Solves every node-wise fit up front.
    pub fn warm_node_fits(&self, parallel: bool) {
        if parallel {
            (0..self.p()).into_par_iter().for_each(|a| {
                let _ = self.node_fit(a);
            });
        } else {
            for a in 0..self.p() {
                let _ = self.node_fit(a);
            }
        }
    }

    /// Estimated neighborhood of every node.
    pub fn estimated_neighbors(&self) -> Result<Vec<Vec<usize>>> {
        (0..self.p()).map(|a| Ok(self.node_fit(a)?.support())).collect()
    }

    pub fn debias_row(&self, a: usize, b: usize) -> Result<DebiasRow> {
        let sigma = &self.projected.sigma_tilde;
        let fit = solve_penalized_quadratic(sigma, b, &[a, b], &self.penalties, &self.lasso)?;
        tau_and_row(sigma, a, b, &fit)
    }

    pub fn edge_test(&self, a: usize, b: usize, alpha: f64) -> Result<EdgeInference> {
        self.edge_test_flagged(a, b, alpha).0
    }

    fn edge_test_flagged(&self, a: usize, b: usize, alpha: f64) -> (Result<EdgeInference>, Vec<String>) {
        let mut flags = Vec::new();
        let res = (|| {
            self.check_index(a)?;
            self.check_index(b)?;
            if a == b {
                return Err(Error::InvalidArgument("edge test needs a != b".into()));
            }
            two_sided_critical(alpha)?;
            let fit_a = self.node_fit(a)?;
            let row = self.debias_row(a, b)?;
            let theta_tilde = debiased_stat(fit_a, &row, &self.cov.sigma_hat, a, b);
            let theta_bar = ThetaBar::from_fit(fit_a, a);
            let variance = variance_estimate(&self.cov, &self.index, &row, &theta_bar)?;
            let sets = s1_s2_sets_from(&fit_a.support(), &self.node_fit(b)?.support(), a, b);
            let (n1, n2) = sets.sample_sizes(&self.cov.counts);
            if !fit_a.converged {
                flags.push("lasso_not_converged".to_string());
            }
            EdgeInference::assemble(a, b, theta_tilde, variance, n1, n2, alpha)
        })();
        if !self.projected.converged {
            flags.push("projection_not_converged".to_string());
        }
        (res, flags)
    }

    /// Tests every pair `a < b`, in lexicographic order. Each pair is an
    /// independent computation, so parallel and serial runs agree exactly.
    pub fn test_all_pairs(&self, alpha: f64, parallel: bool) -> Vec<EdgeOutcome> {
        self.warm_node_fits(parallel);
        let p = self.p();
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect();
        let run = |&(a, b): &(usize, usize)| {
            let (result, flags) = self.edge_test_flagged(a, b, alpha);
            EdgeOutcome { a, b, result, flags }
        };
        if parallel {
            pairs.par_iter().map(run).collect()
        } else {
            pairs.iter().map(run).collect()
        }
    }
}
