//! Synthetic studies: graph and precision generators, observation patterns,
//! masked Gaussian sampling, stability-based tuning, a node-wise selection
//! baseline, selection metrics and replicate harnesses.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::covest::unbiased_cov;
use crate::error::{Error, Result};
use crate::inference::{s1_s2_sets, EdgeInference, EdgeTester};
use crate::multitest::{fdp_power, fdr_select, holm, FdrBranch, PvalueEntry, PvalueTable};
use crate::nblasso::{default_penalties, solve_penalized_quadratic, LassoConfig};
use crate::obsmodel::{pairwise_counts, MaskedDataset, PairCounts, Sample};
use crate::psdproj::{min_eigenvalue, project_psd_weighted, ProjectionConfig};

pub type EdgeSet = BTreeSet<(usize, usize)>;

/// Seed for replicate `index` derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

// ---------------------------------------------------------------------------
// Graphs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Chain,
    MultiStar { stars: usize },
    ErdosRenyi { expected_degree: f64 },
    BarabasiAlbert { edges_per_node: usize },
    WattsStrogatz { degree: usize, rewire_prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(flatten)]
    pub kind: GraphKind,
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Simple undirected graph on `p` nodes; edges stored as `(j, k)` with `j < k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub p: usize,
    pub edges: EdgeSet,
}

impl Graph {
    pub fn new(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = EdgeSet::new();
        for (a, b) in edges {
            if a == b || a >= p || b >= p {
                return Err(Error::InvalidArgument(format!("invalid edge ({a}, {b}) for {p} nodes")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Graph { p, edges: set })
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p];
        for &(a, b) in &self.edges {
            out[a].push(b);
            out[b].push(a);
        }
        for n in &mut out {
            n.sort_unstable();
        }
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.p];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

pub fn gen_graph(spec: &GraphSpec) -> Result<Graph> {
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bad = |msg: String| Err(Error::InvalidArgument(msg));
    match spec.kind {
        GraphKind::Chain => {
            if p == 0 {
                return bad("chain needs at least one node".into());
            }
            Graph::new(p, (1..p).map(|j| (j - 1, j)))
        }
        GraphKind::MultiStar { stars } => {
            if stars == 0 || p < 2 * stars {
                return bad(format!("{stars} stars need at least {} nodes, got {p}", 2 * stars));
            }
            let size = p / stars;
            let mut edges = Vec::new();
            for s in 0..stars {
                let start = s * size;
                let end = if s + 1 == stars { p } else { start + size };
                edges.extend((start + 1..end).map(|j| (start, j)));
            }
            Graph::new(p, edges)
        }
        GraphKind::ErdosRenyi { expected_degree } => {
            if p < 2 || !(expected_degree >= 0.0) || expected_degree > (p - 1) as f64 {
                return bad(format!("expected degree {expected_degree} invalid for {p} nodes"));
            }
            let prob = expected_degree / (p - 1) as f64;
            let mut edges = Vec::new();
            for a in 0..p {
                for b in a + 1..p {
                    if rng.random::<f64>() < prob {
                        edges.push((a, b));
                    }
                }
            }
            Graph::new(p, edges)
        }
        GraphKind::BarabasiAlbert { edges_per_node: m } => {
            if m == 0 || p <= m {
                return bad(format!("preferential attachment with {m} edges per node needs more than {m} nodes"));
            }
            // seed clique on the first m + 1 nodes
            let mut edges = Vec::new();
            let mut endpoints: Vec<usize> = Vec::new();
            for a in 0..=m {
                for b in a + 1..=m {
                    edges.push((a, b));
                    endpoints.push(a);
                    endpoints.push(b);
                }
            }
            for new in m + 1..p {
                let mut targets = BTreeSet::new();
                while targets.len() < m {
                    // degree-proportional pick via the endpoint list
                    targets.insert(endpoints[rng.random_range(0..endpoints.len())]);
                }
                for t in targets {
                    edges.push((t, new));
                    endpoints.push(t);
                    endpoints.push(new);
                }
            }
            Graph::new(p, edges)
        }
        GraphKind::WattsStrogatz { degree, rewire_prob } => {
            if degree == 0 || degree % 2 == 1 || degree >= p || !(0.0..=1.0).contains(&rewire_prob) {
                return bad(format!(
                    "small-world graph needs an even degree below {p} and a probability in [0, 1]"
                ));
            }
            let mut set = EdgeSet::new();
            for j in 0..p {
                for s in 1..=degree / 2 {
                    let k = (j + s) % p;
                    set.insert((j.min(k), j.max(k)));
                }
            }
            // rewire the far endpoint of each lattice edge
            for s in 1..=degree / 2 {
                for j in 0..p {
                    let k = (j + s) % p;
                    let e = (j.min(k), j.max(k));
                    if !set.contains(&e) || rng.random::<f64>() >= rewire_prob {
                        continue;
                    }
                    let deg_j = set.iter().filter(|&&(x, y)| x == j || y == j).count();
                    if deg_j >= p - 1 {
                        continue;
                    }
                    let w = loop {
                        let w = rng.random_range(0..p);
                        if w != j && !set.contains(&(j.min(w), j.max(w))) {
                            break w;
                        }
                    };
                    set.remove(&e);
                    set.insert((j.min(w), j.max(w)));
                }
            }
            Graph::new(p, set)
        }
    }
}

// ---------------------------------------------------------------------------
// Precision matrices

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryOverride {
    pub a: usize,
    pub b: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecisionSpec {
    pub offdiag_low: f64,
    pub offdiag_high: f64,
    pub lambda_min_target: f64,
    pub seed: u64,
    /// Fixed off-diagonal values applied before the diagonal shift.
    pub overrides: Vec<EntryOverride>,
}

impl Default for PrecisionSpec {
    fn default() -> Self {
        PrecisionSpec {
            offdiag_low: 0.6,
            offdiag_high: 0.8,
            lambda_min_target: 0.25,
            seed: 0,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Precision {
    pub theta: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Off-diagonals uniform on `[low, high]` on the edges, then a common
/// diagonal `d = target - λ_min(off-diagonal part)`; returns `Θ*` and `Θ*⁻¹`.
pub fn gen_precision(graph: &Graph, spec: &PrecisionSpec) -> Result<Precision> {
    if !(spec.offdiag_low <= spec.offdiag_high) || !(spec.lambda_min_target > 0.0) {
        return Err(Error::InvalidArgument("precision spec needs low <= high and a positive floor".into()));
    }
    let p = graph.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut off = DMatrix::<f64>::zeros(p, p);
    for &(a, b) in &graph.edges {
        let w = if spec.offdiag_low == spec.offdiag_high {
            spec.offdiag_low
        } else {
            rng.random_range(spec.offdiag_low..=spec.offdiag_high)
        };
        off[(a, b)] = w;
        off[(b, a)] = w;
    }
    for o in &spec.overrides {
        if o.a == o.b || o.a >= p || o.b >= p {
            return Err(Error::InvalidArgument(format!("override ({}, {}) is not an off-diagonal entry", o.a, o.b)));
        }
        off[(o.a, o.b)] = o.value;
        off[(o.b, o.a)] = o.value;
    }
    let lam = if p == 0 { 0.0 } else { min_eigenvalue(&off) };
    let d = spec.lambda_min_target - lam;
    let theta = off + DMatrix::identity(p, p) * d;
    let chol = Cholesky::new(theta.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("generated precision matrix".into()))?;
    let inv = chol.inverse();
    let sigma = (&inv + inv.transpose()) * 0.5;
    Ok(Precision { theta, sigma })
}

// ---------------------------------------------------------------------------
// Observation patterns

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum MeasurementScenario {
    /// One pair per sample: `n2` samples per pair in S2, `n1` in S1 minus S2,
    /// `base` elsewhere, for the target pair on the true graph.
    PairwiseDesign { n1: usize, n2: usize, base: usize, target: (usize, usize) },
    /// Contiguous equal blocks (remainder in the last); node in block `g`
    /// observed independently with probability `probs[g]`.
    BlockProbs { probs: Vec<f64> },
    /// Node `j` observed independently with probability `1 - base^{d_j}`.
    DegreeMissing { base: f64 },
    /// Exactly `size` distinct nodes per sample, drawn sequentially with
    /// weights `1 - weight_base^{d_j}`.
    FixedSize { size: usize, weight_base: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    #[serde(flatten)]
    pub scenario: MeasurementScenario,
    /// Number of samples; ignored by the pairwise design.
    #[serde(default)]
    pub n_total: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Observed variable sets, one per sample, each sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPattern {
    pub p: usize,
    pub sets: Vec<Vec<usize>>,
}

impl ObservationPattern {
    pub fn pair_counts(&self) -> PairCounts {
        let samples = self
            .sets
            .iter()
            .map(|s| Sample::new(s.clone(), vec![0.0; s.len()]).expect("sorted distinct set"))
            .collect();
        pairwise_counts(&MaskedDataset::new(self.p, samples).expect("indices in range"))
    }
}

/// Per-pair sample counts of the pairwise design (`j < k`).
pub fn pairwise_design_counts(graph: &Graph, n1: usize, n2: usize, base: usize, target: (usize, usize)) -> Result<Vec<((usize, usize), usize)>> {
    let (a, b) = target;
    if a == b || a >= graph.p || b >= graph.p {
        return Err(Error::InvalidArgument(format!("target pair ({a}, {b}) invalid for {} nodes", graph.p)));
    }
    let sets = s1_s2_sets(&graph.neighbors(), a, b);
    let mut out = Vec::with_capacity(graph.p * (graph.p - 1) / 2);
    for j in 0..graph.p {
        for k in j + 1..graph.p {
            let n = if sets.in_s2(j, k) {
                n2
            } else if sets.in_s1(j, k) {
                n1
            } else {
                base
            };
            out.push(((j, k), n));
        }
    }
    Ok(out)
}

pub fn gen_pattern(spec: &MeasurementSpec, graph: &Graph) -> Result<ObservationPattern> {
    let p = graph.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_total;
    let sets = match &spec.scenario {
        MeasurementScenario::PairwiseDesign { n1, n2, base, target } => {
            let mut sets = Vec::new();
            for ((j, k), count) in pairwise_design_counts(graph, *n1, *n2, *base, *target)? {
                sets.extend(std::iter::repeat_n(vec![j, k], count));
            }
            sets
        }
        MeasurementScenario::BlockProbs { probs } => {
            if probs.is_empty() || probs.len() > p || probs.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::InvalidArgument("block probabilities must be in [0, 1], one per block".into()));
            }
            let size = p / probs.len();
            let node_prob: Vec<f64> = (0..p).map(|j| probs[(j / size).min(probs.len() - 1)]).collect();
            independent_sets(&node_prob, n, &mut rng)
        }
        MeasurementScenario::DegreeMissing { base } => {
            if !(0.0..=1.0).contains(base) {
                return Err(Error::InvalidArgument(format!("base {base} outside [0, 1]")));
            }
            let node_prob: Vec<f64> = graph.degrees().iter().map(|&d| 1.0 - base.powi(d as i32)).collect();
            independent_sets(&node_prob, n, &mut rng)
        }
        MeasurementScenario::FixedSize { size, weight_base } => {
            if *size > p {
                return Err(Error::InvalidArgument(format!("cannot observe {size} of {p} nodes")));
            }
            let weights: Vec<f64> = graph.degrees().iter().map(|&d| 1.0 - weight_base.powi(d as i32)).collect();
            let positive = weights.iter().filter(|&&w| w > 0.0).count();
            if positive < *size {
                return Err(Error::InvalidArgument(format!(
                    "only {positive} nodes have positive weight, need {size}"
                )));
            }
            (0..n).map(|_| weighted_draw(&weights, *size, &mut rng)).collect()
        }
    };
    Ok(ObservationPattern { p, sets })
}

fn independent_sets(node_prob: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| (0..node_prob.len()).filter(|&j| rng.random::<f64>() < node_prob[j]).collect())
        .collect()
}

/// `size` distinct indices, each draw proportional to the remaining weights.
fn weighted_draw(weights: &[f64], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (j, &wj) in w.iter().enumerate() {
            if wj <= 0.0 {
                continue;
            }
            pick = Some(j);
            if u < wj {
                break;
            }
            u -= wj;
        }
        let j = pick.expect("positive weight remains");
        out.push(j);
        w[j] = 0.0;
    }
    out.sort_unstable();
    out
}

// ---------------------------------------------------------------------------
// Sampling

/// Largest observed set drawn from its own marginal block instead of a full vector.
const SMALL_BLOCK: usize = 8;

/// Gaussian samples `x_{V_i} ~ N(0, Σ_{V_i,V_i})`. Small sets draw from their
/// marginal block directly; larger sets draw a full vector and restrict.
pub fn sample_data(sigma: &DMatrix<f64>, pattern: &ObservationPattern, seed: u64) -> Result<MaskedDataset> {
    let p = sigma.nrows();
    if p != pattern.p || !sigma.is_square() {
        return Err(Error::InvalidArgument("covariance and pattern dimensions differ".into()));
    }
    let full = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance for sampling".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block_cache: std::collections::HashMap<Vec<usize>, DMatrix<f64>> = Default::default();
    let mut samples = Vec::with_capacity(pattern.sets.len());
    for set in &pattern.sets {
        let values: Vec<f64> = if set.is_empty() {
            Vec::new()
        } else if set.len() <= SMALL_BLOCK {
            let l = match block_cache.get(set) {
                Some(l) => l,
                None => {
                    let sub = DMatrix::from_fn(set.len(), set.len(), |r, c| sigma[(set[r], set[c])]);
                    let l = Cholesky::new(sub)
                        .ok_or_else(|| Error::NotPositiveDefinite("marginal covariance block".into()))?
                        .l();
                    block_cache.entry(set.clone()).or_insert(l)
                }
            };
            let z = DVector::from_fn(set.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            (l * z).iter().copied().collect()
        } else {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &full * z;
            set.iter().map(|&j| x[j]).collect()
        };
        samples.push(Sample::new(set.clone(), values)?);
    }
    MaskedDataset::new(p, samples)
}

// ---------------------------------------------------------------------------
// Selection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    And,
    Or,
}

/// Combines node-wise supports into an edge set.
pub fn combine_supports(supports: &[Vec<usize>], rule: CombineRule) -> EdgeSet {
    let p = supports.len();
    let mut adj = vec![vec![false; p]; p];
    for (a, s) in supports.iter().enumerate() {
        for &k in s {
            adj[a][k] = true;
        }
    }
    let mut out = EdgeSet::new();
    for a in 0..p {
        for b in a + 1..p {
            let keep = match rule {
                CombineRule::And => adj[a][b] && adj[b][a],
                CombineRule::Or => adj[a][b] || adj[b][a],
            };
            if keep {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Node-wise penalized regressions on `Σ̃` with count-scaled penalties,
/// combined by `rule`.
pub fn baseline_nlasso_joe(
    sigma_tilde: &DMatrix<f64>,
    counts: &PairCounts,
    c: f64,
    rule: CombineRule,
    lasso: &LassoConfig,
) -> Result<EdgeSet> {
    let pen = default_penalties(counts, c)?;
    let supports = (0..sigma_tilde.nrows())
        .map(|a| Ok(solve_penalized_quadratic(sigma_tilde, a, &[a], &pen, lasso)?.support()))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_supports(&supports, rule))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub n_subsamples: usize,
    pub include_prob: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            n_subsamples: 20,
            include_prob: 0.8,
            threshold: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub chosen_c: f64,
    pub grid: Vec<f64>,
    /// Mean over pairs of `2 q (1 - q)`, `q` the subsample selection frequency.
    pub instability: Vec<f64>,
    /// Running maximum taken from the largest constant downwards.
    pub monotone_instability: Vec<f64>,
    pub qualified: bool,
}

/// Picks the smallest penalty constant whose monotonized edge instability
/// across random subsamples stays at or below the threshold; falls back to
/// the largest constant.
pub fn stability_select(
    data: &MaskedDataset,
    grid: &[f64],
    cfg: &StabilityConfig,
    projection: &ProjectionConfig,
    lasso: &LassoConfig,
) -> Result<StabilityOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("penalty grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] > 0.0) {
        return Err(Error::InvalidArgument("penalty grid must be positive and strictly increasing".into()));
    }
    if cfg.n_subsamples == 0 || !(cfg.include_prob > 0.0 && cfg.include_prob <= 1.0) {
        return Err(Error::InvalidArgument("need at least one subsample and include probability in (0, 1]".into()));
    }
    let p = data.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let masks: Vec<Vec<bool>> = (0..cfg.n_subsamples)
        .map(|_| (0..data.n_samples()).map(|_| rng.random::<f64>() < cfg.include_prob).collect())
        .collect();

    // selections[s][g] = edge set of subsample s at grid point g
    let selections = masks
        .par_iter()
        .map(|mask| {
            let sub = data.subset(mask);
            let counts = pairwise_counts(&sub);
            let cov = unbiased_cov(&sub, &counts, false);
            let proj = project_psd_weighted(&cov, projection)?;
            grid.iter()
                .map(|&c| baseline_nlasso_joe(&proj.sigma_tilde, &counts, c, CombineRule::And, lasso))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n_pairs = (p * p.saturating_sub(1) / 2).max(1) as f64;
    let ns = cfg.n_subsamples as f64;
    let instability: Vec<f64> = (0..grid.len())
        .map(|g| {
            let mut freq = std::collections::BTreeMap::<(usize, usize), usize>::new();
            for sel in &selections {
                for &e in &sel[g] {
                    *freq.entry(e).or_default() += 1;
                }
            }
            freq.values()
                .map(|&f| {
                    let q = f as f64 / ns;
                    2.0 * q * (1.0 - q)
                })
                .sum::<f64>()
                / n_pairs
        })
        .collect();
    let mut monotone = instability.clone();
    for g in (0..grid.len().saturating_sub(1)).rev() {
        monotone[g] = monotone[g].max(monotone[g + 1]);
    }
    let pick = monotone.iter().position(|&v| v <= cfg.threshold);
    if pick.is_none() {
        log::warn!("no penalty constant reached instability {}; using the largest", cfg.threshold);
    }
    Ok(StabilityOutcome {
        chosen_c: grid[pick.unwrap_or(grid.len() - 1)],
        grid: grid.to_vec(),
        instability,
        monotone_instability: monotone,
        qualified: pick.is_some(),
    })
}

// ---------------------------------------------------------------------------
// Metrics

fn serialize_na<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("NA"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionMetrics {
    pub tpr: f64,
    pub tnr: f64,
    /// `None` when nothing was selected.
    #[serde(serialize_with = "serialize_na")]
    pub tdr: Option<f64>,
    pub f1: f64,
}

/// TPR, TNR, TDR and F1 over the `p(p-1)/2` unordered pairs. Rates with an
/// empty denominator are 0 except TNR, which is 1, and TDR, which is absent.
pub fn selection_metrics(selected: &EdgeSet, truth: &EdgeSet, p: usize) -> SelectionMetrics {
    let tp = selected.intersection(truth).count() as f64;
    let fp = selected.len() as f64 - tp;
    let total = (p * p.saturating_sub(1) / 2) as f64;
    let negatives = total - truth.len() as f64;
    let tpr = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    let tnr = if negatives > 0.0 { (negatives - fp) / negatives } else { 1.0 };
    let tdr = (!selected.is_empty()).then(|| tp / selected.len() as f64);
    let f1 = match tdr {
        Some(d) if d + tpr > 0.0 => 2.0 * d * tpr / (d + tpr),
        _ => 0.0,
    };
    SelectionMetrics { tpr, tnr, tdr, f1 }
}

// ---------------------------------------------------------------------------
// Studies

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PenaltySetting {
    Fixed { c: f64 },
    /// Tuned once on the first replicate and reused for all of them.
    Stability {
        grid: Vec<f64>,
        #[serde(default)]
        config: StabilityConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub precision: PrecisionSpec,
    pub measurement: MeasurementSpec,
    pub replicates: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub penalty: PenaltySetting,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub lasso: LassoConfig,
}

/// Everything fixed across replicates: graph, `Θ*`/`Σ*`, and the pattern when
/// it is deterministic.
pub struct StudySetup {
    pub graph: Graph,
    pub precision: Precision,
    fixed_pattern: Option<ObservationPattern>,
}

impl StudySetup {
    pub fn new(graph_spec: &GraphSpec, precision: &PrecisionSpec, measurement: &MeasurementSpec) -> Result<Self> {
        let graph = gen_graph(graph_spec)?;
        let precision = gen_precision(&graph, precision)?;
        let fixed_pattern = match measurement.scenario {
            MeasurementScenario::PairwiseDesign { .. } => Some(gen_pattern(measurement, &graph)?),
            _ => None,
        };
        Ok(StudySetup { graph, precision, fixed_pattern })
    }

    /// Data for replicate seed `seed`; random patterns are redrawn from it.
    pub fn replicate_data(&self, measurement: &MeasurementSpec, seed: u64) -> Result<MaskedDataset> {
        let owned;
        let pattern = match &self.fixed_pattern {
            Some(p) => p,
            None => {
                let spec = MeasurementSpec { seed: derive_seed(seed, 0), ..measurement.clone() };
                owned = gen_pattern(&spec, &self.graph)?;
                &owned
            }
        };
        sample_data(&self.precision.sigma, pattern, derive_seed(seed, 1))
    }
}

pub const METHODS: [&str; 4] = ["gijoe_holm", "gijoe_fdr", "nlasso_and", "nlasso_or"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub n_selected: usize,
    pub tpr: f64,
    pub tnr: f64,
    #[serde(serialize_with = "serialize_na")]
    pub tdr: Option<f64>,
    pub f1: f64,
    pub fdp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub replicates: usize,
    pub mean_tpr: f64,
    pub sd_tpr: f64,
    pub mean_tnr: f64,
    pub sd_tnr: f64,
    /// Over replicates where TDR is defined.
    #[serde(serialize_with = "serialize_na")]
    pub mean_tdr: Option<f64>,
    pub tdr_na: usize,
    pub mean_f1: f64,
    pub sd_f1: f64,
    pub mean_fdp: f64,
    pub sd_fdp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub penalty_c: f64,
    pub stability: Option<StabilityOutcome>,
    pub rows: Vec<ReplicateRow>,
    pub aggregate: Vec<AggregateRow>,
    /// Pairs that could not be tested, summed over replicates.
    pub untestable: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

pub fn aggregate_rows(rows: &[ReplicateRow]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == m).collect();
            let col = |f: fn(&ReplicateRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let tdrs: Vec<f64> = sel.iter().filter_map(|r| r.tdr).collect();
            let (mean_tpr, sd_tpr) = mean_sd(&col(|r| r.tpr));
            let (mean_tnr, sd_tnr) = mean_sd(&col(|r| r.tnr));
            let (mean_f1, sd_f1) = mean_sd(&col(|r| r.f1));
            let (mean_fdp, sd_fdp) = mean_sd(&col(|r| r.fdp));
            AggregateRow {
                method: m.to_string(),
                replicates: sel.len(),
                mean_tpr,
                sd_tpr,
                mean_tnr,
                sd_tnr,
                mean_tdr: (!tdrs.is_empty()).then(|| mean_sd(&tdrs).0),
                tdr_na: sel.len() - tdrs.len(),
                mean_f1,
                sd_f1,
                mean_fdp,
                sd_fdp,
            }
        })
        .collect()
}

/// Full-graph run on one dataset: every pair tested, Holm and FDR selections,
/// and the AND/OR node-wise baselines from the same fits.
pub struct GraphRun {
    pub holm: EdgeSet,
    pub fdr: EdgeSet,
    pub fdr_branch: FdrBranch,
    pub and: EdgeSet,
    pub or: EdgeSet,
    pub untestable: usize,
}

pub fn run_graph(
    data: &MaskedDataset,
    c: f64,
    alpha: f64,
    projection: &ProjectionConfig,
    lasso: &LassoConfig,
    parallel: bool,
) -> Result<GraphRun> {
    let tester = EdgeTester::prepare(data, c, projection, lasso)?;
    let outcomes = tester.test_all_pairs(alpha, parallel);
    let entries: Vec<PvalueEntry> = outcomes
        .iter()
        .map(|o| PvalueEntry { a: o.a, b: o.b, p_value: o.p_value() })
        .collect();
    let untestable = entries.iter().filter(|e| e.p_value.is_none()).count();
    let table = PvalueTable::new(entries)?;
    let fdr = fdr_select(&table, alpha)?;
    let supports = tester.estimated_neighbors()?;
    Ok(GraphRun {
        holm: holm(&table, alpha)?,
        fdr: fdr.selected,
        fdr_branch: fdr.summary.branch,
        and: combine_supports(&supports, CombineRule::And),
        or: combine_supports(&supports, CombineRule::Or),
        untestable,
    })
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    cfg.projection.validate()?;
    let setup = StudySetup::new(&cfg.graph, &cfg.precision, &cfg.measurement)?;
    let seeds: Vec<u64> = (0..cfg.replicates as u64).map(|i| derive_seed(cfg.master_seed, i)).collect();
    let (c, stability) = match &cfg.penalty {
        PenaltySetting::Fixed { c } => (*c, None),
        PenaltySetting::Stability { grid, config } => {
            let data = setup.replicate_data(&cfg.measurement, seeds[0])?;
            let out = stability_select(&data, grid, config, &cfg.projection, &cfg.lasso)?;
            (out.chosen_c, Some(out))
        }
    };
    let truth = &setup.graph.edges;
    let p = setup.graph.p;
    let per_rep = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let data = setup.replicate_data(&cfg.measurement, seed)?;
            let run = run_graph(&data, c, cfg.alpha, &cfg.projection, &cfg.lasso, true)?;
            let rows = [&run.holm, &run.fdr, &run.and, &run.or]
                .iter()
                .zip(METHODS)
                .map(|(sel, method)| {
                    let m = selection_metrics(sel, truth, p);
                    ReplicateRow {
                        replicate: i,
                        seed,
                        method: method.to_string(),
                        n_selected: sel.len(),
                        tpr: m.tpr,
                        tnr: m.tnr,
                        tdr: m.tdr,
                        f1: m.f1,
                        fdp: fdp_power(sel, truth).fdp,
                    }
                })
                .collect::<Vec<_>>();
            Ok((rows, run.untestable))
        })
        .collect::<Result<Vec<_>>>()?;
    let untestable = per_rep.iter().map(|r| r.1).sum();
    let rows: Vec<ReplicateRow> = per_rep.into_iter().flat_map(|r| r.0).collect();
    Ok(StudyReport {
        config: cfg.clone(),
        penalty_c: c,
        stability,
        aggregate: aggregate_rows(&rows),
        rows,
        untestable,
    })
}

/// Tests one pair on a prepared dataset, solving only the node fits it needs.
pub fn test_single_edge(
    data: &MaskedDataset,
    a: usize,
    b: usize,
    c: f64,
    alpha: f64,
    projection: &ProjectionConfig,
    lasso: &LassoConfig,
) -> Result<EdgeInference> {
    EdgeTester::prepare(data, c, projection, lasso)?.edge_test(a, b, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStudyConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub precision: PrecisionSpec,
    pub measurement: MeasurementSpec,
    pub pair: (usize, usize),
    pub replicates: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub penalty_c: f64,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub lasso: LassoConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeStudyReport {
    pub config: EdgeStudyConfig,
    /// `Θ*_{a,b}` of the generated precision matrix.
    pub true_entry: f64,
    pub tested: usize,
    pub rejections: usize,
    pub degenerate: usize,
    pub rejection_rate: f64,
    pub p_values: Vec<Option<f64>>,
}

/// Repeated single-edge tests on fresh data: rejection rate at level `alpha`.
pub fn run_edge_study(cfg: &EdgeStudyConfig) -> Result<EdgeStudyReport> {
    let (a, b) = cfg.pair;
    let setup = StudySetup::new(&cfg.graph, &cfg.precision, &cfg.measurement)?;
    if a >= setup.graph.p || b >= setup.graph.p || a == b {
        return Err(Error::InvalidArgument(format!("pair ({a}, {b}) invalid")));
    }
    let seeds: Vec<u64> = (0..cfg.replicates as u64).map(|i| derive_seed(cfg.master_seed, i)).collect();
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let data = setup.replicate_data(&cfg.measurement, seed)?;
            match test_single_edge(&data, a, b, cfg.penalty_c, cfg.alpha, &cfg.projection, &cfg.lasso) {
                Ok(e) => Ok(Some(e.p_value)),
                Err(Error::DegenerateVariance { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let tested = outcomes.iter().filter(|o| o.is_some()).count();
    let rejections = outcomes.iter().filter(|o| o.is_some_and(|p| p <= cfg.alpha)).count();
    Ok(EdgeStudyReport {
        true_entry: setup.precision.theta[(a, b)],
        config: cfg.clone(),
        tested,
        rejections,
        degenerate: outcomes.len() - tested,
        rejection_rate: rejections as f64 / tested.max(1) as f64,
        p_values: outcomes,
    })
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
