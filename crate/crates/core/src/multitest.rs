//! Multiplicity control over edge p-values: Holm step-down for the
//! family-wise error rate and a truncated step-up rule for the false
//! discovery rate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::normal_sf;

pub type Edge = (usize, usize);

fn ordered(a: usize, b: usize) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvalueEntry {
    pub a: usize,
    pub b: usize,
    /// `None` marks an untestable pair.
    pub p_value: Option<f64>,
}

/// One entry per unordered pair; untestable pairs carry no p-value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PvalueTable {
    entries: Vec<PvalueEntry>,
}

impl PvalueTable {
    pub fn new(entries: Vec<PvalueEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.a == e.b {
                return Err(Error::InvalidArgument(format!("self pair ({}, {})", e.a, e.b)));
            }
            if !seen.insert(ordered(e.a, e.b)) {
                return Err(Error::InvalidArgument(format!("pair ({}, {}) listed twice", e.a, e.b)));
            }
            if let Some(p) = e.p_value {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("p-value {p} outside [0, 1]")));
                }
            }
        }
        Ok(PvalueTable { entries })
    }

    /// Convenience constructor from `(a, b, p)` triples, all testable.
    pub fn from_triples(triples: &[(usize, usize, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(a, b, p)| PvalueEntry { a, b, p_value: Some(p) })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[PvalueEntry] {
        &self.entries
    }

    /// Number of testable pairs.
    pub fn m(&self) -> usize {
        self.entries.iter().filter(|e| e.p_value.is_some()).count()
    }

    /// Testable `(edge, p)` sorted by p-value, ties broken by edge.
    fn sorted_testable(&self) -> Vec<(Edge, f64)> {
        let mut v: Vec<(Edge, f64)> = self
            .entries
            .iter()
            .filter_map(|e| e.p_value.map(|p| (ordered(e.a, e.b), p)))
            .collect();
        v.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        v
    }

    fn select_at_most(&self, rho: f64) -> BTreeSet<Edge> {
        self.entries
            .iter()
            .filter(|e| e.p_value.is_some_and(|p| p <= rho))
            .map(|e| ordered(e.a, e.b))
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Holm step-down: reject the `i`-th smallest p-value while `p_(i) <= α/(m - i + 1)`.
pub fn holm(table: &PvalueTable, alpha: f64) -> Result<BTreeSet<Edge>> {
    check_alpha(alpha)?;
    let sorted = table.sorted_testable();
    let m = sorted.len();
    let mut rejected = BTreeSet::new();
    for (i, &(edge, p)) in sorted.iter().enumerate() {
        if p <= alpha / (m - i) as f64 {
            rejected.insert(edge);
        } else {
            break;
        }
    }
    Ok(rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdrBranch {
    /// A threshold in the truncated range satisfied the estimated-FDP bound.
    Main,
    /// No such threshold; the conservative `2(1 - Φ(√(2 log m)))` cut was used.
    Fallback,
    /// Fewer than three testable pairs; Holm was applied instead.
    Holm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSummary {
    pub alpha: f64,
    pub m: usize,
    /// The p-value cut; absent on the Holm branch.
    pub rho0: Option<f64>,
    pub branch: FdrBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSelection {
    pub selected: BTreeSet<Edge>,
    pub summary: FdrSummary,
}

/// Lower end of the threshold search range, `2(1 - Φ(t_m))` with
/// `t_m = √(2 log m - 2 log log m)`.
pub fn fdr_lower_cut(m: usize) -> f64 {
    let lm = (m as f64).ln();
    let t = (2.0 * lm - 2.0 * lm.ln()).sqrt();
    2.0 * normal_sf(t)
}

/// Threshold used when the search range holds no valid cut.
pub fn fdr_fallback_cut(m: usize) -> f64 {
    2.0 * normal_sf((2.0 * (m as f64).ln()).sqrt())
}

/// Largest `ρ` in `[lower, 1]` with `m ρ / max(R(ρ), 1) <= α`, where `R(ρ)`
/// counts p-values at most `ρ`; selects every pair with p-value at most
/// that `ρ`. Candidates are the observed p-values in the range plus `lower`,
/// so tied p-values enter or leave together.
pub fn fdr_select(table: &PvalueTable, alpha: f64) -> Result<FdrSelection> {
    check_alpha(alpha)?;
    let m = table.m();
    if m < 3 {
        log::warn!("only {m} testable pairs; using Holm instead of the FDR rule");
        return Ok(FdrSelection {
            selected: holm(table, alpha)?,
            summary: FdrSummary { alpha, m, rho0: None, branch: FdrBranch::Holm },
        });
    }
    let sorted = table.sorted_testable();
    let lower = fdr_lower_cut(m);
    let mf = m as f64;

    // Descending scan: the first qualifying candidate is the supremum.
    let mut rho0 = None;
    let mut idx = sorted.len();
    while idx > 0 {
        let p = sorted[idx - 1].1;
        if p < lower {
            break;
        }
        // idx = R(p) because the block of ties at p ends here
        if mf * p / idx as f64 <= alpha {
            rho0 = Some(p);
            break;
        }
        // skip the rest of the tie block
        let mut k = idx - 1;
        while k > 0 && sorted[k - 1].1 == p {
            k -= 1;
        }
        idx = k;
    }
    if rho0.is_none() {
        let r_lower = sorted.partition_point(|x| x.1 <= lower);
        if mf * lower / r_lower.max(1) as f64 <= alpha {
            rho0 = Some(lower);
        }
    }

    let (rho, branch) = match rho0 {
        Some(r) => (r, FdrBranch::Main),
        None => (fdr_fallback_cut(m), FdrBranch::Fallback),
    };
    Ok(FdrSelection {
        selected: table.select_at_most(rho),
        summary: FdrSummary { alpha, m, rho0: Some(rho), branch },
    })
}

/// False discovery proportion and power of a selection against a true edge set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdpPower {
    pub fdp: f64,
    /// `None` when the truth has no edges.
    pub power: Option<f64>,
}

pub fn fdp_power(selected: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> FdpPower {
    let truth: BTreeSet<Edge> = truth.iter().map(|&(a, b)| ordered(a, b)).collect();
    let sel: BTreeSet<Edge> = selected.iter().map(|&(a, b)| ordered(a, b)).collect();
    let hits = sel.intersection(&truth).count();
    let false_hits = sel.len() - hits;
    FdpPower {
        fdp: false_hits as f64 / sel.len().max(1) as f64,
        power: (!truth.is_empty()).then(|| hits as f64 / truth.len() as f64),
    }
}
