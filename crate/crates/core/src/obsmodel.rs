//! Observation model: which variables each sample records, and the joint
//! observation counts derived from it.
//!
//! Variables are indexed `0..p`. A sample observes an arbitrary subset of the
//! variables; the number of samples observing both `j` and `k` is the pairwise
//! count `n_{j,k}`, and the number observing all of `j, k, j', k'` is the
//! quadruple count used by the edge variance estimate.

use std::io::{Read, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Mutex;

use lru::LruCache;

use crate::error::{Error, Result};

/// One sample: the sorted set of observed variables and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Sample {
    /// Builds a sample from (index, value) pairs. Indices are sorted; duplicates
    /// are rejected.
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidDataset(format!(
                "sample has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        let mut pairs: Vec<(usize, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|&(j, _)| j);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDataset(
                "duplicate variable index within a sample".into(),
            ));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Sample { indices, values })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Iterates `(variable, value)` pairs in increasing variable order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// `n` samples over `p` variables, each observing its own subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDataset {
    n_vars: usize,
    samples: Vec<Sample>,
    var_names: Option<Vec<String>>,
}

impl MaskedDataset {
    pub fn new(n_vars: usize, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if let Some(&last) = s.indices.last() {
                if last >= n_vars {
                    return Err(Error::InvalidDataset(format!(
                        "sample {i} observes variable {last} but p = {n_vars}"
                    )));
                }
            }
        }
        Ok(MaskedDataset {
            n_vars,
            samples,
            var_names: None,
        })
    }

    pub fn with_var_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_vars {
            return Err(Error::InvalidDataset(format!(
                "{} variable names for {} variables",
                names.len(),
                self.n_vars
            )));
        }
        self.var_names = Some(names);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn var_names(&self) -> Option<&[String]> {
        self.var_names.as_deref()
    }

    /// Keeps only the samples whose position is flagged in `keep`.
    pub fn subset(&self, keep: &[bool]) -> MaskedDataset {
        let samples = self
            .samples
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        MaskedDataset {
            n_vars: self.n_vars,
            samples,
            var_names: self.var_names.clone(),
        }
    }
}

/// Symmetric `p x p` matrix of joint observation counts `n_{j,k}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCounts {
    p: usize,
    n_samples: usize,
    counts: Vec<usize>,
}

impl PairCounts {
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> usize {
        self.counts[j * self.p + k]
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// `min_{k != j} n_{j,k}`; for `p = 1` this is `n_{j,j}`.
    pub fn min_offdiag(&self, j: usize) -> usize {
        (0..self.p)
            .filter(|&k| k != j)
            .map(|k| self.get(j, k))
            .min()
            .unwrap_or_else(|| self.get(j, j))
    }

    /// `min_k n_{j,k}` over every `k`, diagonal included.
    pub fn min_row(&self, j: usize) -> usize {
        (0..self.p).map(|k| self.get(j, k)).min().unwrap_or(0)
    }

    /// Row-major copy of the counts.
    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.p).map(|r| r.to_vec()).collect()
    }

    /// Rebuilds counts from a row-major square table, validating symmetry and
    /// the diagonal bound.
    pub fn from_rows(rows: &[Vec<usize>], n_samples: usize) -> Result<Self> {
        let p = rows.len();
        let mut counts = Vec::with_capacity(p * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::InvalidArgument("count table is not square".into()));
            }
            counts.extend_from_slice(r);
        }
        let pc = PairCounts {
            p,
            n_samples,
            counts,
        };
        for j in 0..p {
            for k in 0..p {
                if pc.get(j, k) != pc.get(k, j) {
                    return Err(Error::InvalidArgument(format!(
                        "count table is not symmetric at ({j}, {k})"
                    )));
                }
                if pc.get(j, k) > pc.get(j, j).min(pc.get(k, k)) || pc.get(j, j) > n_samples {
                    return Err(Error::InvalidArgument(format!(
                        "count at ({j}, {k}) exceeds its diagonal bound"
                    )));
                }
            }
        }
        Ok(pc)
    }
}

/// `counts[j,k] = |{i : j, k in V_i}|`.
pub fn pairwise_counts(data: &MaskedDataset) -> PairCounts {
    let p = data.n_vars();
    let mut counts = vec![0usize; p * p];
    for s in data.samples() {
        let idx = s.indices();
        for (u, &j) in idx.iter().enumerate() {
            counts[j * p + j] += 1;
            for &k in &idx[u + 1..] {
                counts[j * p + k] += 1;
                counts[k * p + j] += 1;
            }
        }
    }
    PairCounts {
        p,
        n_samples: data.n_samples(),
        counts,
    }
}

/// Packed bitset over sample positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    words: Vec<u64>,
}

impl SampleSet {
    fn empty(n_words: usize) -> Self {
        SampleSet {
            words: vec![0; n_words],
        }
    }

    #[inline]
    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection(&self, other: &SampleSet) -> SampleSet {
        SampleSet {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    /// `|self ∩ other|` without allocating.
    #[inline]
    pub fn intersection_len(&self, other: &SampleSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }
}

/// Per-variable sets of observing samples, `{i : j in V_i}` for each `j`.
#[derive(Debug, Clone)]
pub struct ObservationIndex {
    n_samples: usize,
    sets: Vec<SampleSet>,
}

impl ObservationIndex {
    pub fn new(data: &MaskedDataset) -> Self {
        let n = data.n_samples();
        let n_words = n.div_ceil(64);
        let mut sets = vec![SampleSet::empty(n_words); data.n_vars()];
        for (i, s) in data.samples().iter().enumerate() {
            for &j in s.indices() {
                sets[j].insert(i);
            }
        }
        ObservationIndex { n_samples: n, sets }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_vars(&self) -> usize {
        self.sets.len()
    }

    pub fn observers(&self, j: usize) -> &SampleSet {
        &self.sets[j]
    }

    /// Samples observing both `j` and `k`.
    pub fn joint(&self, j: usize, k: usize) -> SampleSet {
        self.sets[j].intersection(&self.sets[k])
    }

    pub fn pair_count(&self, j: usize, k: usize) -> usize {
        self.sets[j].intersection_len(&self.sets[k])
    }

    /// `|{i : j, k, j', k' in V_i}|`.
    pub fn quad_count(&self, j: usize, k: usize, j2: usize, k2: usize) -> usize {
        let (a, b, c, d) = (&self.sets[j], &self.sets[k], &self.sets[j2], &self.sets[k2]);
        (0..a.words.len())
            .map(|w| (a.words[w] & b.words[w] & c.words[w] & d.words[w]).count_ones() as usize)
            .sum()
    }
}

/// Bounded, internally synchronized cache of quadruple counts. Keys are the
/// sorted index quadruple, since the count depends only on the index set.
pub struct QuadCountCache<'a> {
    index: &'a ObservationIndex,
    cache: Mutex<LruCache<[usize; 4], usize>>,
}

impl<'a> QuadCountCache<'a> {
    pub fn new(index: &'a ObservationIndex, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("capacity is at least one");
        QuadCountCache {
            index,
            cache: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn get(&self, j: usize, k: usize, j2: usize, k2: usize) -> usize {
        let mut key = [j, k, j2, k2];
        key.sort_unstable();
        if let Some(&c) = self.cache.lock().expect("quad cache poisoned").get(&key) {
            return c;
        }
        let c = self.index.quad_count(key[0], key[1], key[2], key[3]);
        self.cache.lock().expect("quad cache poisoned").put(key, c);
        c
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("quad cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan")
}

/// Reads a masked CSV: a header row of variable names, one row per sample,
/// missing cells empty or `NaN` (any case).
pub fn load_masked_csv(path: impl AsRef<Path>) -> Result<MaskedDataset> {
    let file = std::fs::File::open(path)?;
    parse_masked_csv(file)
}

pub fn parse_masked_csv<R: Read>(reader: R) -> Result<MaskedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        column: 0,
        message: e.to_string(),
    })?;
    let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: "header has zero columns".into(),
        });
    }
    let p = names.len();
    let mut samples = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // row numbers are 1-based and count the header line
        let row = r + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != p {
            return Err(Error::Parse {
                row,
                column: rec.len().min(p) + 1,
                message: format!("expected {p} fields, found {}", rec.len()),
            });
        }
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for (c, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("non-numeric value {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            idx.push(c);
            vals.push(v);
        }
        samples.push(Sample::new(idx, vals)?);
    }
    MaskedDataset::new(p, samples)?.with_var_names(names)
}

/// Writes the dataset in the same masked-CSV layout, missing cells empty.
pub fn write_masked_csv<W: Write>(data: &MaskedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let names: Vec<String> = match data.var_names() {
        Some(n) => n.to_vec(),
        None => (0..data.n_vars()).map(|j| format!("x{j}")).collect(),
    };
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&names).map_err(to_io)?;
    let mut row = vec![String::new(); data.n_vars()];
    for s in data.samples() {
        row.iter_mut().for_each(|c| c.clear());
        for (j, v) in s.iter() {
            // `{:?}` round-trips f64 exactly
            row[j] = format!("{v:?}");
        }
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
