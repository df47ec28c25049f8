//! SMOTE oversampling, edited-nearest-neighbour cleaning and their
//! combination.
//!
//! Neighbour search is exact brute force over Euclidean distance. Ties are
//! broken by the lower row index so results never depend on iteration order.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// How many synthetic rows SMOTE produces per target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteAmount {
    /// `N` new rows for every minority row.
    PerSample(usize),
    /// Enough rows to lift each target class to the majority-class count.
    Balance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteParams {
    pub amount: SmoteAmount,
    pub k_neighbors: usize,
    pub target_classes: Vec<usize>,
    pub seed: u64,
}

impl SmoteParams {
    pub fn new(amount: SmoteAmount, target_classes: Vec<usize>, seed: u64) -> Self {
        Self { amount, k_neighbors: 5, target_classes, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnnParams {
    pub k_neighbors: usize,
}

impl Default for EnnParams {
    fn default() -> Self {
        Self { k_neighbors: 3 }
    }
}

/// Keeps the `k` smallest `(distance, index)` pairs in ascending order.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d: f64, i: usize) {
        if self.items.len() == self.k {
            let (bd, bi) = self.items[self.k - 1];
            if d > bd || (d == bd && i > bi) {
                return;
            }
        }
        let pos = self.items.partition_point(|&(od, oi)| od < d || (od == d && oi < i));
        self.items.insert(pos, (d, i));
        self.items.truncate(self.k);
    }
}

/// Row-major view of `points` (copied only when not already contiguous).
fn flat_rows(points: ArrayView2<'_, f64>) -> std::borrow::Cow<'_, [f64]> {
    match points.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(points.iter().copied().collect()),
    }
}

const LANES: usize = 8;

fn knn_among<I: Iterator<Item = usize>>(flat: &[f64], d: usize, query: usize, k: usize, candidates: I) -> Vec<usize> {
    let q = &flat[query * d..(query + 1) * d];
    let mut top = TopK::new(k);
    let mut bound = f64::INFINITY;
    let mut ids = [0usize; LANES];
    let mut filled = 0;
    let flush = |ids: &[usize], top: &mut TopK, bound: &mut f64| {
        // Each lane sums its terms left to right, exactly like a one-row
        // scan; interleaving lanes only hides the add latency. A block is
        // abandoned once every lane already exceeds the k-th best distance.
        let mut acc = [0.0f64; LANES];
        let mut j = 0;
        while j < d {
            let end = (j + 4).min(d);
            for (lane, &c) in ids.iter().enumerate() {
                let row = &flat[c * d..(c + 1) * d];
                for t in j..end {
                    let diff = q[t] - row[t];
                    acc[lane] += diff * diff;
                }
            }
            j = end;
            if acc[..ids.len()].iter().all(|&a| a > *bound) {
                return;
            }
        }
        for (lane, &c) in ids.iter().enumerate() {
            if acc[lane] <= *bound {
                top.offer(acc[lane], c);
                *bound = top.bound();
            }
        }
    };
    for c in candidates {
        ids[filled] = c;
        filled += 1;
        if filled == LANES {
            flush(&ids, &mut top, &mut bound);
            filled = 0;
        }
    }
    flush(&ids[..filled], &mut top, &mut bound);
    top.items.into_iter().map(|(_, i)| i).collect()
}

/// Nearest neighbours of `query` among all other rows, reading features
/// from a column-major copy (`cols[t * n + row]`) so that consecutive
/// candidates sit next to each other. Distances are summed per candidate in
/// feature order, identical to the row-major scan.
fn knn_all_columnar(cols: &[f64], n: usize, d: usize, query: usize, k: usize) -> Vec<usize> {
    let q: Vec<f64> = (0..d).map(|t| cols[t * n + query]).collect();
    let mut top = TopK::new(k);
    let mut bound = f64::INFINITY;
    let mut start = 0;
    while start < n {
        let width = LANES.min(n - start);
        let mut acc = [0.0f64; LANES];
        let mut pruned = false;
        let mut t = 0;
        while t < d {
            let end = (t + 4).min(d);
            for (tt, &qv) in q.iter().enumerate().take(end).skip(t) {
                let col = &cols[tt * n + start..tt * n + start + width];
                for (a, &v) in acc.iter_mut().zip(col) {
                    let diff = qv - v;
                    *a += diff * diff;
                }
            }
            t = end;
            if acc[..width].iter().all(|&a| a > bound) {
                pruned = true;
                break;
            }
        }
        if !pruned {
            for (lane, &a) in acc[..width].iter().enumerate() {
                let c = start + lane;
                if c != query && a <= bound {
                    top.offer(a, c);
                    bound = top.bound();
                }
            }
        }
        start += width;
    }
    top.items.into_iter().map(|(_, i)| i).collect()
}

/// Indices of the `k` rows nearest to row `query`, nearest first.
///
/// Candidates are all rows, or only `restrict_to` when given; the query row
/// itself is skipped when `exclude_self` is set.
pub fn knn_indices(
    points: ArrayView2<f64>,
    query: usize,
    k: usize,
    exclude_self: bool,
    restrict_to: Option<&[usize]>,
) -> Result<Vec<usize>> {
    if query >= points.nrows() {
        return Err(Error::Data(format!("query row {query} out of range")));
    }
    let available = match restrict_to {
        Some(r) => r.iter().filter(|&&i| !(exclude_self && i == query)).count(),
        None => points.nrows() - usize::from(exclude_self),
    };
    if k == 0 || k > available {
        return Err(Error::Data(format!("need {k} neighbours but only {available} candidates")));
    }
    let flat = flat_rows(points);
    let d = points.ncols();
    let out = match restrict_to {
        Some(r) => knn_among(&flat, d, query, k, r.iter().copied().filter(|&i| !(exclude_self && i == query))),
        None => knn_among(&flat, d, query, k, (0..points.nrows()).filter(|&i| !(exclude_self && i == query))),
    };
    Ok(out)
}

/// Where a synthetic SMOTE row came from: `source + lambda * (neighbor - source)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoteOrigin {
    pub source: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Synthetic rows only, with the schema and classes of the input.
    pub synthetic: Dataset,
    /// One entry per synthetic row, indices into the input dataset.
    pub origins: Vec<SmoteOrigin>,
}

/// Per-row synthetic counts for one class of size `n` that must gain `needed`
/// rows: everyone gets `needed / n`, a random subset gets one extra.
fn balance_counts(n: usize, needed: usize, rng: &mut crate::rng::Rng) -> Vec<usize> {
    let mut counts = vec![needed / n; n];
    let extra = needed % n;
    if extra > 0 {
        for i in rand::seq::index::sample(rng, n, extra) {
            counts[i] += 1;
        }
    }
    counts
}

/// Generates synthetic minority rows by interpolating each target-class row
/// towards one of its `k` nearest same-class neighbours.
pub fn smote(data: &Dataset, params: &SmoteParams) -> Result<SmoteOutput> {
    let k = params.k_neighbors;
    if k == 0 {
        return Err(Error::Config("SMOTE k must be at least 1".into()));
    }
    let mut targets = params.target_classes.clone();
    targets.sort_unstable();
    targets.dedup();
    if let Some(&bad) = targets.iter().find(|&&c| c >= data.n_classes()) {
        return Err(Error::Config(format!("SMOTE target class {bad} does not exist")));
    }

    let by_class = data.class_indices();
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = rng_from_seed(params.seed);
    let d = data.n_features();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut origins = Vec::new();

    for &class in &targets {
        let members = &by_class[class];
        let per_row: Vec<usize> = match params.amount {
            SmoteAmount::PerSample(n) => vec![n; members.len()],
            SmoteAmount::Balance => {
                let needed = majority.saturating_sub(members.len());
                if needed == 0 || members.is_empty() {
                    continue;
                }
                balance_counts(members.len(), needed, &mut rng)
            }
        };
        if per_row.iter().all(|&n| n == 0) {
            continue;
        }
        if members.len() < k + 1 {
            return Err(Error::Data(format!(
                "class {:?} has {} rows, SMOTE with k = {k} needs at least {}",
                data.class_names[class],
                members.len(),
                k + 1
            )));
        }
        let neighbours: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| knn_indices(data.features.view(), i, k, true, Some(members)))
            .collect::<Result<_>>()?;
        for (pos, &i) in members.iter().enumerate() {
            let x = data.features.row(i);
            for _ in 0..per_row[pos] {
                let j = neighbours[pos][rng.random_range(0..k)];
                let lambda: f64 = rng.random();
                let xn = data.features.row(j);
                values.extend(x.iter().zip(xn.iter()).map(|(a, b)| a + lambda * (b - a)));
                labels.push(class);
                origins.push(SmoteOrigin { source: i, neighbor: j, lambda });
            }
        }
    }

    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row width fixed");
    let synthetic = Dataset {
        features,
        labels,
        class_names: data.class_names.clone(),
        schema: data.schema.clone(),
    };
    Ok(SmoteOutput { synthetic, origins })
}

/// Row indices kept by edited nearest neighbours. A row is dropped when more
/// than half of its `k` nearest neighbours (self excluded, any class) share a
/// class different from its own. All decisions use the unedited input.
pub fn enn_keep(data: &Dataset, params: &EnnParams) -> Result<Vec<usize>> {
    let k = params.k_neighbors;
    if k == 0 {
        return Err(Error::Config("ENN k must be at least 1".into()));
    }
    let n = data.n_rows();
    if n <= k + 1 {
        return Err(Error::Data(format!("ENN with k = {k} needs more than {} rows, got {n}", k + 1)));
    }
    let d = data.n_features();
    let cols: Vec<f64> = data.features.t().iter().copied().collect();
    let mut votes = vec![0usize; data.n_classes()];
    let mut keep = Vec::with_capacity(n);
    for i in 0..n {
        let nn = knn_all_columnar(&cols, n, d, i, k);
        votes.iter_mut().for_each(|v| *v = 0);
        for &j in &nn {
            votes[data.labels[j]] += 1;
        }
        let majority = votes.iter().position(|&v| 2 * v > k);
        match majority {
            Some(c) if c != data.labels[i] => {}
            _ => keep.push(i),
        }
    }
    Ok(keep)
}

pub fn enn_filter(data: &Dataset, params: &EnnParams) -> Result<Dataset> {
    Ok(data.select(&enn_keep(data, params)?))
}

/// SMOTE followed by ENN over the union of original and synthetic rows.
/// Original rows come first in the output, then surviving synthetic rows.
pub fn smoteenn(data: &Dataset, smote_params: &SmoteParams, enn: &EnnParams) -> Result<Dataset> {
    let synthetic = smote(data, smote_params)?.synthetic;
    let combined = data.concat(&synthetic)?;
    enn_filter(&combined, enn)
}
