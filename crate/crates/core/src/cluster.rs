//! Agglomerative hierarchical clustering and cluster validation.
//!
//! Linkages are updated with the Lance-Williams recurrence on a condensed
//! distance matrix. Ward, complete and average linkage are reducible and
//! use the nearest-neighbour chain; centroid linkage is not, and uses a
//! cached nearest-neighbour search. For Ward linkage on inputs too large for
//! a distance matrix, cluster distances are computed from centroids.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest input clustered through a full distance matrix.
pub const MATRIX_LIMIT: usize = 12_000;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least two samples")]
    TooFewSamples,
    #[error("rows have inconsistent dimensions or non-finite values")]
    BadInput,
    #[error("k = {k} is outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("{linkage:?} linkage needs a distance matrix and supports at most {limit} samples")]
    TooLarge { linkage: Linkage, limit: usize },
    #[error("unknown linkage `{0}`")]
    UnknownLinkage(String),
    #[error("dendrogram file {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Ward,
    Complete,
    Average,
    Centroid,
}

impl FromStr for Linkage {
    type Err = ClusterError;
    fn from_str(s: &str) -> Result<Linkage, ClusterError> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            "centroid" => Ok(Linkage::Centroid),
            _ => Err(ClusterError::UnknownLinkage(s.to_string())),
        }
    }
}

impl Linkage {
    /// Ward and centroid recurrences operate on squared distances.
    fn squared(self) -> bool {
        matches!(self, Linkage::Ward | Linkage::Centroid)
    }

    /// Lance-Williams update of `d(k, i+j)`.
    fn update(self, dki: f64, dkj: f64, dij: f64, ni: f64, nj: f64, nk: f64) -> f64 {
        match self {
            Linkage::Ward => ((nk + ni) * dki + (nk + nj) * dkj - nk * dij) / (nk + ni + nj),
            Linkage::Complete => dki.max(dkj),
            Linkage::Average => (ni * dki + nj * dkj) / (ni + nj),
            Linkage::Centroid => {
                let s = ni + nj;
                (ni * dki + nj * dkj) / s - ni * nj * dij / (s * s)
            }
        }
    }
}

/// Row-major sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn new(rows: &[Vec<f64>]) -> Result<Points, ClusterError> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return Err(ClusterError::BadInput);
        }
        Ok(Points { n: rows.len(), d, data: rows.iter().flatten().copied().collect() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.sq_dist(i, j).sqrt()
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One merge: node ids follow the usual convention where leaves are
/// `0..n` and merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Index into the upper-triangular condensed matrix.
fn condensed(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

trait ClusterDistances {
    fn n(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;
    /// Merges cluster `drop` into `keep`; sizes are before the merge.
    fn merge(&mut self, keep: usize, drop: usize, active: &[bool], size: &[usize]);
}

struct Matrix {
    n: usize,
    d: Vec<f64>,
    linkage: Linkage,
}

impl Matrix {
    fn new(p: &Points, linkage: Linkage) -> Matrix {
        let n = p.n;
        let mut d = vec![0.0; n * (n - 1) / 2];
        let squared = linkage.squared();
        let mut offsets = Vec::with_capacity(n);
        let mut rest: &mut [f64] = &mut d;
        for i in 0..n.saturating_sub(1) {
            let (row, tail) = rest.split_at_mut(n - i - 1);
            offsets.push((i, row));
            rest = tail;
        }
        offsets.into_par_iter().for_each(|(i, row)| {
            for (k, slot) in row.iter_mut().enumerate() {
                let s = p.sq_dist(i, i + 1 + k);
                *slot = if squared { s } else { s.sqrt() };
            }
        });
        Matrix { n, d, linkage }
    }
}

impl ClusterDistances for Matrix {
    fn n(&self) -> usize {
        self.n
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[condensed(self.n, i, j)]
    }

    fn merge(&mut self, keep: usize, drop: usize, active: &[bool], size: &[usize]) {
        let dij = self.get(keep, drop);
        let (ni, nj) = (size[keep] as f64, size[drop] as f64);
        for k in 0..self.n {
            if !active[k] || k == keep || k == drop {
                continue;
            }
            let dki = self.get(k, keep);
            let dkj = self.get(k, drop);
            let v = self.linkage.update(dki, dkj, dij, ni, nj, size[k] as f64);
            let idx = condensed(self.n, k, keep);
            self.d[idx] = v;
        }
    }
}

/// Ward distances from centroids: `2 n_a n_b / (n_a + n_b) |c_a - c_b|^2`.
struct Centroids {
    d: usize,
    c: Vec<f64>,
    size: Vec<f64>,
}

impl ClusterDistances for Centroids {
    fn n(&self) -> usize {
        self.size.len()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.c[i * self.d..(i + 1) * self.d], &self.c[j * self.d..(j + 1) * self.d]);
        let (ni, nj) = (self.size[i], self.size[j]);
        2.0 * ni * nj / (ni + nj) * sq_dist(a, b)
    }

    fn merge(&mut self, keep: usize, drop: usize, _active: &[bool], _size: &[usize]) {
        let (ni, nj) = (self.size[keep], self.size[drop]);
        for f in 0..self.d {
            let v = (ni * self.c[keep * self.d + f] + nj * self.c[drop * self.d + f]) / (ni + nj);
            self.c[keep * self.d + f] = v;
        }
        self.size[keep] = ni + nj;
    }
}

/// Merge found during agglomeration, in slot terms.
struct RawMerge {
    value: f64,
    min_leaf_a: usize,
    min_leaf_b: usize,
    size: usize,
}

fn nn_chain(dist: &mut dyn ClusterDistances) -> Vec<RawMerge> {
    let n = dist.n();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(n - 1);
    let mut next_start = 0;
    while out.len() < n - 1 {
        if chain.is_empty() {
            while !active[next_start] {
                next_start += 1;
            }
            chain.push(next_start);
        }
        loop {
            let x = *chain.last().expect("nonempty chain");
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best = f64::INFINITY;
            let mut y = usize::MAX;
            if let Some(p) = prev {
                best = dist.get(x, p);
                y = p;
            }
            for j in 0..n {
                if !active[j] || j == x {
                    continue;
                }
                let v = dist.get(x, j);
                if v < best {
                    best = v;
                    y = j;
                }
            }
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                let (keep, drop) = (x.min(y), x.max(y));
                out.push(RawMerge {
                    value: best,
                    min_leaf_a: min_leaf[x],
                    min_leaf_b: min_leaf[y],
                    size: size[x] + size[y],
                });
                dist.merge(keep, drop, &active, &size);
                active[drop] = false;
                size[keep] += size[drop];
                min_leaf[keep] = min_leaf[keep].min(min_leaf[drop]);
                break;
            }
            chain.push(y);
        }
    }
    out
}

/// Greedy closest-pair agglomeration with per-row nearest-neighbour caches.
/// Needed for centroid linkage, whose merge distances need not be monotone.
fn generic(dist: &mut Matrix) -> Vec<RawMerge> {
    let n = dist.n;
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];
    let recompute = |i: usize, active: &[bool], dist: &Matrix, nn: &mut [usize], nn_d: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_d[i] = f64::INFINITY;
        for j in i + 1..n {
            if active[j] {
                let v = dist.get(i, j);
                if v < nn_d[i] {
                    nn_d[i] = v;
                    nn[i] = j;
                }
            }
        }
    };
    for i in 0..n {
        recompute(i, &active, dist, &mut nn, &mut nn_d);
    }
    let mut out = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        let mut i = usize::MAX;
        for k in 0..n {
            if active[k] && nn[k] != usize::MAX && (i == usize::MAX || nn_d[k] < nn_d[i]) {
                i = k;
            }
        }
        let j = nn[i];
        let value = nn_d[i];
        out.push(RawMerge { value, min_leaf_a: min_leaf[i], min_leaf_b: min_leaf[j], size: size[i] + size[j] });
        dist.merge(i, j, &active, &size);
        active[j] = false;
        size[i] += size[j];
        min_leaf[i] = min_leaf[i].min(min_leaf[j]);
        recompute(i, &active, dist, &mut nn, &mut nn_d);
        for k in 0..j {
            if !active[k] || k == i {
                continue;
            }
            if k > i {
                // rows past i never point at i, but may point at the dropped j
                if nn[k] == j {
                    recompute(k, &active, dist, &mut nn, &mut nn_d);
                }
            } else if nn[k] == i || nn[k] == j {
                recompute(k, &active, dist, &mut nn, &mut nn_d);
            } else {
                let v = dist.get(k, i);
                if v < nn_d[k] {
                    nn_d[k] = v;
                    nn[k] = i;
                }
            }
        }
    }
    out
}

/// Assigns node ids. NN-chain output arrives out of order and is sorted by
/// height (stable); greedy output is already in merge order.
fn finish(n: usize, mut raw: Vec<RawMerge>, squared: bool, sort: bool) -> Dendrogram {
    let h = |v: f64| if squared { v.max(0.0).sqrt() } else { v };
    if sort {
        raw.sort_by(|a, b| a.value.total_cmp(&b.value));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut node: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(raw.len());
    for (i, m) in raw.iter().enumerate() {
        let ra = find(&mut parent, m.min_leaf_a);
        let rb = find(&mut parent, m.min_leaf_b);
        let (a, b) = (node[ra], node[rb]);
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        merges.push(Merge { a, b, height: h(m.value), size: m.size });
        let root = ra.min(rb);
        parent[ra.max(rb)] = root;
        node[root] = n + i;
    }
    Dendrogram { leaves: n, merges }
}

/// Agglomerates `rows` under `linkage`.
pub fn agglomerate(rows: &[Vec<f64>], linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let p = Points::new(rows)?;
    agglomerate_points(&p, linkage)
}

pub fn agglomerate_points(p: &Points, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    if p.n < 2 {
        return Err(ClusterError::TooFewSamples);
    }
    if p.n > MATRIX_LIMIT {
        if linkage != Linkage::Ward {
            return Err(ClusterError::TooLarge { linkage, limit: MATRIX_LIMIT });
        }
        let mut c = Centroids { d: p.d, c: p.data.clone(), size: vec![1.0; p.n] };
        return Ok(finish(p.n, nn_chain(&mut c), true, true));
    }
    let mut m = Matrix::new(p, linkage);
    let (raw, sort) = match linkage {
        Linkage::Centroid => (generic(&mut m), false),
        _ => (nn_chain(&mut m), true),
    };
    Ok(finish(p.n, raw, linkage.squared(), sort))
}

/// Ward linkage through the Lance-Williams matrix recurrence.
pub fn ward_agglomerate(rows: &[Vec<f64>]) -> Result<Dendrogram, ClusterError> {
    agglomerate(rows, Linkage::Ward)
}

/// Ward linkage from centroids, without a distance matrix.
pub fn ward_from_centroids(rows: &[Vec<f64>]) -> Result<Dendrogram, ClusterError> {
    let p = Points::new(rows)?;
    if p.n < 2 {
        return Err(ClusterError::TooFewSamples);
    }
    let mut c = Centroids { d: p.d, c: p.data, size: vec![1.0; p.n] };
    Ok(finish(p.n, nn_chain(&mut c), true, true))
}

impl Dendrogram {
    /// Flat clusters after undoing the `k - 1` highest merges. Cluster ids
    /// are numbered by their smallest leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>, ClusterError> {
        let n = self.leaves;
        if k < 1 || k > n {
            return Err(ClusterError::BadK { k, n });
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            parent[m.a] = n + i;
            parent[m.b] = n + i;
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out = Vec::with_capacity(n);
        for leaf in 0..n {
            let r = root(leaf);
            let next = ids.len();
            out.push(*ids.entry(r).or_insert(next));
        }
        Ok(out)
    }

    /// Leaves under each node, built merge by merge.
    fn members(&self) -> Vec<Vec<usize>> {
        let n = self.leaves;
        let mut m: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        m.reserve(n);
        for mg in &self.merges {
            let mut v = m[mg.a].clone();
            v.extend_from_slice(&m[mg.b]);
            m.push(v);
        }
        m
    }

    /// Visits every merge with the leaf sets it joins, reusing buffers.
    pub fn for_each_join(&self, mut f: impl FnMut(&Merge, &[usize], &[usize])) {
        let n = self.leaves;
        let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        sets.resize(2 * n - 1, Vec::new());
        for (i, mg) in self.merges.iter().enumerate() {
            let a = std::mem::take(&mut sets[mg.a]);
            let b = std::mem::take(&mut sets[mg.b]);
            f(mg, &a, &b);
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            big.extend(small);
            sets[n + i] = big;
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#lobsim-dendrogram v1\nleaves\t{}\nnode_a\tnode_b\theight\tsize\n", self.leaves);
        for m in &self.merges {
            writeln!(s, "{}\t{}\t{}\t{}", m.a, m.b, m.height, m.size).expect("string write");
        }
        s
    }

    /// Leading `# ` provenance lines are skipped.
    pub fn from_text(text: &str) -> Result<Dendrogram, String> {
        let mut lines = text.lines().skip_while(|l| l.starts_with("# "));
        if lines.next() != Some("#lobsim-dendrogram v1") {
            return Err("missing dendrogram header".into());
        }
        let leaves = lines
            .next()
            .and_then(|l| l.strip_prefix("leaves\t"))
            .and_then(|v| v.parse().ok())
            .ok_or("missing leaf count")?;
        if lines.next() != Some("node_a\tnode_b\theight\tsize") {
            return Err("missing column header".into());
        }
        let mut merges = Vec::new();
        for (i, l) in lines.enumerate() {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || format!("malformed merge line {}", i + 1);
            if f.len() != 4 {
                return Err(bad());
            }
            merges.push(Merge {
                a: f[0].parse().map_err(|_| bad())?,
                b: f[1].parse().map_err(|_| bad())?,
                height: f[2].parse().map_err(|_| bad())?,
                size: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Dendrogram { leaves, merges })
    }

    /// Writes the merge list, preceded by `provenance` lines if given.
    pub fn save(&self, path: &Path, provenance: Option<&str>) -> Result<(), ClusterError> {
        let text = match provenance {
            Some(p) => format!("{}\n{}", p.trim_end(), self.to_text()),
            None => self.to_text(),
        };
        std::fs::write(path, text)
            .map_err(|e| ClusterError::Io { path: path.to_path_buf(), reason: e.to_string() })
    }
}

/// Leaf sets of each merge, for comparisons that ignore node numbering.
pub fn merge_sets(d: &Dendrogram) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, f64)> {
    let m = d.members();
    d.merges
        .iter()
        .map(|mg| (m[mg.a].iter().copied().collect(), m[mg.b].iter().copied().collect(), mg.height))
        .collect()
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(p: &Points, labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; k * p.d];
    let mut counts = vec![0usize; k];
    for i in 0..p.n {
        counts[labels[i]] += 1;
        for f in 0..p.d {
            sums[labels[i] * p.d + f] += p.row(i)[f];
        }
    }
    (0..p.n)
        .map(|i| {
            let c = labels[i];
            (0..p.d).map(|f| (p.row(i)[f] - sums[c * p.d + f] / counts[c] as f64).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Mean silhouette for several labelings in one pass over all pairs.
/// Samples in singleton clusters score 0.
pub fn silhouettes(p: &Points, labelings: &[Vec<usize>]) -> Vec<f64> {
    let n = p.n;
    let ks: Vec<usize> = labelings.iter().map(|l| l.iter().max().map_or(0, |m| m + 1)).collect();
    let offsets: Vec<usize> = ks.iter().scan(0, |acc, &k| {
        let o = *acc;
        *acc += k;
        Some(o)
    }).collect();
    let width: usize = ks.iter().sum();
    let sums: Vec<f64> = (0..n)
        .into_par_iter()
        .fold(
            || vec![0.0; n * width],
            |mut acc, i| {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let d = p.dist(i, j);
                    for (l, lab) in labelings.iter().enumerate() {
                        acc[i * width + offsets[l] + lab[j]] += d;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; n * width],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    labelings
        .iter()
        .enumerate()
        .map(|(l, lab)| {
            let k = ks[l];
            let mut size = vec![0usize; k];
            lab.iter().for_each(|&c| size[c] += 1);
            let total: f64 = (0..n)
                .map(|i| {
                    let own = lab[i];
                    if size[own] <= 1 {
                        return 0.0;
                    }
                    let row = &sums[i * width + offsets[l]..i * width + offsets[l] + k];
                    let a = row[own] / (size[own] - 1) as f64;
                    let b = (0..k)
                        .filter(|&c| c != own && size[c] > 0)
                        .map(|c| row[c] / size[c] as f64)
                        .fold(f64::INFINITY, f64::min);
                    if !b.is_finite() {
                        return 0.0;
                    }
                    let m = a.max(b);
                    if m > 0.0 {
                        (b - a) / m
                    } else {
                        0.0
                    }
                })
                .sum();
            total / n as f64
        })
        .collect()
}

pub fn silhouette(p: &Points, labels: &[usize]) -> f64 {
    silhouettes(p, std::slice::from_ref(&labels.to_vec()))[0]
}

/// Pearson correlation between cophenetic and original distances.
pub fn cophenetic_correlation(p: &Points, d: &Dendrogram) -> f64 {
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    d.for_each_join(|m, a, b| {
        let h = m.height;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for &i in a {
            for &j in b {
                let v = p.dist(i, j);
                s += v;
                s2 += v * v;
            }
        }
        let cnt = (a.len() * b.len()) as f64;
        n += cnt;
        sx += h * cnt;
        sxx += h * h * cnt;
        sy += s;
        syy += s2;
        sxy += h * s;
    });
    let cov = sxy / n - (sx / n) * (sy / n);
    let vx = sxx / n - (sx / n).powi(2);
    let vy = syy / n - (sy / n).powi(2);
    cov / (vx * vy).sqrt()
}

/// Knee of a decreasing curve: the point farthest below the chord joining
/// its endpoints, after scaling both axes to [0, 1].
pub fn elbow(ks: &[usize], values: &[f64]) -> usize {
    assert!(ks.len() == values.len() && !ks.is_empty());
    if ks.len() < 3 {
        return ks[0];
    }
    let (k0, k1) = (ks[0] as f64, *ks.last().expect("nonempty") as f64);
    let (vmax, vmin) = values.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let pts: Vec<(f64, f64)> =
        ks.iter().zip(values).map(|(&k, &v)| ((k as f64 - k0) / (k1 - k0), (v - vmin) / span)).collect();
    let (x0, y0) = pts[0];
    let (x1, y1) = *pts.last().expect("nonempty");
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &(x, y)) in pts.iter().enumerate() {
        // distance below the chord, signed
        let chord = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        let dist = chord - y;
        if dist > best_d {
            best_d = dist;
            best = i;
        }
    }
    ks[best]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KDiagnostics {
    pub silhouette: Vec<(usize, f64)>,
    pub wcss: Vec<(usize, f64)>,
    pub silhouette_peak: usize,
    pub elbow: usize,
    pub cophenetic: f64,
}

/// Silhouette over `sil_ks`, WCSS and its elbow over `wcss_ks`, and the
/// cophenetic correlation.
pub fn k_diagnostics(p: &Points, d: &Dendrogram, sil_ks: &[usize], wcss_ks: &[usize]) -> Result<KDiagnostics, ClusterError> {
    let cuts: Vec<Vec<usize>> = sil_ks.iter().map(|&k| d.cut(k)).collect::<Result<_, _>>()?;
    let sil = silhouettes(p, &cuts);
    let w: Vec<f64> = wcss_ks.iter().map(|&k| d.cut(k).map(|c| wcss(p, &c))).collect::<Result<_, _>>()?;
    let peak = sil
        .iter()
        .enumerate()
        .fold(0, |b, (i, &s)| if s > sil[b] { i } else { b });
    Ok(KDiagnostics {
        silhouette: sil_ks.iter().copied().zip(sil.iter().copied()).collect(),
        wcss: wcss_ks.iter().copied().zip(w.iter().copied()).collect(),
        silhouette_peak: sil_ks[peak],
        elbow: elbow(wcss_ks, &w),
        cophenetic: cophenetic_correlation(p, d),
    })
}

/// Each cluster's majority class; classes left without a cluster then take
/// the cluster holding most of their members, larger counts first, provided
/// the class displaced keeps at least one other cluster. Ties go to the
/// lowest index.
pub fn map_clusters(assignments: &[usize], labels: &[u8]) -> Vec<u8> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let classes: Vec<u8> = labels.iter().copied().collect::<BTreeSet<u8>>().into_iter().collect();
    let pos = |c: u8| classes.binary_search(&c).expect("known class");
    let mut counts = vec![vec![0usize; classes.len()]; k];
    for (&a, &l) in assignments.iter().zip(labels) {
        counts[a][pos(l)] += 1;
    }
    let argmax = |row: &[usize]| row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
    let mut map: Vec<usize> = counts.iter().map(|r| argmax(r)).collect();
    let mut missing: Vec<(usize, usize, usize)> = (0..classes.len())
        .filter(|c| !map.contains(c))
        .map(|c| {
            let best = (0..k).fold(0, |b, a| if counts[a][c] > counts[b][c] { a } else { b });
            (counts[best][c], c, best)
        })
        .collect();
    missing.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    // a cluster is only taken over if its class keeps another cluster
    let mut held = vec![0usize; classes.len()];
    map.iter().for_each(|&c| held[c] += 1);
    let mut repaired = vec![false; k];
    for (count, c, cluster) in missing {
        if count > 0 && !repaired[cluster] && held[map[cluster]] > 1 {
            held[map[cluster]] -= 1;
            map[cluster] = c;
            held[c] += 1;
            repaired[cluster] = true;
        }
    }
    map.into_iter().map(|c| classes[c]).collect()
}

/// Classes and clusters that are reported together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGroup {
    pub classes: Vec<u8>,
    pub clusters: Vec<usize>,
}

/// Links every class to the cluster holding most of its members, and every
/// cluster not chosen by any class to its majority class. The connected
/// components of these links are the reporting groups.
pub fn group_clusters(assignments: &[usize], labels: &[u8]) -> Vec<ClusterGroup> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let classes: Vec<u8> = labels.iter().copied().collect::<BTreeSet<u8>>().into_iter().collect();
    let nc = classes.len();
    let pos = |c: u8| classes.binary_search(&c).expect("known class");
    let mut counts = vec![vec![0usize; nc]; k];
    for (&a, &l) in assignments.iter().zip(labels) {
        counts[a][pos(l)] += 1;
    }
    // nodes: classes 0..nc, clusters nc..nc+k
    let mut parent: Vec<usize> = (0..nc + k).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let union = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            p[ra.max(rb)] = ra.min(rb);
        }
    };
    let mut claimed = vec![false; k];
    for c in 0..nc {
        let best = (0..k).fold(0, |b, a| if counts[a][c] > counts[b][c] { a } else { b });
        claimed[best] = true;
        union(&mut parent, c, nc + best);
    }
    for a in 0..k {
        if !claimed[a] {
            let row = &counts[a];
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            union(&mut parent, best, nc + a);
        }
    }
    let mut groups: BTreeMap<usize, ClusterGroup> = BTreeMap::new();
    for node in 0..nc + k {
        let r = find(&mut parent, node);
        let g = groups.entry(r).or_insert(ClusterGroup { classes: Vec::new(), clusters: Vec::new() });
        if node < nc {
            g.classes.push(classes[node]);
        } else {
            g.clusters.push(node - nc);
        }
    }
    groups.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub linkage: Linkage,
    pub assignments: Vec<usize>,
    /// Cluster means in the fitted feature space, row per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Majority class of each cluster after empty-class repair.
    pub cluster_class: Vec<u8>,
    pub groups: Vec<ClusterGroup>,
}

impl ClusterModel {
    pub fn fit(p: &Points, d: &Dendrogram, k: usize, labels: &[u8], linkage: Linkage) -> Result<ClusterModel, ClusterError> {
        let assignments = d.cut(k)?;
        let mut centroids = vec![vec![0.0; p.d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (c, v) in centroids[a].iter_mut().zip(p.row(i)) {
                *c += v;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok(ClusterModel {
            k,
            linkage,
            cluster_class: map_clusters(&assignments, labels),
            groups: group_clusters(&assignments, labels),
            assignments,
            centroids,
        })
    }

    /// Nearest centroid; ties go to the lowest cluster index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(c, x);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    pub fn group_of_cluster(&self, cluster: usize) -> usize {
        self.groups.iter().position(|g| g.clusters.contains(&cluster)).expect("every cluster is grouped")
    }

    pub fn group_of_class(&self, class: u8) -> Option<usize> {
        self.groups.iter().position(|g| g.classes.contains(&class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub classes: Vec<u8>,
    pub clusters: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub k: usize,
    pub groups: Vec<GroupMetrics>,
    pub accuracy: f64,
    /// Test counts, class by cluster.
    pub counts: BTreeMap<u8, Vec<usize>>,
    pub assignments: Vec<usize>,
}

impl ClusterReport {
    pub fn group_with(&self, class: u8) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.classes.contains(&class))
    }

    /// Tab-separated table, one row per reporting group. Cluster numbers
    /// are shown one-based.
    pub fn to_tsv(&self, names: &dyn Fn(u8) -> String) -> String {
        let mut s = String::from("agent_types\tassigned_clusters\tprecision\trecall\tf1\tsupport\n");
        for g in &self.groups {
            let types: Vec<String> = g.classes.iter().map(|&c| names(c)).collect();
            let clusters: Vec<String> = g.clusters.iter().map(|c| (c + 1).to_string()).collect();
            writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}",
                if types.is_empty() { "-".to_string() } else { types.join(", ") },
                clusters.join(", "),
                g.precision,
                g.recall,
                g.f1,
                g.support
            )
            .expect("string write");
        }
        writeln!(s, "overall accuracy\t\t\t\t{:.4}\t{}", self.accuracy, self.assignments.len()).expect("string write");
        s
    }
}

/// Assigns test rows to the nearest training centroid and scores the
/// grouped predictions.
pub fn assign_test(model: &ClusterModel, x: &[Vec<f64>], labels: &[u8]) -> ClusterReport {
    let assignments: Vec<usize> = x.par_iter().map(|r| model.nearest(r)).collect();
    let ng = model.groups.len();
    let mut tp = vec![0usize; ng];
    let mut pred = vec![0usize; ng];
    let mut support = vec![0usize; ng];
    let mut correct = 0usize;
    let mut counts: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        counts.entry(l).or_insert_with(|| vec![0; model.k])[a] += 1;
        let pg = model.group_of_cluster(a);
        pred[pg] += 1;
        if let Some(tg) = model.group_of_class(l) {
            support[tg] += 1;
            if tg == pg {
                tp[tg] += 1;
                correct += 1;
            }
        }
    }
    let groups = model
        .groups
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let precision = if pred[g] > 0 { tp[g] as f64 / pred[g] as f64 } else { 0.0 };
            let recall = if support[g] > 0 { tp[g] as f64 / support[g] as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            GroupMetrics {
                classes: grp.classes.clone(),
                clusters: grp.clusters.clone(),
                precision,
                recall,
                f1,
                support: support[g],
            }
        })
        .collect();
    ClusterReport {
        k: model.k,
        groups,
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        counts,
        assignments,
    }
}
