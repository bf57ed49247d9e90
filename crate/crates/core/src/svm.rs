//! Soft-margin support vector machines, one-vs-one multiclass voting,
//! grid search, classification metrics and linear weight explanations.
//!
//! Binary problems are solved in the dual with a sequential minimal
//! optimization loop using second-order working-set selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Scaler;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `(gamma * x.z)^degree`.
    Poly { gamma: f64, degree: u32 },
    /// `exp(-gamma * |x - z|^2)`.
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Poly { gamma, degree } => (gamma * dot(a, b)).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Kernel::Linear => 0,
            Kernel::Poly { .. } => 1,
            Kernel::Rbf { .. } => 2,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperParams {
    #[serde(flatten)]
    pub kernel: Kernel,
    #[serde(rename = "C")]
    pub c: f64,
}

impl SvmHyperParams {
    pub fn linear(c: f64) -> SvmHyperParams {
        SvmHyperParams { kernel: Kernel::Linear, c }
    }

    pub fn label(&self) -> String {
        match self.kernel {
            Kernel::Linear => format!("linear C={}", self.c),
            Kernel::Poly { gamma, degree } => format!("poly C={} gamma={gamma} degree={degree}", self.c),
            Kernel::Rbf { gamma } => format!("rbf C={} gamma={gamma}", self.c),
        }
    }
}

pub const GRID_C: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
pub const GRID_GAMMA: [f64; 3] = [0.01, 0.1, 1.0];
pub const GRID_DEGREE: [u32; 3] = [2, 3, 4];

/// Every combination of kernel, C, gamma and degree.
pub fn full_grid() -> Vec<SvmHyperParams> {
    let mut g: Vec<SvmHyperParams> = GRID_C.iter().map(|&c| SvmHyperParams::linear(c)).collect();
    for &c in &GRID_C {
        for &gamma in &GRID_GAMMA {
            for &degree in &GRID_DEGREE {
                g.push(SvmHyperParams { kernel: Kernel::Poly { gamma, degree }, c });
            }
        }
    }
    for &c in &GRID_C {
        for &gamma in &GRID_GAMMA {
            g.push(SvmHyperParams { kernel: Kernel::Rbf { gamma }, c });
        }
    }
    g
}

pub fn linear_grid() -> Vec<SvmHyperParams> {
    GRID_C.iter().map(|&c| SvmHyperParams::linear(c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Kernel row cache budget in megabytes.
    pub cache_mb: usize,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions { tolerance: 1e-3, max_iter: 100_000, cache_mb: 200 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("training data is empty or ragged")]
    BadShape,
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("C must be positive and kernel parameters valid")]
    BadHyperParams,
    #[error("weight explanations need a linear kernel")]
    NotLinear,
    #[error("empty evaluation set")]
    EmptyTest,
    #[error("model file {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// Kernel rows of the signed matrix `Q_ij = y_i y_j K(x_i, x_j)`, with a
/// least-recently-used cache.
struct QMatrix<'a> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    kernel: Kernel,
    diag: Vec<f64>,
    rows: Vec<Option<(Vec<f64>, u64)>>,
    cached: Vec<usize>,
    capacity: usize,
    clock: u64,
}

impl<'a> QMatrix<'a> {
    fn new(x: &'a [&'a [f64]], y: &'a [f64], kernel: Kernel, cache_mb: usize) -> QMatrix<'a> {
        let n = x.len();
        let diag = (0..n).map(|i| kernel.eval(x[i], x[i])).collect();
        let capacity = ((cache_mb << 20) / (8 * n.max(1))).max(2);
        QMatrix { x, y, kernel, diag, rows: vec![None; n], cached: Vec::new(), capacity, clock: 0 }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if self.rows[i].is_none() {
            if self.cached.len() >= self.capacity {
                let (pos, _) = self
                    .cached
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &r)| self.rows[r].as_ref().map_or(0, |e| e.1))
                    .expect("cache is full so nonempty");
                let evicted = self.cached.swap_remove(pos);
                self.rows[evicted] = None;
            }
            let xi = self.x[i];
            let yi = self.y[i];
            let row = self.x.iter().zip(self.y).map(|(xj, yj)| yi * yj * self.kernel.eval(xi, xj)).collect();
            self.rows[i] = Some((row, clock));
            self.cached.push(i);
        }
        let entry = self.rows[i].as_mut().expect("just filled");
        entry.1 = clock;
        &entry.0
    }
}

/// Result of one binary solve. The decision function is
/// `sum_i coef_i K(x_i, x) + bias` with `coef_i = alpha_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective `sum(alpha) - alpha'Q alpha / 2` (to be maximized).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TAU: f64 = 1e-12;

/// Solves the soft-margin dual for labels `y` in {-1, +1}.
pub fn solve_binary(
    x: &[&[f64]],
    y: &[f64],
    hp: &SvmHyperParams,
    opts: &SolverOptions,
) -> Result<BinarySolution, SvmError> {
    validate_hp(hp)?;
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(SvmError::BadShape);
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(SvmError::BadShape);
    }
    if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(SvmError::NonFinite);
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(SvmError::SingleClass);
    }
    let c = hp.c;
    let mut q = QMatrix::new(x, y, hp.kernel, opts.cache_mb);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // i maximizes -y G over the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        if i == usize::MAX || gmax - gmin < opts.tolerance {
            converged = true;
            break;
        }
        let qii = q.diag[i];
        let qi: Vec<f64> = q.row(i).to_vec();
        // j minimizes the second-order objective decrease estimate
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b <= 0.0 {
                continue;
            }
            let a = qii + q.diag[t] - 2.0 * y[i] * y[t] * qi[t];
            let a = if a > 0.0 { a } else { TAU };
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j = t;
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;
        let qj: Vec<f64> = q.row(j).to_vec();
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let a = (qii + q.diag[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / a;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let a = (qii + q.diag[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / a;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    // objective = -(0.5 a'Qa - e'a) = -0.5 * sum a_i (G_i - 1)
    let objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(BinarySolution { alpha, bias: -rho, objective, iterations, converged })
}

impl SvmHyperParams {
    pub fn validate(&self) -> Result<(), SvmError> {
        validate_hp(self)
    }
}

fn validate_hp(hp: &SvmHyperParams) -> Result<(), SvmError> {
    let ok = hp.c > 0.0
        && hp.c.is_finite()
        && match hp.kernel {
            Kernel::Linear => true,
            Kernel::Poly { gamma, degree } => gamma > 0.0 && degree >= 1,
            Kernel::Rbf { gamma } => gamma > 0.0,
        };
    if ok {
        Ok(())
    } else {
        Err(SvmError::BadHyperParams)
    }
}

/// A trained two-class model; `positive` and `negative` are class ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub positive: u8,
    pub negative: u8,
    /// Indices into the owning model's support vector pool.
    pub support: Vec<usize>,
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Explicit primal weights, for the linear kernel only.
    pub weights: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// One-vs-one multiclass SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoSvm {
    pub version: u32,
    pub params: SvmHyperParams,
    pub classes: Vec<u8>,
    pub support_vectors: Vec<Vec<f64>>,
    pub pairs: Vec<PairModel>,
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub scaler: Option<Scaler>,
    /// Manifest hash of the training data.
    #[serde(default)]
    pub provenance: Option<String>,
}

/// Binary model for standalone use.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub solution: BinarySolution,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.coef).map(|(sv, c)| c * self.kernel.eval(sv, x)).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.decision(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

pub fn train_binary_svm(
    x: &[Vec<f64>],
    y: &[f64],
    hp: &SvmHyperParams,
    opts: &SolverOptions,
) -> Result<BinarySvm, SvmError> {
    let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
    let sol = solve_binary(&rows, y, hp, opts)?;
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            coef.push(a * y[i]);
        }
    }
    Ok(BinarySvm { kernel: hp.kernel, support_vectors, coef, bias: sol.bias, solution: sol })
}

pub fn train_ovo(x: &[Vec<f64>], labels: &[u8], hp: &SvmHyperParams, opts: &SolverOptions) -> Result<OvoSvm, SvmError> {
    validate_hp(hp)?;
    if x.len() != labels.len() || x.is_empty() {
        return Err(SvmError::BadShape);
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::TooFewClasses(classes.len()));
    }
    let mut pair_list = Vec::new();
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            pair_list.push((classes[a], classes[b]));
        }
    }
    let solved: Vec<(u8, u8, Vec<usize>, BinarySolution)> = pair_list
        .par_iter()
        .map(|&(p, n)| {
            let rows: Vec<usize> = (0..x.len()).filter(|&i| labels[i] == p || labels[i] == n).collect();
            let xs: Vec<&[f64]> = rows.iter().map(|&i| x[i].as_slice()).collect();
            let ys: Vec<f64> = rows.iter().map(|&i| if labels[i] == p { 1.0 } else { -1.0 }).collect();
            solve_binary(&xs, &ys, hp, opts).map(|s| (p, n, rows, s))
        })
        .collect::<Result<_, _>>()?;

    let mut pool_index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut support_vectors = Vec::new();
    let mut pairs = Vec::with_capacity(solved.len());
    for (p, n, rows, sol) in solved {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        let mut w = matches!(hp.kernel, Kernel::Linear).then(|| vec![0.0; x[0].len()]);
        for (k, &a) in sol.alpha.iter().enumerate() {
            if a <= 0.0 {
                continue;
            }
            let row = rows[k];
            let yk = if labels[row] == p { 1.0 } else { -1.0 };
            let slot = *pool_index.entry(row).or_insert_with(|| {
                support_vectors.push(x[row].clone());
                support_vectors.len() - 1
            });
            support.push(slot);
            coef.push(a * yk);
            if let Some(w) = w.as_mut() {
                for (wf, xf) in w.iter_mut().zip(&x[row]) {
                    *wf += a * yk * xf;
                }
            }
        }
        pairs.push(PairModel {
            positive: p,
            negative: n,
            support,
            coef,
            bias: sol.bias,
            weights: w,
            iterations: sol.iterations,
            converged: sol.converged,
        });
    }
    Ok(OvoSvm {
        version: MODEL_FORMAT_VERSION,
        params: *hp,
        classes,
        support_vectors,
        pairs,
        feature_names: Vec::new(),
        scaler: None,
        provenance: None,
    })
}

impl OvoSvm {
    pub fn pair_decision(&self, pair: &PairModel, x: &[f64]) -> f64 {
        match &pair.weights {
            Some(w) => dot(w, x) + pair.bias,
            None => {
                pair.support
                    .iter()
                    .zip(&pair.coef)
                    .map(|(&s, c)| c * self.params.kernel.eval(&self.support_vectors[s], x))
                    .sum::<f64>()
                    + pair.bias
            }
        }
    }

    /// Decision values in pair order.
    pub fn decisions(&self, x: &[f64]) -> Vec<f64> {
        self.pairs.iter().map(|p| self.pair_decision(p, x)).collect()
    }

    /// Majority vote, ties broken by summed decision magnitude in favour of
    /// each class, then by the lowest class id.
    pub fn vote(&self, decisions: &[f64]) -> u8 {
        let k = self.classes.len();
        let pos = |c: u8| self.classes.binary_search(&c).expect("known class");
        let mut votes = vec![0u32; k];
        let mut margin = vec![0.0; k];
        for (p, &d) in self.pairs.iter().zip(decisions) {
            let (a, b) = (pos(p.positive), pos(p.negative));
            if d >= 0.0 {
                votes[a] += 1;
            } else {
                votes[b] += 1;
            }
            margin[a] += d;
            margin[b] -= d;
        }
        let mut best = 0;
        for c in 1..k {
            if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
                best = c;
            }
        }
        self.classes[best]
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        self.vote(&self.decisions(x))
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Vec<u8> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn converged(&self) -> bool {
        self.pairs.iter().all(|p| p.converged)
    }

    pub fn save(&self, path: &Path) -> Result<(), SvmError> {
        let io = |e: String| SvmError::Io { path: path.to_path_buf(), reason: e };
        let text = serde_json::to_string(self).map_err(|e| io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<OvoSvm, SvmError> {
        let io = |e: String| SvmError::Io { path: path.to_path_buf(), reason: e };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let model: OvoSvm = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(io(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }
}

/// Per-pair normalized absolute linear weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightExplanation {
    pub classes: Vec<u8>,
    pub feature_names: Vec<String>,
    /// `(positive, negative, normalized |w|)` per pair.
    pub pairs: Vec<(u8, u8, Vec<f64>)>,
}

impl WeightExplanation {
    /// Upper-triangular class-by-class matrix for one feature; cells below
    /// the diagonal and on it are `None`.
    pub fn matrix(&self, feature: usize) -> Vec<Vec<Option<f64>>> {
        let k = self.classes.len();
        let mut m = vec![vec![None; k]; k];
        for (p, n, w) in &self.pairs {
            let a = self.classes.binary_search(p).expect("known class");
            let b = self.classes.binary_search(n).expect("known class");
            m[a.min(b)][a.max(b)] = Some(w[feature]);
        }
        m
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("feature\tclass_i\tclass_j\tweight\n");
        for (f, name) in self.feature_names.iter().enumerate() {
            for (p, n, w) in &self.pairs {
                writeln!(s, "{name}\t{p}\t{n}\t{}", w[f]).expect("string write");
            }
        }
        s
    }
}

pub fn explain_weights(model: &OvoSvm) -> Result<WeightExplanation, SvmError> {
    if model.params.kernel != Kernel::Linear {
        return Err(SvmError::NotLinear);
    }
    let pairs = model
        .pairs
        .iter()
        .map(|p| {
            let w = p.weights.as_ref().expect("linear pairs carry weights");
            let total: f64 = w.iter().map(|v| v.abs()).sum();
            let norm = if total > 0.0 { w.iter().map(|v| v.abs() / total).collect() } else { vec![0.0; w.len()] };
            (p.positive, p.negative, norm)
        })
        .collect();
    let d = model.support_vectors.first().map_or(0, |v| v.len());
    let feature_names = if model.feature_names.len() == d {
        model.feature_names.clone()
    } else {
        (0..d).map(|i| format!("f{i}")).collect()
    };
    Ok(WeightExplanation { classes: model.classes.clone(), feature_names, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Row-normalized confusion matrix over `classes` (rows are truth).
    pub confusion: Vec<Vec<f64>>,
    pub classes: Vec<u8>,
}

impl ClassificationReport {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Result<ClassificationReport, SvmError> {
        if truth.is_empty() || truth.len() != predicted.len() {
            return Err(SvmError::EmptyTest);
        }
        let mut classes: Vec<u8> = truth.iter().chain(predicted).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let k = classes.len();
        let pos = |c: u8| classes.binary_search(&c).expect("collected");
        let mut counts = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[pos(t)][pos(p)] += 1;
        }
        let correct: usize = (0..k).map(|i| counts[i][i]).sum();
        let per_class = (0..k)
            .map(|i| {
                let support: usize = counts[i].iter().sum();
                let predicted: usize = (0..k).map(|r| counts[r][i]).sum();
                let tp = counts[i][i] as f64;
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { class: classes[i], precision, recall, f1, support }
            })
            .collect();
        let confusion = counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter().map(|&c| if s > 0 { c as f64 / s as f64 } else { 0.0 }).collect()
            })
            .collect();
        Ok(ClassificationReport {
            per_class,
            accuracy: correct as f64 / truth.len() as f64,
            confusion,
            classes,
        })
    }

    /// Confusion matrix with off-diagonal entries negated.
    pub fn signed_confusion(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, &v)| if i == j { v } else { -v }).collect())
            .collect()
    }

    pub fn metrics(&self, class: u8) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }

    pub fn macro_avg(&self) -> (f64, f64, f64) {
        let rows: Vec<&ClassMetrics> = self.per_class.iter().filter(|m| m.support > 0).collect();
        let n = rows.len().max(1) as f64;
        (
            rows.iter().map(|m| m.precision).sum::<f64>() / n,
            rows.iter().map(|m| m.recall).sum::<f64>() / n,
            rows.iter().map(|m| m.f1).sum::<f64>() / n,
        )
    }

    pub fn weighted_avg(&self) -> (f64, f64, f64) {
        let total: usize = self.per_class.iter().map(|m| m.support).sum();
        let w = |f: fn(&ClassMetrics) -> f64| {
            self.per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total.max(1) as f64
        };
        (w(|m| m.precision), w(|m| m.recall), w(|m| m.f1))
    }

    /// Tab-separated table; `names` maps class ids to display names.
    pub fn to_tsv(&self, names: &dyn Fn(u8) -> String) -> String {
        let mut s = String::from("class\tname\tprecision\trecall\tf1\tsupport\n");
        for m in &self.per_class {
            writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}",
                m.class,
                names(m.class),
                m.precision,
                m.recall,
                m.f1,
                m.support
            )
            .expect("string write");
        }
        let total: usize = self.per_class.iter().map(|m| m.support).sum();
        let (mp, mr, mf) = self.macro_avg();
        let (wp, wr, wf) = self.weighted_avg();
        writeln!(s, "accuracy\t\t\t\t{:.4}\t{total}", self.accuracy).expect("string write");
        writeln!(s, "macro avg\t\t{mp:.4}\t{mr:.4}\t{mf:.4}\t{total}").expect("string write");
        writeln!(s, "weighted avg\t\t{wp:.4}\t{wr:.4}\t{wf:.4}\t{total}").expect("string write");
        s
    }

    /// Signed confusion grid as `truth\tpredicted\tvalue` rows.
    pub fn confusion_tsv(&self) -> String {
        let mut s = String::from("truth\tpredicted\tvalue\n");
        for (i, row) in self.signed_confusion().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(s, "{}\t{}\t{v:.6}", self.classes[i], self.classes[j]).expect("string write");
            }
        }
        s
    }
}

pub fn evaluate(model: &OvoSvm, x: &[Vec<f64>], labels: &[u8]) -> Result<ClassificationReport, SvmError> {
    if x.is_empty() {
        return Err(SvmError::EmptyTest);
    }
    ClassificationReport::from_predictions(labels, &model.predict_all(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub params: SvmHyperParams,
    pub val_accuracy: f64,
    pub converged: bool,
}

/// Trains every grid point on `train` and scores it on `val`. The best
/// point maximizes validation accuracy; ties prefer the linear kernel, then
/// the smallest C, then grid order.
pub fn grid_search(
    train: (&[Vec<f64>], &[u8]),
    val: (&[Vec<f64>], &[u8]),
    grid: &[SvmHyperParams],
    opts: &SolverOptions,
) -> Result<(SvmHyperParams, Vec<GridResult>), SvmError> {
    let mut results = Vec::with_capacity(grid.len());
    for hp in grid {
        let model = train_ovo(train.0, train.1, hp, opts)?;
        let report = evaluate(&model, val.0, val.1)?;
        results.push(GridResult { params: *hp, val_accuracy: report.accuracy, converged: model.converged() });
    }
    let best = results
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.val_accuracy
                .total_cmp(&a.val_accuracy)
                .then(a.params.kernel.rank().cmp(&b.params.kernel.rank()))
                .then(a.params.c.total_cmp(&b.params.c))
                .then(ia.cmp(ib))
        })
        .map(|(_, r)| r.params)
        .ok_or(SvmError::BadHyperParams)?;
    Ok((best, results))
}
