//! Stylized facts of simulated mid-price returns and activity rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::eventlog::{EventLog, MidSeries};
use crate::kernel::{UNITS_PER_HOUR, UNITS_PER_SECOND};

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("need at least {need} returns, have {have}")]
    TooShort { need: usize, have: usize },
    #[error("return series has zero variance")]
    Degenerate,
}

/// Mid-price differences sampled on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnSeries {
    /// Sampling step in seconds.
    pub resolution: f64,
    pub run_id: u32,
    pub returns: Vec<f64>,
}

/// Differences of the last known mid over `[from, to]` every `resolution`
/// seconds. Steps whose start precedes the first quote are dropped.
pub fn returns(mids: &MidSeries, from: f64, to: f64, resolution_s: f64, run_id: u32) -> ReturnSeries {
    let step = resolution_s * UNITS_PER_SECOND;
    let samples = mids.sample(from, to, step);
    let mut out = Vec::with_capacity(samples.len());
    for w in samples.windows(2) {
        // adjacent grid points only; a gap means a missing sample
        if (w[1].0 - w[0].0 - step).abs() < 1e-9 * step.max(1.0) {
            out.push(w[1].1 - w[0].1);
        }
    }
    ReturnSeries { resolution: resolution_s, run_id, returns: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// Adjusted Fisher-Pearson excess kurtosis.
    pub excess_kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Result<Moments, DiagError> {
    let n = x.len();
    if n < 4 {
        return Err(DiagError::TooShort { need: 4, have: n });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(DiagError::Degenerate);
    }
    let g2 = m4 / (m2 * m2) - 3.0;
    let excess_kurtosis = ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
    Ok(Moments { n, mean, std: (m2 * nf / (nf - 1.0)).sqrt(), excess_kurtosis })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Expected count per bin under the fitted Gaussian.
    pub fit: Vec<f64>,
    pub moments: Moments,
}

pub const HIST_BINS: usize = 100;
pub const HIST_RANGE_STD: f64 = 6.0;

/// Histogram over `mean +/- 6 std` with `bins` bins; values beyond the range
/// are counted in the edge bins.
pub fn return_histogram(x: &[f64], bins: usize) -> Result<Histogram, DiagError> {
    if x.len() < 100 {
        return Err(DiagError::TooShort { need: 100, have: x.len() });
    }
    let m = moments(x)?;
    let lo = m.mean - HIST_RANGE_STD * m.std;
    let width = 2.0 * HIST_RANGE_STD * m.std / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for v in x {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    let norm = 1.0 / (m.std * (2.0 * std::f64::consts::PI).sqrt());
    let fit = (0..bins)
        .map(|i| {
            let c = lo + (i as f64 + 0.5) * width;
            let z = (c - m.mean) / m.std;
            x.len() as f64 * width * norm * (-0.5 * z * z).exp()
        })
        .collect();
    Ok(Histogram { edges, counts, fit, moments: m })
}

/// Sample autocorrelation with the biased (1/n) normalization. A constant
/// series has ACF 1 at lag 0 and 0 elsewhere.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagError> {
    let n = x.len();
    if n <= max_lag {
        return Err(DiagError::TooShort { need: max_lag + 1, have: n });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for lag in 1..=max_lag {
        if c0 == 0.0 {
            out.push(0.0);
            continue;
        }
        let s: f64 = c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum();
        out.push(s / c0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivitySummary {
    pub hours: f64,
    pub trades: usize,
    pub trades_per_hour: f64,
    /// Order submissions per hour by class id.
    pub orders_per_hour: BTreeMap<u8, f64>,
}

/// Trading-period activity; a matched pair counts as one trade.
pub fn activity_summary(log: &EventLog) -> ActivitySummary {
    let hours = log.horizon.max(0.0) / UNITS_PER_HOUR;
    let trades = log.trade_count();
    let mut orders: BTreeMap<u8, usize> = BTreeMap::new();
    for r in log.trading_records().filter(|r| r.action.is_submission()) {
        *orders.entry(r.class_id).or_insert(0) += 1;
    }
    let per_hour = |c: usize| if hours > 0.0 { c as f64 / hours } else { 0.0 };
    ActivitySummary {
        hours,
        trades,
        trades_per_hour: per_hour(trades),
        orders_per_hour: orders.into_iter().map(|(k, v)| (k, per_hour(v))).collect(),
    }
}

pub const DEFAULT_MAX_LAG: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StylizedReport {
    pub second: Histogram,
    pub minute: Histogram,
    pub acf_returns: Vec<f64>,
    pub acf_abs_returns: Vec<f64>,
    pub trades_per_hour: f64,
}

impl StylizedReport {
    pub fn kurtosis_1s(&self) -> f64 {
        self.second.moments.excess_kurtosis
    }

    pub fn kurtosis_1min(&self) -> f64 {
        self.minute.moments.excess_kurtosis
    }

    /// Mean of `acf[1..=lags]`.
    pub fn mean_acf(acf: &[f64], lags: usize) -> f64 {
        acf[1..=lags].iter().sum::<f64>() / lags as f64
    }

    pub fn histogram_tsv(h: &Histogram) -> String {
        let mut s = String::from("bin_lo\tbin_hi\tcount\tgaussian\n");
        for i in 0..h.counts.len() {
            writeln!(s, "{}\t{}\t{}\t{}", h.edges[i], h.edges[i + 1], h.counts[i], h.fit[i]).expect("string write");
        }
        s
    }

    pub fn acf_tsv(&self) -> String {
        let mut s = String::from("lag\tacf_returns\tacf_abs_returns\n");
        for (lag, (a, b)) in self.acf_returns.iter().zip(&self.acf_abs_returns).enumerate() {
            writeln!(s, "{lag}\t{a}\t{b}").expect("string write");
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("statistic\tvalue\n");
        let mut row = |k: &str, v: f64| writeln!(s, "{k}\t{v}").expect("string write");
        row("excess_kurtosis_1s", self.kurtosis_1s());
        row("excess_kurtosis_1min", self.kurtosis_1min());
        row("mean_1s", self.second.moments.mean);
        row("std_1s", self.second.moments.std);
        row("mean_1min", self.minute.moments.mean);
        row("std_1min", self.minute.moments.std);
        row("acf_lag1", self.acf_returns.get(1).copied().unwrap_or(f64::NAN));
        row("mean_acf_1_50", Self::mean_acf(&self.acf_returns, 50.min(self.acf_returns.len() - 1)));
        row("mean_abs_acf_1_50", Self::mean_acf(&self.acf_abs_returns, 50.min(self.acf_abs_returns.len() - 1)));
        row("trades_per_hour", self.trades_per_hour);
        s
    }
}

/// Stylized facts over a batch: returns are pooled across runs for the
/// distributions, and ACFs are averaged across runs.
pub fn stylized_report(logs: &[EventLog], max_lag: usize) -> Result<StylizedReport, DiagError> {
    let mut sec = Vec::new();
    let mut min = Vec::new();
    let mut acf_r = vec![0.0; max_lag + 1];
    let mut acf_a = vec![0.0; max_lag + 1];
    let mut trades = 0.0;
    for log in logs {
        let mids = log.mid_series();
        let r1 = returns(&mids, 0.0, log.horizon, 1.0, log.run_id);
        let r60 = returns(&mids, 0.0, log.horizon, 60.0, log.run_id);
        let abs: Vec<f64> = r1.returns.iter().map(|v| v.abs()).collect();
        for (acc, v) in acf_r.iter_mut().zip(acf(&r1.returns, max_lag)?) {
            *acc += v / logs.len() as f64;
        }
        for (acc, v) in acf_a.iter_mut().zip(acf(&abs, max_lag)?) {
            *acc += v / logs.len() as f64;
        }
        sec.extend(r1.returns);
        min.extend(r60.returns);
        trades += activity_summary(log).trades_per_hour / logs.len() as f64;
    }
    Ok(StylizedReport {
        second: return_histogram(&sec, HIST_BINS)?,
        minute: return_histogram(&min, HIST_BINS)?,
        acf_returns: acf_r,
        acf_abs_returns: acf_a,
        trades_per_hour: trades,
    })
}
