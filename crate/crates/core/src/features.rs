//! Per-sample behavioural features, noise merging, splits and scaling.
//!
//! A sample is one agent in one run, optionally merged with the activity of
//! one or two noise traders. Only activity at `t >= 0` is used.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{Action, EventLog, EventLogRecord, MidSeries};
use crate::kernel::{RngStream, FULL_HORIZON};
use crate::matching::{AgentId, OrderId, Side};
use crate::scenario::NOISE_CLASS;

pub const FEATURE_NAMES: [&str; 18] = [
    "buy_ratio",
    "cancel_ratio",
    "n_trades",
    "market_ratio",
    "creation_time_mean",
    "creation_time_std",
    "order_size_mean",
    "order_size_std",
    "total_volume",
    "trend_short",
    "dtrend_short",
    "trend_med",
    "dtrend_med",
    "trend_long",
    "dtrend_long",
    "fund_profit",
    "fund_profit_long",
    "fund_profit_weighted",
];

/// Size of the basic feature view, a prefix of [`FEATURE_NAMES`].
pub const BASIC_COUNT: usize = 9;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("not enough noise traders: need {need}, have {have}")]
    InsufficientNoise { need: usize, have: usize },
    #[error("class {class} has {count} samples; at least 3 are needed to split")]
    ClassTooSmall { class: u8, count: usize },
    #[error("split fractions must be non-negative and sum to 1")]
    BadFractions,
    #[error("feature count must be 9 or 18, got {0}")]
    BadFeatureCount(usize),
    #[error("unknown merge mode `{0}` (expected none, half or twothirds)")]
    BadMergeMode(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

/// Time windows used by the trend and profit features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindows {
    /// Look-backs for the short, medium and long trends.
    pub trend: [f64; 3],
    /// Orders within this long after a fundamental event are eligible.
    pub event_window: f64,
    /// Look-forwards for the plain and long profit features.
    pub profit: [f64; 2],
}

impl FeatureWindows {
    pub fn canonical() -> FeatureWindows {
        FeatureWindows { trend: [10_000.0, 20_000.0, 40_000.0], event_window: 20_000.0, profit: [80_000.0, 160_000.0] }
    }

    /// Event windows shrink with the run; trend look-backs do not, since
    /// agent strategy horizons are not rescaled either.
    pub fn for_horizon(horizon: f64) -> FeatureWindows {
        let f = horizon / FULL_HORIZON;
        let c = FeatureWindows::canonical();
        FeatureWindows { event_window: c.event_window * f, profit: [c.profit[0] * f, c.profit[1] * f], ..c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub run_id: u32,
    pub agent_id: AgentId,
}

/// The activity of one sample: its own records plus the fills in which one
/// of its resting orders was the maker.
#[derive(Debug, Clone, Default)]
pub struct Activity<'a> {
    pub records: Vec<&'a EventLogRecord>,
    /// `(time, size)` of maker-side fills.
    pub maker_fills: Vec<(f64, u32)>,
}

impl<'a> Activity<'a> {
    pub fn from_records(records: Vec<&'a EventLogRecord>) -> Activity<'a> {
        Activity { records, maker_fills: Vec::new() }
    }
}

/// Trading-period activity of every agent in a log.
#[derive(Debug, Clone)]
pub struct ActivityIndex {
    records: Vec<Vec<usize>>,
    maker_fills: Vec<Vec<(f64, u32)>>,
}

impl ActivityIndex {
    pub fn new(log: &EventLog) -> ActivityIndex {
        let n = log.agents.len();
        let mut records = vec![Vec::new(); n];
        let mut maker_fills = vec![Vec::new(); n];
        for (i, r) in log.records.iter().enumerate() {
            if r.time < 0.0 {
                continue;
            }
            if let Some(list) = records.get_mut(r.agent_id as usize) {
                list.push(i);
            }
            for f in &r.fills {
                if let Some(list) = maker_fills.get_mut(f.maker_agent_id as usize) {
                    list.push((r.time, f.size));
                }
            }
        }
        ActivityIndex { records, maker_fills }
    }

    /// Time-ordered union of the given agents' activity.
    pub fn activity<'a>(&self, log: &'a EventLog, agents: &[AgentId]) -> Activity<'a> {
        let mut idx: Vec<usize> = agents.iter().flat_map(|&a| self.records[a as usize].iter().copied()).collect();
        let mut fills: Vec<(f64, u32)> =
            agents.iter().flat_map(|&a| self.maker_fills[a as usize].iter().copied()).collect();
        if agents.len() > 1 {
            idx.sort_unstable();
            fills.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Activity { records: idx.into_iter().map(|i| &log.records[i]).collect(), maker_fills: fills }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn submissions<'a>(act: &'a Activity<'_>) -> impl Iterator<Item = &'a EventLogRecord> + 'a {
    act.records.iter().copied().filter(|r| r.action.is_submission())
}

/// The nine basic features. The flag is set when the sample submitted no
/// orders, in which case every value is zero.
pub fn basic_features(act: &Activity<'_>) -> ([f64; BASIC_COUNT], bool) {
    let subs: Vec<&EventLogRecord> = submissions(act).collect();
    if subs.is_empty() {
        return ([0.0; BASIC_COUNT], true);
    }
    let n = subs.len() as f64;
    let submitted: HashSet<OrderId> = subs.iter().map(|r| r.order_id).collect();
    let cancelled: HashSet<OrderId> = act
        .records
        .iter()
        .filter(|r| matches!(r.action, Action::Cancel | Action::Expire) && submitted.contains(&r.order_id))
        .map(|r| r.order_id)
        .collect();
    let buys = subs.iter().filter(|r| r.side == Side::Bid).count() as f64;
    let markets = subs.iter().filter(|r| r.action == Action::SubmitMarket).count() as f64;
    let taker_fills: usize = subs.iter().map(|r| r.fills.len()).sum();
    let taker_volume: u64 = subs.iter().flat_map(|r| r.fills.iter()).map(|f| f.size as u64).sum();
    let maker_volume: u64 = act.maker_fills.iter().map(|&(_, s)| s as u64).sum();
    let gaps: Vec<f64> = subs.windows(2).map(|w| w[1].time - w[0].time).collect();
    let sizes: Vec<f64> = subs.iter().map(|r| r.size as f64).collect();
    let (gap_mean, gap_std) = mean_std(&gaps);
    let (size_mean, size_std) = mean_std(&sizes);
    (
        [
            buys / n,
            cancelled.len() as f64 / n,
            (taker_fills + act.maker_fills.len()) as f64,
            markets / n,
            gap_mean,
            gap_std,
            size_mean,
            size_std,
            (taker_volume + maker_volume) as f64,
        ],
        false,
    )
}

/// Absolute and directed mid changes over the three trend look-backs, in
/// the order `trend_short, dtrend_short, trend_med, ...`.
pub fn trend_features(act: &Activity<'_>, mids: &MidSeries, windows: &FeatureWindows) -> [f64; 6] {
    let start = mids.first_time().unwrap_or(f64::INFINITY);
    let mut out = [0.0; 6];
    for (k, &h) in windows.trend.iter().enumerate() {
        let (mut abs, mut dir, mut n) = (0.0, 0.0, 0usize);
        for r in submissions(act) {
            let back = r.time - h;
            if back < start {
                continue;
            }
            let (Some(now), Some(then)) = (r.mid, mids.at(back)) else { continue };
            let d = now - then;
            abs += d.abs();
            dir += d * r.side.direction();
            n += 1;
        }
        if n > 0 {
            out[2 * k] = abs / n as f64;
            out[2 * k + 1] = dir / n as f64;
        }
    }
    out
}

/// Directional returns of orders sent shortly after a fundamental event.
/// Only the event times are used, never the fundamental values.
pub fn profit_features(
    act: &Activity<'_>,
    mids: &MidSeries,
    event_times: &[f64],
    horizon: f64,
    windows: &FeatureWindows,
) -> [f64; 3] {
    let eligible = |t: f64| event_times.iter().any(|&e| t > e && t <= e + windows.event_window);
    let mut out = [0.0; 3];
    let (mut w_sum, mut w_profit) = (0.0, 0.0);
    for (k, &fwd) in windows.profit.iter().enumerate() {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in submissions(act) {
            if !eligible(r.time) || r.time + fwd > horizon {
                continue;
            }
            let (Some(now), Some(later)) = (r.mid, mids.at(r.time + fwd)) else { continue };
            let profit = (later - now) / now * r.side.direction();
            sum += profit;
            n += 1;
            if k == 0 {
                w_sum += r.size as f64;
                w_profit += r.size as f64 * profit;
            }
        }
        if n > 0 {
            out[k] = sum / n as f64;
        }
    }
    if w_sum > 0.0 {
        out[2] = w_profit / w_sum;
    }
    out
}

/// Full 18-feature vector for one activity stream.
pub fn sample_features(
    act: &Activity<'_>,
    mids: &MidSeries,
    event_times: &[f64],
    horizon: f64,
    windows: &FeatureWindows,
) -> ([f64; 18], bool) {
    let (basic, empty) = basic_features(act);
    let trend = trend_features(act, mids, windows);
    let profit = profit_features(act, mids, event_times, horizon, windows);
    let mut out = [0.0; 18];
    out[..9].copy_from_slice(&basic);
    out[9..15].copy_from_slice(&trend);
    out[15..].copy_from_slice(&profit);
    (out, empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    None,
    Half,
    TwoThirds,
}

impl MergeMode {
    pub fn noise_per_sample(self) -> usize {
        match self {
            MergeMode::None => 0,
            MergeMode::Half => 1,
            MergeMode::TwoThirds => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::None => "none",
            MergeMode::Half => "half",
            MergeMode::TwoThirds => "twothirds",
        }
    }
}

impl FromStr for MergeMode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<MergeMode, FeatureError> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(MergeMode::None),
            "half" | "50" => Ok(MergeMode::Half),
            "twothirds" | "two_thirds" | "66" => Ok(MergeMode::TwoThirds),
            _ => Err(FeatureError::BadMergeMode(s.to_string())),
        }
    }
}

/// Which noise traders are folded into which agent. Built once per
/// experiment and applied identically to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeMap {
    pub mode: MergeMode,
    /// `(agent, label, noise partners)`, one entry per sample, by agent id.
    pub samples: Vec<(AgentId, u8, Vec<AgentId>)>,
}

impl MergeMap {
    /// `agents` are `(agent_id, class_id)` pairs.
    pub fn build(agents: &[(AgentId, u8)], mode: MergeMode, seed: u64) -> Result<MergeMap, FeatureError> {
        let noise: Vec<AgentId> = agents.iter().filter(|a| a.1 == NOISE_CLASS).map(|a| a.0).collect();
        let others: Vec<(AgentId, u8)> = agents.iter().copied().filter(|a| a.1 != NOISE_CLASS).collect();
        let per = mode.noise_per_sample();
        let need = per * others.len();
        if need > noise.len() {
            return Err(FeatureError::InsufficientNoise { need, have: noise.len() });
        }
        let mut pool = noise.clone();
        let mut rng = RngStream::new(seed, 0x6d65_7267);
        for i in (1..pool.len()).rev() {
            let j = rng.index(i + 1);
            pool.swap(i, j);
        }
        let mut samples: Vec<(AgentId, u8, Vec<AgentId>)> = others
            .iter()
            .enumerate()
            .map(|(k, &(a, c))| (a, c, pool[k * per..(k + 1) * per].to_vec()))
            .collect();
        if mode != MergeMode::TwoThirds {
            let used: HashSet<AgentId> = pool[..need].iter().copied().collect();
            samples.extend(noise.iter().filter(|n| !used.contains(n)).map(|&n| (n, NOISE_CLASS, Vec::new())));
        }
        samples.sort_by_key(|s| s.0);
        Ok(MergeMap { mode, samples })
    }

    pub fn labels(&self) -> Vec<u8> {
        let mut l: Vec<u8> = self.samples.iter().map(|s| s.1).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// Labeled feature table. `x` is row-major with `names.len()` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub ids: Vec<SampleId>,
    pub labels: Vec<u8>,
    pub x: Vec<Vec<f64>>,
    /// Samples without any submitted order.
    pub flagged: Vec<SampleId>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Keeps the first `n` features (9 or 18).
    pub fn view(&self, n: usize) -> Result<Dataset, FeatureError> {
        if n != BASIC_COUNT && n != FEATURE_NAMES.len() {
            return Err(FeatureError::BadFeatureCount(n));
        }
        if n > self.dim() {
            return Err(FeatureError::BadFeatureCount(n));
        }
        Ok(Dataset {
            names: self.names[..n].to_vec(),
            x: self.x.iter().map(|row| row[..n].to_vec()).collect(),
            ..self.clone()
        })
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            flagged: Vec::new(),
        }
    }

    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut m = BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), FeatureError> {
        write_file(path, &self.to_tsv())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        if !self.flagged.is_empty() {
            s.push_str("#flagged");
            for id in &self.flagged {
                write!(s, "\t{}:{}", id.run_id, id.agent_id).expect("string write");
            }
            s.push('\n');
        }
        s.push_str("run_id\tagent_id\tlabel");
        for n in &self.names {
            s.push('\t');
            s.push_str(n);
        }
        s.push('\n');
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.x) {
            write!(s, "{}\t{}\t{}", id.run_id, id.agent_id, label).expect("string write");
            for v in row {
                write!(s, "\t{v}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn read_tsv(path: &Path) -> Result<Dataset, FeatureError> {
        let text = read_file(path)?;
        let bad = |line: usize, reason: String| FeatureError::Parse { path: path.to_path_buf(), line, reason };
        let mut flagged = Vec::new();
        for (i, l) in text.lines().enumerate().take_while(|(_, l)| l.starts_with('#')) {
            let Some(rest) = l.strip_prefix("#flagged\t") else { continue };
            for item in rest.split('\t') {
                let id = item
                    .split_once(':')
                    .and_then(|(r, a)| Some(SampleId { run_id: r.parse().ok()?, agent_id: a.parse().ok()? }))
                    .ok_or_else(|| bad(i + 1, format!("bad flagged sample `{item}`")))?;
                flagged.push(id);
            }
        }
        // other leading comment lines carry provenance
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 4 || cols[..3] != ["run_id", "agent_id", "label"] {
            return Err(bad(1, "expected run_id, agent_id, label and feature columns".into()));
        }
        let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let mut ds = Dataset { names, ids: Vec::new(), labels: Vec::new(), x: Vec::new(), flagged };
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(bad(i + 1, format!("expected {} columns, found {}", cols.len(), f.len())));
            }
            let int = |s: &str| s.parse::<u32>().map_err(|e| bad(i + 1, e.to_string()));
            ds.ids.push(SampleId { run_id: int(f[0])?, agent_id: int(f[1])? });
            ds.labels.push(u8::try_from(int(f[2])?).map_err(|e| bad(i + 1, e.to_string()))?);
            let row = f[3..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string())))
                .collect::<Result<Vec<f64>, _>>()?;
            ds.x.push(row);
        }
        Ok(ds)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), FeatureError> {
    let io = |source| FeatureError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

fn read_file(path: &Path) -> Result<String, FeatureError> {
    std::fs::read_to_string(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })
}

/// Features for every sample of every log under one merge map.
pub fn build_dataset(logs: &[EventLog], map: &MergeMap, event_times: &[f64], windows: &FeatureWindows) -> Dataset {
    let rows: Vec<(SampleId, u8, [f64; 18], bool)> = logs
        .par_iter()
        .flat_map_iter(|log| {
            let index = ActivityIndex::new(log);
            let mids = log.mid_series();
            map.samples
                .iter()
                .map(|(agent, label, partners)| {
                    let mut members = vec![*agent];
                    members.extend(partners);
                    let act = index.activity(log, &members);
                    let (v, empty) = sample_features(&act, &mids, event_times, log.horizon, windows);
                    (SampleId { run_id: log.run_id, agent_id: *agent }, *label, v, empty)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut ds = Dataset {
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        ids: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        x: Vec::with_capacity(rows.len()),
        flagged: Vec::new(),
    };
    for (id, label, v, empty) in rows {
        if empty {
            ds.flagged.push(id);
        }
        ds.ids.push(id);
        ds.labels.push(label);
        ds.x.push(v.to_vec());
    }
    ds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Row indices of each part.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn part_of(&self, n: usize) -> Vec<Option<Part>> {
        let mut out = vec![None; n];
        for (rows, part) in [(&self.train, Part::Train), (&self.val, Part::Val), (&self.test, Part::Test)] {
            for &i in rows {
                out[i] = Some(part);
            }
        }
        out
    }

    /// Sidecar file listing each sample's part.
    pub fn write_tsv(&self, ds: &Dataset, path: &Path) -> Result<(), FeatureError> {
        write_file(path, &self.to_tsv(ds))
    }

    pub fn to_tsv(&self, ds: &Dataset) -> String {
        let mut s = String::from("run_id\tagent_id\tsplit\n");
        for (id, part) in ds.ids.iter().zip(self.part_of(ds.len())) {
            let p = part.map_or("none", Part::as_str);
            writeln!(s, "{}\t{}\t{p}", id.run_id, id.agent_id).expect("string write");
        }
        s
    }
}

/// Stratified split. Per class of size `n`, `round(n * train)` rows go to
/// training, `round(n * val)` to validation and the rest to test.
pub fn split_dataset(labels: &[u8], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, FeatureError> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(FeatureError::BadFractions);
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut split = DatasetSplit::default();
    for (&class, rows) in &by_class {
        if rows.len() < 3 {
            return Err(FeatureError::ClassTooSmall { class, count: rows.len() });
        }
        let mut rows = rows.clone();
        let mut rng = RngStream::new(seed, 0x7370_6c00 + class as u64);
        for i in (1..rows.len()).rev() {
            let j = rng.index(i + 1);
            rows.swap(i, j);
        }
        let n = rows.len() as f64;
        let n_train = ((n * ft).round() as usize).min(rows.len());
        let n_val = ((n * fv).round() as usize).min(rows.len() - n_train);
        split.train.extend(&rows[..n_train]);
        split.val.extend(&rows[n_train..n_train + n_val]);
        split.test.extend(&rows[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Per-feature z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// `None` for constant features, which are only centered.
    pub std: Vec<Option<f64>>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Scaler {
        assert!(!rows.is_empty(), "cannot fit a scaler on no rows");
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                (s > 1e-12 * m.abs().max(1.0)).then_some(s)
            })
            .collect();
        Scaler { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s.unwrap_or(1.0)).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((z, m), s)| z * s.unwrap_or(1.0) + m).collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Fits on `train` and returns the scaled train set and scaled `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> (Dataset, Vec<Dataset>, Scaler) {
    let scaler = Scaler::fit(&train.x);
    let apply = |d: &Dataset| Dataset { x: scaler.transform_all(&d.x), ..d.clone() };
    let t = apply(train);
    let o = others.iter().map(|d| apply(d)).collect();
    (t, o, scaler)
}
