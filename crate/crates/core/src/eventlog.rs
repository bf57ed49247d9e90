//! Per-run event logs, the mid-price step function, and their file formats.
//!
//! A run is persisted as three tab-separated files sharing a stem:
//!
//! * `<stem>.events.tsv`: one row per agent action, columns
//!   `time agent_id class_id action side price size fills mid order_id`.
//!   `fills` lists the executions of a submitted order as
//!   `maker_order:maker_agent:price:size` joined by `;` (`-` when empty).
//!   For `CANCEL`/`EXPIRE` rows, `size` is the canceled remainder.
//! * `<stem>.book.tsv`: top-of-book changes, `time best_bid best_ask`.
//! * `<stem>.agents.tsv`: the roster, `agent_id class_id`.
//!
//! Each file starts with a `#lobsim-<kind> v1 ...` header line followed by a
//! column header row. Missing values are written as `NA`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{AgentId, BookSnapshot, OrderId, Price, Side};

pub const SCHEMA_VERSION: u32 = 1;
pub const EVENT_COLUMNS: [&str; 10] =
    ["time", "agent_id", "class_id", "action", "side", "price", "size", "fills", "mid", "order_id"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    SubmitLimit,
    SubmitMarket,
    Cancel,
    Expire,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::SubmitLimit => "SUBMIT_LIMIT",
            Action::SubmitMarket => "SUBMIT_MARKET",
            Action::Cancel => "CANCEL",
            Action::Expire => "EXPIRE",
        }
    }

    fn parse(s: &str) -> Option<Action> {
        Some(match s {
            "SUBMIT_LIMIT" => Action::SubmitLimit,
            "SUBMIT_MARKET" => Action::SubmitMarket,
            "CANCEL" => Action::Cancel,
            "EXPIRE" => Action::Expire,
            _ => return None,
        })
    }

    pub fn is_submission(self) -> bool {
        matches!(self, Action::SubmitLimit | Action::SubmitMarket)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillEntry {
    pub maker_order_id: OrderId,
    pub maker_agent_id: AgentId,
    pub price: Price,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub time: f64,
    pub agent_id: AgentId,
    pub class_id: u8,
    pub action: Action,
    pub side: Side,
    pub price: Option<Price>,
    pub size: u32,
    pub fills: Vec<FillEntry>,
    /// Mid in force when the action was taken.
    pub mid: Option<f64>,
    pub order_id: OrderId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub agent_id: AgentId,
    pub class_id: u8,
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub run_id: u32,
    pub seed: u64,
    /// Start of the burn-in (negative) and end of trading.
    pub start: f64,
    pub horizon: f64,
    pub agents: Vec<AgentInfo>,
    pub records: Vec<EventLogRecord>,
    pub snapshots: Vec<BookSnapshot>,
}

impl EventLog {
    pub fn mid_series(&self) -> MidSeries {
        MidSeries::from_snapshots(&self.snapshots)
    }

    /// Records at or after `t = 0`.
    pub fn trading_records(&self) -> impl Iterator<Item = &EventLogRecord> {
        self.records.iter().filter(|r| r.time >= 0.0)
    }

    /// Number of executions during trading (a matched pair counts once).
    pub fn trade_count(&self) -> usize {
        self.trading_records().map(|r| r.fills.len()).sum()
    }
}

/// Step function of the mid price, with only defined mids kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MidSeries {
    times: Vec<f64>,
    mids: Vec<f64>,
}

impl MidSeries {
    pub fn new() -> MidSeries {
        MidSeries::default()
    }

    pub fn from_snapshots(snapshots: &[BookSnapshot]) -> MidSeries {
        let mut s = MidSeries::new();
        for snap in snapshots {
            if let Some(m) = snap.mid() {
                s.push(snap.time, m);
            }
        }
        s
    }

    pub fn push(&mut self, time: f64, mid: f64) {
        if self.mids.last() == Some(&mid) {
            return;
        }
        if self.times.last() == Some(&time) {
            *self.mids.last_mut().expect("nonempty") = mid;
            return;
        }
        self.times.push(time);
        self.mids.push(mid);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    /// Last known mid at `t`, or `None` before the first quote.
    pub fn at(&self, t: f64) -> Option<f64> {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            None
        } else {
            Some(self.mids[idx - 1])
        }
    }

    /// Like [`MidSeries::at`], but flat-extrapolates the earliest mid backwards.
    pub fn at_or_earliest(&self, t: f64) -> Option<f64> {
        self.at(t).or_else(|| self.mids.first().copied())
    }

    /// Samples the last known mid at `from, from + resolution, ...` up to
    /// `to` inclusive. Samples before the first quote are omitted.
    pub fn sample(&self, from: f64, to: f64, resolution: f64) -> Vec<(f64, f64)> {
        assert!(resolution > 0.0, "resolution must be positive");
        let mut out = Vec::new();
        let steps = ((to - from) / resolution).floor() as i64;
        let mut idx = 0usize;
        for k in 0..=steps {
            let t = from + k as f64 * resolution;
            while idx < self.times.len() && self.times[idx] <= t {
                idx += 1;
            }
            if idx > 0 {
                out.push((t, self.mids[idx - 1]));
            }
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.mids.iter().copied())
    }
}

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogIoError + '_ {
    move |source| LogIoError::Io { path: path.to_path_buf(), source }
}

fn opt_price(p: Option<Price>) -> String {
    p.map_or_else(|| "NA".to_string(), |p| p.to_string())
}

fn side_str(s: Side) -> &'static str {
    match s {
        Side::Bid => "BID",
        Side::Ask => "ASK",
    }
}

pub fn stem_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".events.tsv"), with(".book.tsv"), with(".agents.tsv"))
}

/// Writes a log as three files next to `stem`.
pub fn write_log(log: &EventLog, stem: &Path, provenance: &str) -> Result<(), LogIoError> {
    let (events, book, agents) = stem_paths(stem);
    let header = format!(
        "#lobsim-eventlog v{SCHEMA_VERSION} run={} seed={} start={} horizon={} manifest={provenance}",
        log.run_id, log.seed, log.start, log.horizon
    );

    let f = fs::File::create(&events).map_err(io_err(&events))?;
    let mut w = BufWriter::new(f);
    let mut line = String::new();
    writeln!(w, "{header}").map_err(io_err(&events))?;
    writeln!(w, "{}", EVENT_COLUMNS.join("\t")).map_err(io_err(&events))?;
    for r in &log.records {
        line.clear();
        let _ = write!(
            line,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
            r.time,
            r.agent_id,
            r.class_id,
            r.action.as_str(),
            side_str(r.side),
            opt_price(r.price),
            r.size
        );
        if r.fills.is_empty() {
            line.push('-');
        }
        for (i, f) in r.fills.iter().enumerate() {
            if i > 0 {
                line.push(';');
            }
            let _ = write!(line, "{}:{}:{}:{}", f.maker_order_id, f.maker_agent_id, f.price, f.size);
        }
        match r.mid {
            Some(m) => {
                let _ = write!(line, "\t{m}");
            }
            None => line.push_str("\tNA"),
        }
        let _ = write!(line, "\t{}", r.order_id);
        writeln!(w, "{line}").map_err(io_err(&events))?;
    }
    w.flush().map_err(io_err(&events))?;

    let f = fs::File::create(&book).map_err(io_err(&book))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "#lobsim-book v{SCHEMA_VERSION} run={} manifest={provenance}", log.run_id).map_err(io_err(&book))?;
    writeln!(w, "time\tbest_bid\tbest_ask").map_err(io_err(&book))?;
    for s in &log.snapshots {
        writeln!(w, "{}\t{}\t{}", s.time, opt_price(s.best_bid), opt_price(s.best_ask)).map_err(io_err(&book))?;
    }
    w.flush().map_err(io_err(&book))?;

    let f = fs::File::create(&agents).map_err(io_err(&agents))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "#lobsim-agents v{SCHEMA_VERSION} run={} manifest={provenance}", log.run_id).map_err(io_err(&agents))?;
    writeln!(w, "agent_id\tclass_id").map_err(io_err(&agents))?;
    for a in &log.agents {
        writeln!(w, "{}\t{}", a.agent_id, a.class_id).map_err(io_err(&agents))?;
    }
    w.flush().map_err(io_err(&agents))
}

struct LineReader {
    path: PathBuf,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<fs::File>>>,
}

impl LineReader {
    fn open(path: &Path) -> Result<(LineReader, String), LogIoError> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        let mut r = LineReader { path: path.to_path_buf(), lines: BufReader::new(f).lines().enumerate() };
        let header = r.next_line()?.ok_or_else(|| r.err(1, "empty file"))?;
        if !header.1.starts_with("#lobsim-") {
            return Err(r.err(1, "missing lobsim header"));
        }
        let version = header.1.split_whitespace().nth(1).unwrap_or("");
        if version != format!("v{SCHEMA_VERSION}") {
            return Err(r.err(1, &format!("unsupported schema version {version:?}")));
        }
        r.next_line()?.ok_or_else(|| r.err(2, "missing column header"))?;
        Ok((r, header.1))
    }

    fn next_line(&mut self) -> Result<Option<(usize, String)>, LogIoError> {
        match self.lines.next() {
            None => Ok(None),
            Some((i, Ok(l))) => Ok(Some((i + 1, l))),
            Some((_, Err(e))) => Err(LogIoError::Io { path: self.path.clone(), source: e }),
        }
    }

    fn err(&self, line: usize, reason: &str) -> LogIoError {
        LogIoError::Parse { path: self.path.clone(), line, reason: reason.to_string() }
    }
}

fn parse_field<T: std::str::FromStr>(r: &LineReader, line: usize, s: Option<&str>, what: &str) -> Result<T, LogIoError> {
    s.and_then(|s| s.parse().ok()).ok_or_else(|| r.err(line, &format!("bad {what}")))
}

fn parse_price(r: &LineReader, line: usize, s: Option<&str>) -> Result<Option<Price>, LogIoError> {
    match s {
        Some("NA") => Ok(None),
        other => Ok(Some(Price::from_currency(parse_field::<f64>(r, line, other, "price")?))),
    }
}

fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    header.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

/// Reads a log written by [`write_log`].
pub fn read_log(stem: &Path) -> Result<EventLog, LogIoError> {
    let (events, book, agents_path) = stem_paths(stem);

    let (mut r, header) = LineReader::open(&events)?;
    let run_id = parse_field(&r, 1, header_value(&header, "run"), "run id")?;
    let seed = parse_field(&r, 1, header_value(&header, "seed"), "seed")?;
    let start = parse_field(&r, 1, header_value(&header, "start"), "start")?;
    let horizon = parse_field(&r, 1, header_value(&header, "horizon"), "horizon")?;
    let mut records = Vec::new();
    while let Some((ln, line)) = r.next_line()? {
        let mut cols = line.split('\t');
        let time = parse_field(&r, ln, cols.next(), "time")?;
        let agent_id = parse_field(&r, ln, cols.next(), "agent_id")?;
        let class_id = parse_field(&r, ln, cols.next(), "class_id")?;
        let action = cols.next().and_then(Action::parse).ok_or_else(|| r.err(ln, "bad action"))?;
        let side = match cols.next() {
            Some("BID") => Side::Bid,
            Some("ASK") => Side::Ask,
            _ => return Err(r.err(ln, "bad side")),
        };
        let price = parse_price(&r, ln, cols.next())?;
        let size = parse_field(&r, ln, cols.next(), "size")?;
        let mut fills = Vec::new();
        match cols.next() {
            Some("-") => {}
            Some(list) => {
                for part in list.split(';') {
                    let mut it = part.split(':');
                    fills.push(FillEntry {
                        maker_order_id: parse_field(&r, ln, it.next(), "fill maker order")?,
                        maker_agent_id: parse_field(&r, ln, it.next(), "fill maker agent")?,
                        price: parse_price(&r, ln, it.next())?.ok_or_else(|| r.err(ln, "fill without price"))?,
                        size: parse_field(&r, ln, it.next(), "fill size")?,
                    });
                }
            }
            None => return Err(r.err(ln, "missing fills")),
        }
        let mid = match cols.next() {
            Some("NA") => None,
            other => Some(parse_field(&r, ln, other, "mid")?),
        };
        let order_id = parse_field(&r, ln, cols.next(), "order_id")?;
        records.push(EventLogRecord { time, agent_id, class_id, action, side, price, size, fills, mid, order_id });
    }

    let (mut r, _) = LineReader::open(&book)?;
    let mut snapshots = Vec::new();
    while let Some((ln, line)) = r.next_line()? {
        let mut cols = line.split('\t');
        snapshots.push(BookSnapshot {
            time: parse_field(&r, ln, cols.next(), "time")?,
            best_bid: parse_price(&r, ln, cols.next())?,
            best_ask: parse_price(&r, ln, cols.next())?,
        });
    }

    let (mut r, _) = LineReader::open(&agents_path)?;
    let mut agents = Vec::new();
    while let Some((ln, line)) = r.next_line()? {
        let mut cols = line.split('\t');
        agents.push(AgentInfo {
            agent_id: parse_field(&r, ln, cols.next(), "agent_id")?,
            class_id: parse_field(&r, ln, cols.next(), "class_id")?,
        });
    }

    Ok(EventLog { run_id, seed, start, horizon, agents, records, snapshots })
}
