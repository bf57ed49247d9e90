//! Scenario definitions, the fundamental price schedule, and the simulation
//! loop that wires agents, scheduler and book together.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    Agent, MarketMakerParams, MarketTakerParams, NoiseParams, OpenOrder, ParamError, Strategy, TrendParams, Venue,
};
use crate::eventlog::{Action, AgentInfo, EventLog, EventLogRecord, FillEntry, MidSeries};
use crate::kernel::{mix_seed, ActionTag, EventKind, RngStream, Scheduler, FULL_HORIZON};
use crate::matching::{AgentId, BookSnapshot, CancelOutcome, Execution, Order, OrderBook, OrderId, Price, Side};

/// Class id 0 is reserved for the book-seeding pseudo agent.
pub const SEED_CLASS: u8 = 0;
pub const NOISE_CLASS: u8 = 15;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("time {t} is outside the schedule [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },
}

/// Piecewise-constant fundamental price. Values jump at each breakpoint, so
/// a breakpoint belongs to the interval that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalSchedule {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl FundamentalSchedule {
    pub fn canonical() -> FundamentalSchedule {
        FundamentalSchedule {
            breakpoints: vec![180_000.0, 360_000.0, 540_000.0],
            values: vec![100.0, 70.0, 100.0, 70.0],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(ConfigError::Invalid("fundamental needs one more value than breakpoints".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid("fundamental breakpoints must increase".into()));
        }
        Ok(())
    }

    /// Value at `t` without range checks.
    pub fn value(&self, t: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= t)]
    }

    /// Value at `t`, rejecting times outside `[0, horizon]`.
    pub fn at(&self, t: f64, horizon: f64) -> Result<f64, ConfigError> {
        if !(0.0..=horizon).contains(&t) {
            return Err(ConfigError::OutsideHorizon { t, horizon });
        }
        Ok(self.value(t))
    }

    pub fn scaled(&self, factor: f64) -> FundamentalSchedule {
        FundamentalSchedule {
            breakpoints: self.breakpoints.iter().map(|b| b * factor).collect(),
            values: self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub class_id: u8,
    pub name: String,
    pub count: u32,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// End of trading in time units (0.1 s).
    pub horizon: f64,
    /// Length of the pre-open period in which only makers and noise traders act.
    pub burn_in: f64,
    pub initial_price: f64,
    /// Half-width of the seed quotes around the initial price.
    pub seed_half_spread: f64,
    pub seed_size: u32,
    pub fundamental: FundamentalSchedule,
    pub classes: Vec<AgentSpec>,
}

fn trend(weight: f64, limit_mean: f64, market_mean: f64, horizon: f64) -> TrendParams {
    TrendParams { weight, limit_mean, market_mean, noise_std: 0.1, horizon, size_mean: 5.0, size_std: 1.5 }
}

impl Scenario {
    /// The fifteen-class, 1590-agent population over twenty hours.
    pub fn canonical() -> Scenario {
        let mm = |update_mean, depth, spacing| {
            Strategy::MarketMaker(MarketMakerParams { update_mean, depth, spacing, order_size: 5 })
        };
        let mt = |large_order_mean, exit_time_mean, large_size| {
            Strategy::MarketTaker(MarketTakerParams {
                large_order_mean,
                exit_time_mean,
                exit_time_std: 200.0,
                large_size,
                chunk_mean: 5.0,
                chunk_std: 1.5,
            })
        };
        let f = |w, l, m, h| Strategy::Fundamentalist(trend(w, l, m, h));
        let c = |w, l, m, h| Strategy::Chartist(trend(w, l, m, h));
        let noise = Strategy::Noise(NoiseParams {
            limit_mean: 20_000.0,
            market_mean: 10_000.0,
            cancel_mean: 60_000.0,
            price_std: 1.0,
            size_mean: 5.0,
            size_std: 1.5,
        });
        let specs: Vec<(&str, u32, Strategy)> = vec![
            ("market maker(1)", 20, mm(3000.0, 5, 0.25)),
            ("market maker(2)", 20, mm(30_000.0, 10, 0.5)),
            ("market maker(3)", 20, mm(15_000.0, 15, 0.25)),
            ("market taker(1)", 10, mt(30_000.0, 2000.0, 100)),
            ("market taker(2)", 10, mt(45_000.0, 1000.0, 400)),
            ("market taker(3)", 10, mt(15_000.0, 3000.0, 50)),
            ("fundamentalist(1)", 10, f(1.0, 20_000.0, 10_000.0, 10_000.0)),
            ("fundamentalist(2)", 10, f(0.5, 30_000.0, 20_000.0, 20_000.0)),
            ("fundamentalist(3)", 10, f(0.2, 40_000.0, 20_000.0, 40_000.0)),
            ("fundamentalist(4)", 10, f(0.5, 20_000.0, 10_000.0, 40_000.0)),
            ("chartist(1)", 100, c(1.0, 20_000.0, 10_000.0, 10_000.0)),
            ("chartist(2)", 100, c(0.5, 40_000.0, 20_000.0, 40_000.0)),
            ("chartist(3)", 100, c(-1.0, 20_000.0, 10_000.0, 10_000.0)),
            ("chartist(4)", 100, c(-0.5, 40_000.0, 20_000.0, 40_000.0)),
            ("noise trader(1)", 1060, noise),
        ];
        Scenario {
            horizon: FULL_HORIZON,
            burn_in: 20_000.0,
            initial_price: 100.0,
            seed_half_spread: 0.05,
            seed_size: 5,
            fundamental: FundamentalSchedule::canonical(),
            classes: specs
                .into_iter()
                .enumerate()
                .map(|(i, (name, count, strategy))| AgentSpec {
                    class_id: i as u8 + 1,
                    name: name.to_string(),
                    count,
                    strategy,
                })
                .collect(),
        }
    }

    /// Same population over a shorter (or longer) horizon, with the
    /// fundamental schedule compressed proportionally.
    pub fn with_horizon(mut self, horizon: f64) -> Scenario {
        let factor = horizon / self.horizon;
        self.fundamental = self.fundamental.scaled(factor);
        self.horizon = horizon;
        self
    }

    pub fn empty(horizon: f64) -> Scenario {
        Scenario { classes: Vec::new(), ..Scenario::canonical().with_horizon(horizon) }
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ConfigError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.horizon > 0.0) || !(self.burn_in >= 0.0) {
            return Err(ConfigError::Invalid("horizon must be positive and burn-in non-negative".into()));
        }
        if !(self.initial_price > self.seed_half_spread) || self.seed_size == 0 {
            return Err(ConfigError::Invalid("seed quotes must be positive".into()));
        }
        self.fundamental.validate()?;
        let mut seen = std::collections::HashSet::new();
        for spec in &self.classes {
            if spec.class_id == SEED_CLASS || !seen.insert(spec.class_id) {
                return Err(ConfigError::Invalid(format!("class id {} is reserved or repeated", spec.class_id)));
            }
            spec.strategy.validate()?;
        }
        Ok(())
    }

    pub fn agent_count(&self) -> u32 {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn class_name(&self, class_id: u8) -> Option<&str> {
        self.classes.iter().find(|c| c.class_id == class_id).map(|c| c.name.as_str())
    }

    pub fn noise_class(&self) -> Option<u8> {
        self.classes.iter().find(|c| matches!(c.strategy, Strategy::Noise(_))).map(|c| c.class_id)
    }

    /// `(class_id, name)` in scenario order.
    pub fn class_names(&self) -> Vec<(u8, String)> {
        self.classes.iter().map(|c| (c.class_id, c.name.clone())).collect()
    }

    /// Fundamental event times strictly inside the trading period.
    pub fn event_times(&self) -> Vec<f64> {
        self.fundamental.breakpoints.iter().copied().filter(|&b| b > 0.0 && b < self.horizon).collect()
    }
}

/// The simulation's side of the [`Venue`] contract.
struct Exchange {
    book: OrderBook,
    scheduler: Scheduler,
    next_order_id: OrderId,
    open: Vec<Vec<OpenOrder>>,
    class_of: Vec<u8>,
    records: Vec<EventLogRecord>,
    snapshots: Vec<BookSnapshot>,
    mids: MidSeries,
}

impl Exchange {
    fn mid(&self) -> Option<f64> {
        self.book.top_of_book(0.0).mid().or_else(|| self.mids.at(f64::INFINITY))
    }

    fn note_top(&mut self) {
        let now = self.scheduler.now();
        let top = self.book.top_of_book(now);
        let changed = self
            .snapshots
            .last()
            .is_none_or(|s| s.best_bid != top.best_bid || s.best_ask != top.best_ask);
        if changed {
            self.snapshots.push(top);
            if let Some(m) = top.mid() {
                self.mids.push(now, m);
            }
        }
    }

    fn settle(&mut self, exec: &Execution) {
        for fill in &exec.fills {
            if exec.completed_makers.contains(&fill.maker_order_id) {
                let list = &mut self.open[fill.maker_agent_id as usize];
                if let Some(pos) = list.iter().position(|o| o.order_id == fill.maker_order_id) {
                    list.remove(pos);
                }
            }
        }
    }

    fn fill_entries(exec: &Execution) -> Vec<FillEntry> {
        exec.fills
            .iter()
            .map(|f| FillEntry {
                maker_order_id: f.maker_order_id,
                maker_agent_id: f.maker_agent_id,
                price: f.price,
                size: f.size,
            })
            .collect()
    }

    fn remove_cancelled(&mut self, order_id: OrderId, action: Action) {
        let mid = self.mid();
        if let CancelOutcome::Canceled { remaining, agent_id, side, price } = self.book.cancel(order_id) {
            let list = &mut self.open[agent_id as usize];
            if let Some(pos) = list.iter().position(|o| o.order_id == order_id) {
                list.remove(pos);
            }
            self.records.push(EventLogRecord {
                time: self.scheduler.now(),
                agent_id,
                class_id: self.class_of[agent_id as usize],
                action,
                side,
                price: Some(price),
                size: remaining,
                fills: Vec::new(),
                mid,
                order_id,
            });
            self.note_top();
        }
    }

    fn take_id(&mut self) -> OrderId {
        self.next_order_id += 1;
        self.next_order_id
    }
}

impl Venue for Exchange {
    fn now(&self) -> f64 {
        self.scheduler.now()
    }

    fn top(&self) -> BookSnapshot {
        self.book.top_of_book(self.scheduler.now())
    }

    fn last_mid(&self) -> Option<f64> {
        self.mid()
    }

    fn mid_at(&self, t: f64) -> Option<f64> {
        self.mids.at_or_earliest(t)
    }

    fn open_orders(&self, agent: AgentId) -> &[OpenOrder] {
        &self.open[agent as usize]
    }

    fn submit_limit(&mut self, agent: AgentId, side: Side, price: Price, size: u32) -> OrderId {
        let id = self.take_id();
        let now = self.scheduler.now();
        let mid = self.mid();
        let order = Order::limit(id, agent, side, price, size, now);
        let exec = self.book.submit_limit(&order).expect("agents submit valid limit orders");
        self.settle(&exec);
        if exec.rested > 0 {
            self.open[agent as usize].push(OpenOrder { order_id: id, side, price });
        }
        self.records.push(EventLogRecord {
            time: now,
            agent_id: agent,
            class_id: self.class_of[agent as usize],
            action: Action::SubmitLimit,
            side,
            price: Some(price),
            size,
            fills: Self::fill_entries(&exec),
            mid,
            order_id: id,
        });
        self.note_top();
        id
    }

    fn submit_market(&mut self, agent: AgentId, side: Side, size: u32) {
        let id = self.take_id();
        let now = self.scheduler.now();
        let mid = self.mid();
        let order = Order::market(id, agent, side, size, now);
        let exec = self.book.submit_market(&order).expect("agents submit valid market orders");
        self.settle(&exec);
        self.records.push(EventLogRecord {
            time: now,
            agent_id: agent,
            class_id: self.class_of[agent as usize],
            action: Action::SubmitMarket,
            side,
            price: None,
            size,
            fills: Self::fill_entries(&exec),
            mid,
            order_id: id,
        });
        self.note_top();
    }

    fn cancel(&mut self, _agent: AgentId, order_id: OrderId) {
        self.remove_cancelled(order_id, Action::Cancel);
    }

    fn schedule_wakeup(&mut self, agent: AgentId, at: f64, tag: ActionTag) {
        self.scheduler
            .schedule(at, EventKind::AgentWakeup { agent, tag })
            .expect("wakeups are scheduled forward in time");
    }

    fn schedule_expiry(&mut self, order_id: OrderId, at: f64) {
        self.scheduler.schedule(at, EventKind::OrderExpiry { order_id }).expect("expiry after submission");
    }
}

/// Runs one simulation. The log is a pure function of `(scenario, seed)`.
pub fn run(scenario: &Scenario, seed: u64, run_id: u32) -> Result<EventLog, ConfigError> {
    scenario.validate()?;
    let n = scenario.agent_count() as usize;
    let mut agents = Vec::with_capacity(n);
    let mut class_of = Vec::with_capacity(n + 1);
    for spec in &scenario.classes {
        for _ in 0..spec.count {
            let id = agents.len() as AgentId;
            agents.push(Agent::new(id, spec.class_id, spec.strategy.clone(), RngStream::new(seed, id as u64)));
            class_of.push(spec.class_id);
        }
    }
    let seed_agent = n as AgentId;
    class_of.push(SEED_CLASS);

    let start = -scenario.burn_in;
    let mut ex = Exchange {
        book: OrderBook::new(),
        scheduler: Scheduler::new(start, scenario.horizon),
        next_order_id: 0,
        open: vec![Vec::new(); n + 1],
        class_of,
        records: Vec::new(),
        snapshots: Vec::new(),
        mids: MidSeries::new(),
    };
    let bid = Price::from_currency(scenario.initial_price - scenario.seed_half_spread);
    let ask = Price::from_currency(scenario.initial_price + scenario.seed_half_spread);
    ex.submit_limit(seed_agent, Side::Bid, bid, scenario.seed_size);
    ex.submit_limit(seed_agent, Side::Ask, ask, scenario.seed_size);

    for agent in agents.iter_mut() {
        let first = if agent.strategy.active_in_burn_in() { start } else { 0.0 };
        for (t, tag) in agent.initial_wakeups(first) {
            ex.schedule_wakeup(agent.id, t, tag);
        }
    }
    for &b in &scenario.fundamental.breakpoints {
        if b >= start && b <= scenario.horizon {
            ex.scheduler.schedule(b, EventKind::FundamentalStep).expect("breakpoints inside the run");
        }
    }

    let mut fundamental = scenario.fundamental.value(start.max(0.0));
    while let Some(ev) = ex.scheduler.next_event() {
        match ev.kind {
            EventKind::AgentWakeup { agent, tag } => {
                let a = &mut agents[agent as usize];
                let view = matches!(a.strategy, Strategy::Fundamentalist(_)).then_some(fundamental);
                a.wake(tag, &mut ex, view);
            }
            EventKind::OrderExpiry { order_id } => ex.remove_cancelled(order_id, Action::Expire),
            EventKind::FundamentalStep => fundamental = scenario.fundamental.value(ev.time),
        }
    }

    let agents = (0..n).map(|i| AgentInfo { agent_id: i as AgentId, class_id: ex.class_of[i] }).collect();
    Ok(EventLog {
        run_id,
        seed,
        start,
        horizon: scenario.horizon,
        agents,
        records: ex.records,
        snapshots: ex.snapshots,
    })
}

/// Seed used for run `index` of a batch.
pub fn run_seed(master_seed: u64, index: u32) -> u64 {
    mix_seed(master_seed, index as u64)
}

/// Runs `n_runs` independent simulations in parallel. Results are returned in
/// run order regardless of completion order.
pub fn run_batch(scenario: &Scenario, n_runs: u32, master_seed: u64) -> Result<Vec<EventLog>, ConfigError> {
    if n_runs == 0 {
        return Err(ConfigError::Invalid("a batch needs at least one run".into()));
    }
    scenario.validate()?;
    (0..n_runs).into_par_iter().map(|i| run(scenario, run_seed(master_seed, i), i)).collect()
}
