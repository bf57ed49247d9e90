//! The five strategy families, each a wakeup-driven state machine.
//!
//! Agents never touch the book directly: everything goes through [`Venue`],
//! which the simulation implements. Only fundamentalists are handed the
//! fundamental price.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{ActionTag, RngStream};
use crate::matching::{AgentId, BookSnapshot, OrderId, Price, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketMakerParams {
    pub update_mean: f64,
    /// Ladder depth K; the ladder has K + 1 rungs per side.
    pub depth: u32,
    /// Rung spacing q in currency units.
    pub spacing: f64,
    pub order_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketTakerParams {
    pub large_order_mean: f64,
    pub exit_time_mean: f64,
    pub exit_time_std: f64,
    pub large_size: u32,
    pub chunk_mean: f64,
    pub chunk_std: f64,
}

/// Shared by chartists and fundamentalists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendParams {
    pub weight: f64,
    pub limit_mean: f64,
    pub market_mean: f64,
    pub noise_std: f64,
    pub horizon: f64,
    pub size_mean: f64,
    pub size_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub limit_mean: f64,
    pub market_mean: f64,
    pub cancel_mean: f64,
    pub price_std: f64,
    pub size_mean: f64,
    pub size_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    MarketMaker(MarketMakerParams),
    MarketTaker(MarketTakerParams),
    Chartist(TrendParams),
    Fundamentalist(TrendParams),
    Noise(NoiseParams),
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid {strategy} parameter `{field}`: {reason}")]
pub struct ParamError {
    pub strategy: &'static str,
    pub field: &'static str,
    pub reason: &'static str,
}

fn positive(strategy: &'static str, field: &'static str, v: f64) -> Result<(), ParamError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ParamError { strategy, field, reason: "must be positive" })
    }
}

fn non_negative(strategy: &'static str, field: &'static str, v: f64) -> Result<(), ParamError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ParamError { strategy, field, reason: "must be non-negative" })
    }
}

impl Strategy {
    pub fn family(&self) -> &'static str {
        match self {
            Strategy::MarketMaker(_) => "market maker",
            Strategy::MarketTaker(_) => "market taker",
            Strategy::Chartist(_) => "chartist",
            Strategy::Fundamentalist(_) => "fundamentalist",
            Strategy::Noise(_) => "noise trader",
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        match self {
            Strategy::MarketMaker(p) => {
                let s = "market maker";
                positive(s, "update_mean", p.update_mean)?;
                if p.depth < 1 {
                    return Err(ParamError { strategy: s, field: "depth", reason: "must be at least 1" });
                }
                positive(s, "spacing", p.spacing)?;
                let ticks = p.spacing * crate::matching::TICKS_PER_UNIT as f64;
                if (ticks - ticks.round()).abs() > 1e-9 {
                    return Err(ParamError { strategy: s, field: "spacing", reason: "must be a tick multiple" });
                }
                if p.order_size < 1 {
                    return Err(ParamError { strategy: s, field: "order_size", reason: "must be at least 1" });
                }
            }
            Strategy::MarketTaker(p) => {
                let s = "market taker";
                positive(s, "large_order_mean", p.large_order_mean)?;
                positive(s, "exit_time_mean", p.exit_time_mean)?;
                non_negative(s, "exit_time_std", p.exit_time_std)?;
                non_negative(s, "chunk_std", p.chunk_std)?;
                if p.chunk_mean < 1.0 || (p.large_size as f64) < p.chunk_mean {
                    return Err(ParamError {
                        strategy: s,
                        field: "chunk_mean",
                        reason: "need large_size >= chunk_mean >= 1",
                    });
                }
            }
            Strategy::Chartist(p) | Strategy::Fundamentalist(p) => {
                let s = self.family();
                positive(s, "limit_mean", p.limit_mean)?;
                positive(s, "market_mean", p.market_mean)?;
                non_negative(s, "noise_std", p.noise_std)?;
                positive(s, "horizon", p.horizon)?;
                non_negative(s, "size_std", p.size_std)?;
                if matches!(self, Strategy::Fundamentalist(_)) && p.weight <= 0.0 {
                    return Err(ParamError { strategy: s, field: "weight", reason: "must be positive" });
                }
            }
            Strategy::Noise(p) => {
                let s = "noise trader";
                positive(s, "limit_mean", p.limit_mean)?;
                positive(s, "market_mean", p.market_mean)?;
                positive(s, "cancel_mean", p.cancel_mean)?;
                non_negative(s, "price_std", p.price_std)?;
                non_negative(s, "size_std", p.size_std)?;
            }
        }
        Ok(())
    }

    /// Whether the agent trades during the pre-open burn-in.
    pub fn active_in_burn_in(&self) -> bool {
        matches!(self, Strategy::MarketMaker(_) | Strategy::Noise(_))
    }
}

/// A resting order as seen by its owner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenOrder {
    pub order_id: OrderId,
    pub side: Side,
    pub price: Price,
}

/// What an agent can observe and do.
pub trait Venue {
    fn now(&self) -> f64;
    fn top(&self) -> BookSnapshot;
    /// The mid price in force: the current mid, or the last one observed
    /// while a side of the book is empty.
    fn last_mid(&self) -> Option<f64>;
    /// Last known mid (currency) at time `t`; before the first quote the
    /// earliest recorded mid is returned.
    fn mid_at(&self, t: f64) -> Option<f64>;
    fn open_orders(&self, agent: AgentId) -> &[OpenOrder];
    fn submit_limit(&mut self, agent: AgentId, side: Side, price: Price, size: u32) -> OrderId;
    fn submit_market(&mut self, agent: AgentId, side: Side, size: u32);
    fn cancel(&mut self, agent: AgentId, order_id: OrderId);
    fn schedule_wakeup(&mut self, agent: AgentId, at: f64, tag: ActionTag);
    fn schedule_expiry(&mut self, order_id: OrderId, at: f64);
}

/// `max(1, round(Normal(mean, std)))`.
pub fn draw_size(rng: &mut RngStream, mean: f64, std: f64) -> u32 {
    let x = rng.normal(mean, std).round();
    if x < 1.0 {
        1
    } else {
        x as u32
    }
}

/// Ladder prices `a, a+q, ..., a+Kq` and `b, b-q, ..., b-Kq`. A missing side
/// yields no rungs; bid rungs that would fall to zero or below are dropped.
pub fn ladder(params: &MarketMakerParams, best_bid: Option<Price>, best_ask: Option<Price>) -> Vec<(Side, Price)> {
    let q = Price::from_currency(params.spacing).0;
    let mut out = Vec::with_capacity(2 * (params.depth as usize + 1));
    if let Some(a) = best_ask {
        for k in 0..=params.depth as i64 {
            out.push((Side::Ask, Price(a.0 + k * q)));
        }
    }
    if let Some(b) = best_bid {
        for k in 0..=params.depth as i64 {
            let p = b.0 - k * q;
            if p > 0 {
                out.push((Side::Bid, Price(p)));
            }
        }
    }
    out
}

/// Chartist expectation `w (p_t - p_{t-h}) + eps`.
pub fn chartist_change(weight: f64, mid_now: f64, mid_lagged: f64, eps: f64) -> f64 {
    weight * (mid_now - mid_lagged) + eps
}

/// Fundamentalist expectation `w (p* - p_t) + eps`.
pub fn fundamentalist_change(weight: f64, fundamental: f64, mid_now: f64, eps: f64) -> f64 {
    weight * (fundamental - mid_now) + eps
}

/// Side of the market order triggered by an expected price, if any. The
/// quotes themselves count as inside the spread.
pub fn market_side(expected: f64, top: &BookSnapshot) -> Option<Side> {
    match (top.best_bid, top.best_ask) {
        (Some(b), Some(a)) => {
            if expected > a.to_currency() {
                Some(Side::Bid)
            } else if expected < b.to_currency() {
                Some(Side::Ask)
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Side of the limit order for an expected price relative to the mid.
pub fn limit_side(expected: f64, mid: f64) -> Option<Side> {
    if expected > mid {
        Some(Side::Bid)
    } else if expected < mid {
        Some(Side::Ask)
    } else {
        None
    }
}

/// Own orders that contradict an expected price: buys above it and sells
/// below it.
pub fn inconsistent_orders(open: &[OpenOrder], expected: f64) -> Vec<OrderId> {
    open.iter()
        .filter(|o| match o.side {
            Side::Bid => o.price.to_currency() > expected,
            Side::Ask => o.price.to_currency() < expected,
        })
        .map(|o| o.order_id)
        .collect()
}

fn clamp_price(value: f64) -> Price {
    let p = Price::from_currency(value);
    if p.0 < 1 {
        Price::ONE_TICK
    } else {
        p
    }
}

/// Market taker progress through its current parent order.
#[derive(Debug, Clone, PartialEq)]
pub enum TakerState {
    Waiting,
    Executing {
        side: Side,
        exit_time: f64,
        planned_chunks: u32,
        chunks_sent: u32,
        remaining: u32,
    },
}

/// Chunk count for a parent order: `ceil(large_size / chunk_mean)`.
pub fn planned_chunks(params: &MarketTakerParams) -> u32 {
    (params.large_size as f64 / params.chunk_mean).ceil().max(1.0) as u32
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: AgentId,
    pub class_id: u8,
    pub strategy: Strategy,
    rng: RngStream,
    taker: TakerState,
}

impl Agent {
    pub fn new(id: AgentId, class_id: u8, strategy: Strategy, rng: RngStream) -> Agent {
        Agent { id, class_id, strategy, rng, taker: TakerState::Waiting }
    }

    pub fn taker_state(&self) -> &TakerState {
        &self.taker
    }

    /// First wakeups, each drawn from its own waiting-time law starting at `start`.
    pub fn initial_wakeups(&mut self, start: f64) -> Vec<(f64, ActionTag)> {
        let rng = &mut self.rng;
        match &self.strategy {
            Strategy::MarketMaker(p) => vec![(start + rng.exponential(p.update_mean), ActionTag::MakerUpdate)],
            Strategy::MarketTaker(p) => vec![(start + rng.exponential(p.large_order_mean), ActionTag::TakerStart)],
            Strategy::Chartist(p) | Strategy::Fundamentalist(p) => vec![
                (start + rng.exponential(p.limit_mean), ActionTag::TrendLimit),
                (start + rng.exponential(p.market_mean), ActionTag::TrendMarket),
            ],
            Strategy::Noise(p) => vec![
                (start + rng.exponential(p.limit_mean), ActionTag::NoiseLimit),
                (start + rng.exponential(p.market_mean), ActionTag::NoiseMarket),
                (start + rng.exponential(p.cancel_mean), ActionTag::NoiseCancel),
            ],
        }
    }

    /// Handles one wakeup. `fundamental` is only supplied to fundamentalists.
    pub fn wake(&mut self, tag: ActionTag, venue: &mut dyn Venue, fundamental: Option<f64>) {
        let strategy = self.strategy.clone();
        match (&strategy, tag) {
            (Strategy::MarketMaker(p), ActionTag::MakerUpdate) => self.maker_rebuild(p, venue),
            (Strategy::MarketTaker(p), ActionTag::TakerStart) => self.taker_start(p, venue),
            (Strategy::MarketTaker(p), ActionTag::TakerChunk) => self.taker_chunk(p, venue),
            (Strategy::Chartist(p), ActionTag::TrendLimit | ActionTag::TrendMarket) => {
                let now = venue.now();
                let expected = venue.mid_at(now - p.horizon).and_then(|lagged| {
                    let mid = venue.last_mid()?;
                    let eps = self.rng.normal(0.0, p.noise_std);
                    Some(mid + chartist_change(p.weight, mid, lagged, eps))
                });
                self.trend_act(p, tag, expected, venue);
            }
            (Strategy::Fundamentalist(p), ActionTag::TrendLimit | ActionTag::TrendMarket) => {
                let expected = match (venue.last_mid(), fundamental) {
                    (Some(mid), Some(f)) => {
                        let eps = self.rng.normal(0.0, p.noise_std);
                        Some(mid + fundamentalist_change(p.weight, f, mid, eps))
                    }
                    _ => None,
                };
                self.trend_act(p, tag, expected, venue);
            }
            (Strategy::Noise(p), ActionTag::NoiseLimit | ActionTag::NoiseMarket | ActionTag::NoiseCancel) => {
                self.noise_act(p, tag, venue)
            }
            (s, t) => panic!("{} agent {} received unexpected wakeup {t:?}", s.family(), self.id),
        }
    }

    fn maker_rebuild(&mut self, p: &MarketMakerParams, venue: &mut dyn Venue) {
        let own: Vec<OrderId> = venue.open_orders(self.id).iter().map(|o| o.order_id).collect();
        for id in own {
            venue.cancel(self.id, id);
        }
        let top = venue.top();
        for (side, price) in ladder(p, top.best_bid, top.best_ask) {
            venue.submit_limit(self.id, side, price, p.order_size);
        }
        let next = venue.now() + self.rng.exponential(p.update_mean);
        venue.schedule_wakeup(self.id, next, ActionTag::MakerUpdate);
    }

    fn taker_start(&mut self, p: &MarketTakerParams, venue: &mut dyn Venue) {
        let n = planned_chunks(p);
        let exit_time = self.rng.normal(p.exit_time_mean, p.exit_time_std).max(n as f64);
        let side = if self.rng.coin() { Side::Bid } else { Side::Ask };
        self.taker = TakerState::Executing {
            side,
            exit_time,
            planned_chunks: n,
            chunks_sent: 0,
            remaining: p.large_size,
        };
        self.taker_chunk(p, venue);
    }

    fn taker_chunk(&mut self, p: &MarketTakerParams, venue: &mut dyn Venue) {
        let TakerState::Executing { side, exit_time, planned_chunks, chunks_sent, remaining } = self.taker.clone()
        else {
            return;
        };
        let drawn = draw_size(&mut self.rng, p.chunk_mean, p.chunk_std);
        let size = if chunks_sent + 1 >= planned_chunks { remaining } else { drawn.min(remaining) };
        venue.submit_market(self.id, side, size);
        let remaining = remaining - size;
        let now = venue.now();
        if remaining == 0 {
            self.taker = TakerState::Waiting;
            let next = now + self.rng.exponential(p.large_order_mean);
            venue.schedule_wakeup(self.id, next, ActionTag::TakerStart);
        } else {
            self.taker = TakerState::Executing {
                side,
                exit_time,
                planned_chunks,
                chunks_sent: chunks_sent + 1,
                remaining,
            };
            let mean = exit_time / planned_chunks as f64;
            let gap = self.rng.normal(mean, mean / 5.0).max(1.0);
            venue.schedule_wakeup(self.id, now + gap, ActionTag::TakerChunk);
        }
    }

    fn trend_act(&mut self, p: &TrendParams, tag: ActionTag, expected: Option<f64>, venue: &mut dyn Venue) {
        let now = venue.now();
        if let Some(expected) = expected {
            match tag {
                ActionTag::TrendMarket => self.trend_market(p, expected, venue),
                _ => self.trend_limit(p, expected, venue),
            }
        }
        let mean = if tag == ActionTag::TrendMarket { p.market_mean } else { p.limit_mean };
        venue.schedule_wakeup(self.id, now + self.rng.exponential(mean), tag);
    }

    fn trend_market(&mut self, p: &TrendParams, expected: f64, venue: &mut dyn Venue) {
        let Some(side) = market_side(expected, &venue.top()) else {
            return;
        };
        let against = side.opposite();
        let stale: Vec<OrderId> =
            venue.open_orders(self.id).iter().filter(|o| o.side == against).map(|o| o.order_id).collect();
        for id in stale {
            venue.cancel(self.id, id);
        }
        let size = draw_size(&mut self.rng, p.size_mean, p.size_std);
        venue.submit_market(self.id, side, size);
    }

    fn trend_limit(&mut self, p: &TrendParams, expected: f64, venue: &mut dyn Venue) {
        let Some(mid) = venue.last_mid() else {
            return;
        };
        let Some(side) = limit_side(expected, mid) else {
            return;
        };
        for id in inconsistent_orders(venue.open_orders(self.id), expected) {
            venue.cancel(self.id, id);
        }
        let size = draw_size(&mut self.rng, p.size_mean, p.size_std);
        let id = venue.submit_limit(self.id, side, clamp_price(expected), size);
        venue.schedule_expiry(id, venue.now() + p.horizon);
    }

    fn noise_act(&mut self, p: &NoiseParams, tag: ActionTag, venue: &mut dyn Venue) {
        let now = venue.now();
        let mean = match tag {
            ActionTag::NoiseMarket => {
                let side = if self.rng.coin() { Side::Bid } else { Side::Ask };
                let size = draw_size(&mut self.rng, p.size_mean, p.size_std);
                venue.submit_market(self.id, side, size);
                p.market_mean
            }
            ActionTag::NoiseLimit => {
                let side = if self.rng.coin() { Side::Bid } else { Side::Ask };
                let price = self.rng.normal(0.0, p.price_std);
                let size = draw_size(&mut self.rng, p.size_mean, p.size_std);
                if let Some(mid) = venue.last_mid() {
                    venue.submit_limit(self.id, side, clamp_price(mid + price), size);
                }
                p.limit_mean
            }
            _ => {
                let open = venue.open_orders(self.id);
                if !open.is_empty() {
                    let id = open[self.rng.index(open.len())].order_id;
                    venue.cancel(self.id, id);
                }
                p.cancel_mean
            }
        };
        venue.schedule_wakeup(self.id, now + self.rng.exponential(mean), tag);
    }
}
