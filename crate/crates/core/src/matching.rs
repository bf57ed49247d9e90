//! Single-asset limit order book with price-time priority.
//!
//! Prices are integer ticks of 0.01 currency units. Resting orders on each
//! side live in a `BTreeMap` keyed by `(priority price, priority_seq)`, so the
//! first entry is always the best order and iteration order is exactly the
//! matching order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type OrderId = u64;
pub type AgentId = u32;

/// Ticks per currency unit.
pub const TICKS_PER_UNIT: i64 = 100;

/// A price in ticks of 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Price(pub i64);

impl Price {
    pub const ONE_TICK: Price = Price(1);

    /// Quantizes a currency amount onto the tick grid, rounding half away
    /// from zero.
    pub fn from_currency(value: f64) -> Price {
        Price((value * TICKS_PER_UNIT as f64).round() as i64)
    }

    pub fn ticks(self) -> i64 {
        self.0
    }

    pub fn to_currency(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.to_currency())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    /// +1 for bids, -1 for asks.
    pub fn direction(self) -> f64 {
        match self {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderKind {
    Limit,
    Market,
}

/// An order as submitted by an agent. `remaining` and `priority_seq` are
/// maintained by the book.
#[derive(Debug, Clone, PartialEq)]
pub struct Order {
    pub order_id: OrderId,
    pub agent_id: AgentId,
    pub side: Side,
    pub kind: OrderKind,
    pub price: Option<Price>,
    pub size: u32,
    pub remaining: u32,
    pub submit_time: f64,
    pub priority_seq: u64,
}

impl Order {
    pub fn limit(order_id: OrderId, agent_id: AgentId, side: Side, price: Price, size: u32, time: f64) -> Order {
        Order {
            order_id,
            agent_id,
            side,
            kind: OrderKind::Limit,
            price: Some(price),
            size,
            remaining: size,
            submit_time: time,
            priority_seq: 0,
        }
    }

    pub fn market(order_id: OrderId, agent_id: AgentId, side: Side, size: u32, time: f64) -> Order {
        Order {
            order_id,
            agent_id,
            side,
            kind: OrderKind::Market,
            price: None,
            size,
            remaining: size,
            submit_time: time,
            priority_seq: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub time: f64,
    pub taker_order_id: OrderId,
    pub maker_order_id: OrderId,
    pub maker_agent_id: AgentId,
    pub price: Price,
    pub size: u32,
}

/// Top of book at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub time: f64,
    pub best_bid: Option<Price>,
    pub best_ask: Option<Price>,
}

impl BookSnapshot {
    /// Mid price in ticks, `(a + b) / 2`.
    pub fn mid_ticks(&self) -> Option<f64> {
        match (self.best_bid, self.best_ask) {
            (Some(b), Some(a)) => Some((a.0 + b.0) as f64 / 2.0),
            _ => None,
        }
    }

    /// Spread in ticks, `(a - b) / 2`.
    pub fn spread_ticks(&self) -> Option<f64> {
        match (self.best_bid, self.best_ask) {
            (Some(b), Some(a)) => Some((a.0 - b.0) as f64 / 2.0),
            _ => None,
        }
    }

    pub fn mid(&self) -> Option<f64> {
        self.mid_ticks().map(|m| m / TICKS_PER_UNIT as f64)
    }

    pub fn spread(&self) -> Option<f64> {
        self.spread_ticks().map(|s| s / TICKS_PER_UNIT as f64)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BookError {
    #[error("order id {0} was already submitted")]
    DuplicateOrderId(OrderId),
    #[error("order {0} has non-positive size")]
    NonPositiveSize(OrderId),
    #[error("order {0} has a non-positive limit price")]
    NonPositivePrice(OrderId),
    #[error("order {0} has the wrong kind for this operation")]
    WrongKind(OrderId),
}

/// Result of submitting an order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Execution {
    pub fills: Vec<Fill>,
    /// Shares left resting in the book (limit orders only).
    pub rested: u32,
    /// Shares dropped because the opposite side ran dry (market orders only).
    pub discarded: u32,
    /// Maker orders that were fully consumed, in execution order.
    pub completed_makers: Vec<OrderId>,
}

impl Execution {
    pub fn filled(&self) -> u32 {
        self.fills.iter().map(|f| f.size).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelOutcome {
    Canceled { remaining: u32, agent_id: AgentId, side: Side, price: Price },
    NotResting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModifyOutcome {
    /// Size reduced, queue position kept.
    Reduced,
    /// Size raised, order moved to the back of its level.
    Requeued,
    NoOp,
}

type BookKey = (i64, u64);

#[derive(Debug, Clone, Copy)]
struct Resting {
    order_id: OrderId,
    agent_id: AgentId,
    price: Price,
    size: u32,
    remaining: u32,
}

/// The order book.
#[derive(Debug, Default, Clone)]
pub struct OrderBook {
    // bids keyed by negated price so that the first key is the highest bid
    bids: BTreeMap<BookKey, Resting>,
    asks: BTreeMap<BookKey, Resting>,
    index: HashMap<OrderId, (Side, BookKey)>,
    seen: HashSet<OrderId>,
    next_seq: u64,
}

fn key_for(side: Side, price: Price, seq: u64) -> BookKey {
    match side {
        Side::Bid => (-price.0, seq),
        Side::Ask => (price.0, seq),
    }
}

impl OrderBook {
    pub fn new() -> OrderBook {
        OrderBook::default()
    }

    fn side_mut(&mut self, side: Side) -> &mut BTreeMap<BookKey, Resting> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    fn side(&self, side: Side) -> &BTreeMap<BookKey, Resting> {
        match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        }
    }

    fn take_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn admit(&mut self, order: &Order) -> Result<(), BookError> {
        if order.size == 0 {
            return Err(BookError::NonPositiveSize(order.order_id));
        }
        if self.seen.contains(&order.order_id) {
            return Err(BookError::DuplicateOrderId(order.order_id));
        }
        self.seen.insert(order.order_id);
        Ok(())
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.values().next().map(|r| r.price)
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.asks.values().next().map(|r| r.price)
    }

    pub fn top_of_book(&self, time: f64) -> BookSnapshot {
        BookSnapshot { time, best_bid: self.best_bid(), best_ask: self.best_ask() }
    }

    pub fn is_resting(&self, order_id: OrderId) -> bool {
        self.index.contains_key(&order_id)
    }

    /// Remaining size of a resting order.
    pub fn remaining(&self, order_id: OrderId) -> Option<u32> {
        let (side, key) = self.index.get(&order_id)?;
        self.side(*side).get(key).map(|r| r.remaining)
    }

    pub fn resting_count(&self) -> usize {
        self.index.len()
    }

    /// Resting orders on one side in matching order: `(order_id, price, remaining)`.
    pub fn side_orders(&self, side: Side) -> Vec<(OrderId, Price, u32)> {
        self.side(side).values().map(|r| (r.order_id, r.price, r.remaining)).collect()
    }

    /// Sweeps the opposite side while `limit` allows.
    fn sweep(&mut self, taker: &Order, limit: Option<Price>, exec: &mut Execution) -> u32 {
        let mut remaining = taker.size;
        let book_side = taker.side.opposite();
        while remaining > 0 {
            let Some(mut entry) = self.side_mut(book_side).first_entry() else {
                break;
            };
            let maker = entry.get_mut();
            let crosses = match (limit, taker.side) {
                (None, _) => true,
                (Some(l), Side::Bid) => maker.price <= l,
                (Some(l), Side::Ask) => maker.price >= l,
            };
            if !crosses {
                break;
            }
            let size = remaining.min(maker.remaining);
            maker.remaining -= size;
            remaining -= size;
            exec.fills.push(Fill {
                time: taker.submit_time,
                taker_order_id: taker.order_id,
                maker_order_id: maker.order_id,
                maker_agent_id: maker.agent_id,
                price: maker.price,
                size,
            });
            if maker.remaining == 0 {
                let id = maker.order_id;
                entry.remove();
                self.index.remove(&id);
                exec.completed_makers.push(id);
            }
        }
        remaining
    }

    /// Submits a limit order. A marketable limit executes against the opposite
    /// side up to its price; the remainder rests behind existing orders at
    /// its level.
    pub fn submit_limit(&mut self, order: &Order) -> Result<Execution, BookError> {
        let price = match (order.kind, order.price) {
            (OrderKind::Limit, Some(p)) => p,
            _ => return Err(BookError::WrongKind(order.order_id)),
        };
        if price.0 <= 0 {
            return Err(BookError::NonPositivePrice(order.order_id));
        }
        self.admit(order)?;
        let mut exec = Execution::default();
        let remaining = self.sweep(order, Some(price), &mut exec);
        if remaining > 0 {
            let seq = self.take_seq();
            let key = key_for(order.side, price, seq);
            self.side_mut(order.side).insert(
                key,
                Resting {
                    order_id: order.order_id,
                    agent_id: order.agent_id,
                    price,
                    size: order.size,
                    remaining,
                },
            );
            self.index.insert(order.order_id, (order.side, key));
            exec.rested = remaining;
        }
        Ok(exec)
    }

    /// Submits a market order. Unfilled remainder is discarded.
    pub fn submit_market(&mut self, order: &Order) -> Result<Execution, BookError> {
        if order.kind != OrderKind::Market {
            return Err(BookError::WrongKind(order.order_id));
        }
        self.admit(order)?;
        let mut exec = Execution::default();
        exec.discarded = self.sweep(order, None, &mut exec);
        Ok(exec)
    }

    /// Removes a resting order. Unknown or already filled ids are a no-op.
    pub fn cancel(&mut self, order_id: OrderId) -> CancelOutcome {
        let Some((side, key)) = self.index.remove(&order_id) else {
            return CancelOutcome::NotResting;
        };
        let resting = self.side_mut(side).remove(&key).expect("index and book agree");
        CancelOutcome::Canceled {
            remaining: resting.remaining,
            agent_id: resting.agent_id,
            side,
            price: resting.price,
        }
    }

    /// Changes the remaining size of a resting order. Decreases keep time
    /// priority; increases take a fresh priority sequence number.
    pub fn modify_volume(&mut self, order_id: OrderId, new_size: u32) -> ModifyOutcome {
        if new_size == 0 {
            return ModifyOutcome::NoOp;
        }
        let Some(&(side, key)) = self.index.get(&order_id) else {
            return ModifyOutcome::NoOp;
        };
        let current = self.side(side)[&key].remaining;
        if new_size == current {
            ModifyOutcome::NoOp
        } else if new_size < current {
            self.side_mut(side).get_mut(&key).expect("resting").remaining = new_size;
            ModifyOutcome::Reduced
        } else {
            let mut resting = self.side_mut(side).remove(&key).expect("resting");
            resting.size += new_size - current;
            resting.remaining = new_size;
            let seq = self.take_seq();
            let new_key = key_for(side, resting.price, seq);
            self.side_mut(side).insert(new_key, resting);
            self.index.insert(order_id, (side, new_key));
            ModifyOutcome::Requeued
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64) -> Price {
        Price::from_currency(x)
    }

    fn fig1_book() -> OrderBook {
        let mut book = OrderBook::new();
        let mut id = 0;
        for (price, size) in [(98.10, 10), (98.05, 5), (97.90, 7)] {
            id += 1;
            book.submit_limit(&Order::limit(id, 1, Side::Bid, p(price), size, 0.0)).unwrap();
        }
        for (price, size) in [(98.40, 8), (98.45, 12), (98.60, 3)] {
            id += 1;
            book.submit_limit(&Order::limit(id, 2, Side::Ask, p(price), size, 0.0)).unwrap();
        }
        book
    }

    #[test]
    fn tick_rounding_half_away_from_zero() {
        assert_eq!(p(100.005).0, 10001);
        assert_eq!(p(100.30).0, 10030);
        assert_eq!(p(-0.005).0, -1);
    }

    #[test]
    fn passive_limit_rests_below_best_bid() {
        let mut book = fig1_book();
        let exec = book.submit_limit(&Order::limit(100, 3, Side::Bid, p(98.00), 20, 1.0)).unwrap();
        assert!(exec.fills.is_empty());
        assert_eq!(exec.rested, 20);
        assert_eq!(book.best_bid(), Some(p(98.10)));
        assert!(book.is_resting(100));
    }

    #[test]
    fn sell_into_empty_book() {
        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 1, Side::Ask, p(100.0), 5, 0.0)).unwrap();
        let snap = book.top_of_book(0.0);
        assert_eq!(snap.best_ask, Some(p(100.0)));
        assert_eq!(snap.best_bid, None);
        assert_eq!(snap.mid(), None);
        assert_eq!(snap.spread(), None);
    }

    #[test]
    fn time_priority_within_level() {
        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 1, Side::Ask, p(100.0), 3, 0.0)).unwrap();
        book.submit_limit(&Order::limit(2, 1, Side::Ask, p(100.0), 4, 0.0)).unwrap();
        let exec = book.submit_limit(&Order::limit(3, 2, Side::Bid, p(100.0), 5, 1.0)).unwrap();
        let got: Vec<_> = exec.fills.iter().map(|f| (f.maker_order_id, f.price, f.size)).collect();
        assert_eq!(got, vec![(1, p(100.0), 3), (2, p(100.0), 2)]);
        assert_eq!(book.remaining(2), Some(2));
        assert_eq!(exec.rested, 0);
        assert_eq!(exec.completed_makers, vec![1]);
    }

    #[test]
    fn market_order_walks_levels() {
        let mut book = fig1_book();
        let exec = book.submit_market(&Order::market(50, 3, Side::Bid, 10, 1.0)).unwrap();
        assert_eq!(exec.fills[0].price, p(98.40));
        assert_eq!(exec.filled(), 10);

        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 1, Side::Ask, p(100.0), 2, 0.0)).unwrap();
        book.submit_limit(&Order::limit(2, 1, Side::Ask, p(100.25), 5, 0.0)).unwrap();
        let exec = book.submit_market(&Order::market(3, 2, Side::Bid, 4, 1.0)).unwrap();
        let got: Vec<_> = exec.fills.iter().map(|f| (f.price, f.size)).collect();
        assert_eq!(got, vec![(p(100.0), 2), (p(100.25), 2)]);
    }

    #[test]
    fn market_order_into_empty_side_is_discarded() {
        let mut book = OrderBook::new();
        let exec = book.submit_market(&Order::market(1, 1, Side::Ask, 1, 0.0)).unwrap();
        assert!(exec.fills.is_empty());
        assert_eq!(exec.discarded, 1);
        assert_eq!(book.resting_count(), 0);
    }

    #[test]
    fn rejects_duplicates_and_empty_orders() {
        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 1, Side::Ask, p(100.0), 2, 0.0)).unwrap();
        assert_eq!(
            book.submit_limit(&Order::limit(1, 1, Side::Ask, p(101.0), 2, 0.0)),
            Err(BookError::DuplicateOrderId(1))
        );
        assert_eq!(
            book.submit_market(&Order::market(2, 1, Side::Bid, 0, 0.0)),
            Err(BookError::NonPositiveSize(2))
        );
        // a filled order's id stays taken
        book.submit_market(&Order::market(3, 1, Side::Bid, 2, 0.0)).unwrap();
        assert_eq!(
            book.submit_limit(&Order::limit(1, 1, Side::Ask, p(100.0), 2, 0.0)),
            Err(BookError::DuplicateOrderId(1))
        );
    }

    #[test]
    fn cancel_is_idempotent() {
        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 7, Side::Ask, p(100.0), 5, 0.0)).unwrap();
        book.submit_market(&Order::market(2, 8, Side::Bid, 3, 0.0)).unwrap();
        assert_eq!(
            book.cancel(1),
            CancelOutcome::Canceled { remaining: 2, agent_id: 7, side: Side::Ask, price: p(100.0) }
        );
        assert_eq!(book.cancel(1), CancelOutcome::NotResting);
        assert_eq!(book.cancel(99), CancelOutcome::NotResting);
    }

    #[test]
    fn modify_volume_priority_rules() {
        let mut book = OrderBook::new();
        book.submit_limit(&Order::limit(1, 1, Side::Bid, p(99.0), 5, 0.0)).unwrap();
        book.submit_limit(&Order::limit(2, 1, Side::Bid, p(99.0), 5, 0.0)).unwrap();
        assert_eq!(book.modify_volume(1, 2), ModifyOutcome::Reduced);
        assert_eq!(book.side_orders(Side::Bid)[0], (1, p(99.0), 2));
        assert_eq!(book.modify_volume(1, 2), ModifyOutcome::NoOp);
        assert_eq!(book.modify_volume(1, 8), ModifyOutcome::Requeued);
        let ids: Vec<_> = book.side_orders(Side::Bid).iter().map(|o| o.0).collect();
        assert_eq!(ids, vec![2, 1]);
        assert_eq!(book.modify_volume(42, 3), ModifyOutcome::NoOp);
    }

    #[test]
    fn mid_and_spread_formulas() {
        let snap = BookSnapshot { time: 0.0, best_bid: Some(p(98.10)), best_ask: Some(p(98.40)) };
        assert!((snap.mid().unwrap() - 98.25).abs() < 1e-12);
        assert!((snap.spread().unwrap() - 0.15).abs() < 1e-12);
    }
}
