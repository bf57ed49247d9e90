//! Independent reference implementations shared by the integration suites
//! and the acceptance gate. Each one is deliberately simple and slow.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeSet, HashSet};

use lobsim::cluster::{self, Linkage};
use lobsim::matching::{BookError, Execution, Fill, Order, OrderBook, OrderKind, Price, Side};
use lobsim::svm::{self, Kernel, SolverOptions, SvmHyperParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- matching

#[derive(Debug, Clone)]
struct NaiveOrder {
    id: u64,
    agent: u32,
    side: Side,
    price: i64,
    remaining: u32,
    seq: u64,
}

/// Flat list of resting orders. Every match rescans the whole list.
#[derive(Debug, Default)]
pub struct NaiveBook {
    orders: Vec<NaiveOrder>,
    seen: HashSet<u64>,
    seq: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NaiveExec {
    pub fills: Vec<(u64, u64, u32, i64, u32)>,
    pub rested: u32,
    pub discarded: u32,
}

impl NaiveExec {
    pub fn from_book(e: &Execution) -> NaiveExec {
        NaiveExec {
            fills: e.fills.iter().map(|f: &Fill| (f.taker_order_id, f.maker_order_id, f.maker_agent_id, f.price.0, f.size)).collect(),
            rested: e.rested,
            discarded: e.discarded,
        }
    }
}

impl NaiveBook {
    fn best(&self, side: Side) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.orders.iter().enumerate() {
            if o.side != side {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let cur = &self.orders[b];
                    let better = match side {
                        Side::Ask => o.price < cur.price || (o.price == cur.price && o.seq < cur.seq),
                        Side::Bid => o.price > cur.price || (o.price == cur.price && o.seq < cur.seq),
                    };
                    if better {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    pub fn submit(&mut self, o: &Order) -> Result<NaiveExec, BookError> {
        if o.kind == OrderKind::Limit && o.price.is_none_or(|p| p.0 <= 0) {
            return Err(BookError::NonPositivePrice(o.order_id));
        }
        if o.size == 0 {
            return Err(BookError::NonPositiveSize(o.order_id));
        }
        if !self.seen.insert(o.order_id) {
            return Err(BookError::DuplicateOrderId(o.order_id));
        }
        let mut exec = NaiveExec::default();
        let mut remaining = o.size;
        while remaining > 0 {
            let Some(i) = self.best(o.side.opposite()) else { break };
            let maker = &self.orders[i];
            let crosses = match (o.kind, o.side) {
                (OrderKind::Market, _) => true,
                (OrderKind::Limit, Side::Bid) => maker.price <= o.price.unwrap().0,
                (OrderKind::Limit, Side::Ask) => maker.price >= o.price.unwrap().0,
            };
            if !crosses {
                break;
            }
            let size = remaining.min(maker.remaining);
            exec.fills.push((o.order_id, maker.id, maker.agent, maker.price, size));
            remaining -= size;
            self.orders[i].remaining -= size;
            if self.orders[i].remaining == 0 {
                self.orders.remove(i);
            }
        }
        match o.kind {
            OrderKind::Market => exec.discarded = remaining,
            OrderKind::Limit if remaining > 0 => {
                self.seq += 1;
                self.orders.push(NaiveOrder {
                    id: o.order_id,
                    agent: o.agent_id,
                    side: o.side,
                    price: o.price.unwrap().0,
                    remaining,
                    seq: self.seq,
                });
                exec.rested = remaining;
            }
            OrderKind::Limit => {}
        }
        Ok(exec)
    }

    pub fn cancel(&mut self, id: u64) -> Option<u32> {
        let i = self.orders.iter().position(|o| o.id == id)?;
        Some(self.orders.remove(i).remaining)
    }

    /// Decreases keep priority, increases go to the back of the level.
    pub fn modify(&mut self, id: u64, new_size: u32) {
        if new_size == 0 {
            return;
        }
        let Some(i) = self.orders.iter().position(|o| o.id == id) else { return };
        if new_size > self.orders[i].remaining {
            self.seq += 1;
            self.orders[i].seq = self.seq;
        }
        self.orders[i].remaining = new_size;
    }

    /// `(id, price, remaining)` in matching order.
    pub fn side_orders(&self, side: Side) -> Vec<(u64, i64, u32)> {
        let mut v: Vec<&NaiveOrder> = self.orders.iter().filter(|o| o.side == side).collect();
        v.sort_by(|a, b| match side {
            Side::Ask => a.price.cmp(&b.price).then(a.seq.cmp(&b.seq)),
            Side::Bid => b.price.cmp(&a.price).then(a.seq.cmp(&b.seq)),
        });
        v.into_iter().map(|o| (o.id, o.price, o.remaining)).collect()
    }
}

fn book_sides(b: &OrderBook, side: Side) -> Vec<(u64, i64, u32)> {
    b.side_orders(side).into_iter().map(|(id, p, r)| (id, p.0, r)).collect()
}

/// Drives the real and the naive book with the same random operations.
/// Returns the number of operations applied, or the first divergence.
pub fn matcher_fuzz(seed: u64, episodes: usize, ops_per_episode: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = 0;
    for ep in 0..episodes {
        let mut real = OrderBook::new();
        let mut naive = NaiveBook::default();
        let mut next_id = 0u64;
        let mut issued: Vec<u64> = Vec::new();
        let centre: i64 = rng.random_range(50..20_000);
        for step in 0..ops_per_episode {
            let roll: f64 = rng.random();
            let side = if rng.random_bool(0.5) { Side::Bid } else { Side::Ask };
            let agent = rng.random_range(0..8);
            let here = format!("episode {ep} step {step}");
            if roll < 0.55 || issued.is_empty() {
                // mostly fresh ids, sometimes a reused one
                let id = if !issued.is_empty() && rng.random_bool(0.01) {
                    issued[rng.random_range(0..issued.len())]
                } else {
                    next_id += 1;
                    next_id
                };
                let size = if rng.random_bool(0.01) { 0 } else { rng.random_range(1..12) };
                let market = rng.random_bool(0.2);
                let order = if market {
                    Order::market(id, agent, side, size, step as f64)
                } else {
                    let tick = if rng.random_bool(0.005) { -centre } else { centre + rng.random_range(-6..=6) };
                    Order::limit(id, agent, side, Price(tick), size, step as f64)
                };
                let a = if market { real.submit_market(&order) } else { real.submit_limit(&order) };
                let b = naive.submit(&order);
                match (a, b) {
                    (Ok(x), Ok(y)) => {
                        let x = NaiveExec::from_book(&x);
                        if x != y {
                            return Err(format!("{here}: executions differ {x:?} vs {y:?}"));
                        }
                    }
                    (Err(x), Err(y)) if x == y => {}
                    (x, y) => return Err(format!("{here}: outcomes differ {x:?} vs {y:?}")),
                }
                issued.push(id);
            } else if roll < 0.85 {
                let id = issued[rng.random_range(0..issued.len())];
                let a = match real.cancel(id) {
                    lobsim::matching::CancelOutcome::Canceled { remaining, .. } => Some(remaining),
                    lobsim::matching::CancelOutcome::NotResting => None,
                };
                let b = naive.cancel(id);
                if a != b {
                    return Err(format!("{here}: cancel of {id} differs {a:?} vs {b:?}"));
                }
            } else {
                let id = issued[rng.random_range(0..issued.len())];
                let size = rng.random_range(0..12);
                real.modify_volume(id, size);
                naive.modify(id, size);
            }
            ops += 1;
            if step % 64 == 0 || step + 1 == ops_per_episode {
                for s in [Side::Bid, Side::Ask] {
                    if book_sides(&real, s) != naive.side_orders(s) {
                        return Err(format!("{here}: {s:?} side differs"));
                    }
                }
            }
        }
    }
    Ok(ops)
}

// -------------------------------------------------------------- clustering

fn centroid(rows: &[Vec<f64>], members: &BTreeSet<usize>) -> Vec<f64> {
    let d = rows[0].len();
    let mut c = vec![0.0; d];
    for &i in members {
        for (a, v) in c.iter_mut().zip(&rows[i]) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    c
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cluster distance computed from the members themselves.
pub fn linkage_distance(rows: &[Vec<f64>], a: &BTreeSet<usize>, b: &BTreeSet<usize>, linkage: Linkage) -> f64 {
    match linkage {
        Linkage::Ward => {
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt() * euclid(&centroid(rows, a), &centroid(rows, b))
        }
        Linkage::Centroid => euclid(&centroid(rows, a), &centroid(rows, b)),
        Linkage::Complete => a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| euclid(&rows[i], &rows[j])).fold(0.0, f64::max),
        Linkage::Average => {
            let s: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| euclid(&rows[i], &rows[j])).sum();
            s / (a.len() * b.len()) as f64
        }
    }
}

/// Agglomeration that recomputes every cluster distance at every step.
pub fn brute_agglomerate(rows: &[Vec<f64>], linkage: Linkage) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, f64)> {
    let mut clusters: Vec<BTreeSet<usize>> = (0..rows.len()).map(|i| BTreeSet::from([i])).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = linkage_distance(rows, &clusters[i], &clusters[j], linkage);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (h, i, j) = best;
        let b = clusters.remove(j);
        let a = clusters.remove(i);
        out.push((a.clone(), b.clone(), h));
        clusters.push(a.union(&b).copied().collect());
    }
    out
}

fn same_join(x: &(BTreeSet<usize>, BTreeSet<usize>, f64), y: &(BTreeSet<usize>, BTreeSet<usize>, f64)) -> bool {
    let pair = (x.0 == y.0 && x.1 == y.1) || (x.0 == y.1 && x.1 == y.0);
    pair && (x.2 - y.2).abs() <= 1e-9 * x.2.abs().max(1.0)
}

/// Compares the library's merge list with the brute-force one. Inversions
/// under centroid linkage reorder merges, so that linkage is compared as a
/// multiset.
pub fn ward_oracle_datasets(seed: u64, count: usize, linkage: Linkage) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..count {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let got = cluster::merge_sets(&cluster::agglomerate(&rows, linkage).map_err(|e| e.to_string())?);
        let want = brute_agglomerate(&rows, linkage);
        let ok = if linkage == Linkage::Centroid {
            let mut used = vec![false; want.len()];
            got.iter().all(|g| {
                want.iter().enumerate().any(|(i, w)| {
                    let hit = !used[i] && same_join(g, w);
                    if hit {
                        used[i] = true;
                    }
                    hit
                })
            })
        } else {
            got.len() == want.len() && got.iter().zip(&want).all(|(g, w)| same_join(g, w))
        };
        if !ok {
            return Err(format!("case {case} ({linkage:?}, n={n}): {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

// --------------------------------------------------------------------- svm

fn gram(x: &[Vec<f64>], y: &[f64], k: &Kernel) -> Vec<Vec<f64>> {
    x.iter().zip(y).map(|(a, ya)| x.iter().zip(y).map(|(b, yb)| ya * yb * k.eval(a, b)).collect()).collect()
}

fn dual(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let quad: f64 = q.iter().zip(a).map(|(row, ai)| ai * row.iter().zip(a).map(|(v, aj)| v * aj).sum::<f64>()).sum();
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, y'a = 0}` by bisection on the
/// equality multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let g = |nu: f64| -> f64 { at(nu).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // g is nonincreasing in nu
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient ascent with restarts.
pub fn fista_dual(q: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> f64 {
    let n = y.len();
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max).max(1e-12);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n).map(|i| 1.0 - q[i].iter().zip(a).map(|(v, aj)| v * aj).sum::<f64>()).collect()
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut best = dual(q, &a);
    for _ in 0..iters {
        let gz = grad(&z);
        let target: Vec<f64> = z.iter().zip(&gz).map(|(zi, gi)| zi + step * gi).collect();
        let next = project(&target, y, c);
        let obj = dual(q, &next);
        if obj < dual(q, &a) {
            // restart momentum
            t = 1.0;
            z = a.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next.iter().zip(&a).map(|(ni, ai)| ni + (t - 1.0) / t_next * (ni - ai)).collect();
        a = next;
        t = t_next;
        best = best.max(obj);
    }
    best
}

fn solve_linear(m: &mut [Vec<f64>], rhs: &mut [f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..n {
                    m[r][k] -= f * m[col][k];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / m[i][i]).collect())
}

/// Maximum over every assignment of each multiplier to {0, C, free} whose
/// stationary point is feasible. Exact for non-degenerate faces.
pub fn enumerate_dual(q: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let mut best = f64::NEG_INFINITY;
    let combos = 3usize.pow(n as u32);
    for code in 0..combos {
        let mut state = vec![0u8; n];
        let mut k = code;
        for s in state.iter_mut() {
            *s = (k % 3) as u8;
            k /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut a: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            // [Q_FF y_F; y_F' 0] [a_F; b] = [1 - Q_FB a_B; -y_B' a_B]
            let m = free.len();
            let mut mat = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    mat[r][s] = q[i][j];
                }
                mat[r][m] = y[i];
                mat[m][r] = y[i];
                rhs[r] = 1.0 - (0..n).filter(|j| state[*j] == 1).map(|j| q[i][j] * c).sum::<f64>();
            }
            rhs[m] = -(0..n).filter(|j| state[*j] == 1).map(|j| y[j] * c).sum::<f64>();
            let Some(sol) = solve_linear(&mut mat, &mut rhs) else { continue };
            if sol[..m].iter().any(|v| *v < -1e-9 || *v > c + 1e-9) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r].clamp(0.0, c);
            }
        }
        if a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>().abs() > 1e-9 {
            continue;
        }
        best = best.max(dual(q, &a));
    }
    best
}

/// Random small binary problems; the library's dual objective is compared
/// with the best brute-force value.
pub fn svm_oracle_datasets(seed: u64, count: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..count {
        let n = rng.random_range(4..=30);
        let d = rng.random_range(1..=4);
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let shift = rng.random_range(0.0..2.0);
        let x: Vec<Vec<f64>> =
            y.iter().map(|yi| (0..d).map(|_| rng.random_range(-1.0..1.0) + shift * yi).collect()).collect();
        let hp = match case % 3 {
            0 => SvmHyperParams::linear([0.1, 1.0, 10.0][case % 9 / 3]),
            1 => SvmHyperParams { kernel: Kernel::Rbf { gamma: 0.5 }, c: 1.0 },
            _ => SvmHyperParams { kernel: Kernel::Poly { gamma: 0.5, degree: 2 }, c: 1.0 },
        };
        let refs: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let sol = svm::solve_binary(&refs, &y, &hp, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let q = gram(&x, &y, &hp.kernel);
        let mut want = fista_dual(&q, &y, hp.c, 20_000);
        if n <= 8 {
            want = want.max(enumerate_dual(&q, &y, hp.c));
        }
        let gap = (sol.objective - want).abs();
        worst = worst.max(gap);
        if gap > 1e-4 {
            return Err(format!("case {case} (n={n}, {}): solver {} vs oracle {want}", hp.label(), sol.objective));
        }
    }
    Ok(worst)
}

/// Training accuracies on the XOR square: (linear C=1, rbf gamma=1 C=1000).
pub fn xor_accuracies() -> (f64, f64) {
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let y = [1.0, 1.0, -1.0, -1.0];
    let acc = |hp: SvmHyperParams| {
        let m = svm::train_binary_svm(&x, &y, &hp, &SolverOptions::default()).expect("xor trains");
        x.iter().zip(&y).filter(|(r, t)| m.predict(r) == **t).count() as f64 / 4.0
    };
    (acc(SvmHyperParams::linear(1.0)), acc(SvmHyperParams { kernel: Kernel::Rbf { gamma: 1.0 }, c: 1000.0 }))
}
