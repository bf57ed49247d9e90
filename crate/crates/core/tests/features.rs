use std::collections::BTreeMap;

use lobsim::eventlog::EventLog;
use lobsim::features::{
    build_dataset, split_dataset, ActivityIndex, Dataset, FeatureWindows, MergeMap, MergeMode, Scaler, BASIC_COUNT,
    FEATURE_NAMES,
};
use lobsim::scenario::{run_batch, Scenario};
use proptest::prelude::*;

fn batch(runs: u32, horizon: f64, seed: u64) -> (Scenario, Vec<EventLog>) {
    let s = Scenario::canonical().with_horizon(horizon);
    let logs = run_batch(&s, runs, seed).unwrap();
    (s, logs)
}

fn agents(log: &EventLog) -> Vec<(u32, u8)> {
    log.agents.iter().map(|a| (a.agent_id, a.class_id)).collect()
}

fn dataset(s: &Scenario, logs: &[EventLog], mode: MergeMode) -> Dataset {
    let map = MergeMap::build(&agents(&logs[0]), mode, 3).unwrap();
    build_dataset(logs, &map, &s.event_times(), &FeatureWindows::for_horizon(s.horizon))
}

fn col(name: &str) -> usize {
    FEATURE_NAMES.iter().position(|n| *n == name).unwrap()
}

fn class_mean(ds: &Dataset, classes: &[u8], feature: usize) -> f64 {
    let v: Vec<f64> =
        ds.labels.iter().zip(&ds.x).filter(|(l, _)| classes.contains(l)).map(|(_, r)| r[feature]).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn extraction_is_pure_and_bounded() {
    let (s, logs) = batch(1, 12_000.0, 8);
    for mode in [MergeMode::None, MergeMode::Half, MergeMode::TwoThirds] {
        let a = dataset(&s, &logs, mode);
        let b = dataset(&s, &logs, mode);
        assert_eq!(a, b);
        let bits = |d: &Dataset| d.x.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        for row in &a.x {
            for name in ["buy_ratio", "cancel_ratio", "market_ratio"] {
                let v = row[col(name)];
                assert!((0.0..=1.0).contains(&v), "{name} = {v}");
            }
            for name in ["n_trades", "total_volume"] {
                let v = row[col(name)];
                assert!(v >= 0.0 && v.fract() == 0.0, "{name} = {v}");
            }
        }
        let basic = a.view(BASIC_COUNT).unwrap();
        for (short, full) in basic.x.iter().zip(&a.x) {
            assert_eq!(short.as_slice(), &full[..BASIC_COUNT]);
        }
    }
}

#[test]
fn merging_partitions_the_population() {
    let (_, logs) = batch(1, 6_000.0, 2);
    let all = agents(&logs[0]);
    let index = ActivityIndex::new(&logs[0]);
    let mut original: Vec<usize> = Vec::new();
    let whole: Vec<u32> = all.iter().map(|a| a.0).collect();
    for r in index.activity(&logs[0], &whole).records {
        original.push(r as *const _ as usize);
    }
    original.sort_unstable();
    for mode in [MergeMode::None, MergeMode::Half, MergeMode::TwoThirds] {
        let map = MergeMap::build(&all, mode, 17).unwrap();
        let mut members: Vec<u32> = map.samples.iter().flat_map(|s| std::iter::once(s.0).chain(s.2.iter().copied())).collect();
        members.sort_unstable();
        assert_eq!(members, whole, "{mode:?}");
        let mut merged: Vec<usize> = Vec::new();
        for (agent, _, partners) in &map.samples {
            let ids: Vec<u32> = std::iter::once(*agent).chain(partners.iter().copied()).collect();
            merged.extend(index.activity(&logs[0], &ids).records.iter().map(|r| *r as *const _ as usize));
        }
        merged.sort_unstable();
        assert_eq!(merged, original, "{mode:?}");
    }
}

#[test]
fn momentum_chartists_trade_with_the_trend() {
    let (s, logs) = batch(2, 144_000.0, 42);
    let none = dataset(&s, &logs, MergeMode::None);
    let momentum = class_mean(&none, &[11, 12], col("dtrend_short"));
    let reversion = class_mean(&none, &[13, 14], col("dtrend_short"));
    assert!(momentum > 0.0 && reversion < 0.0, "{momentum} vs {reversion}");

    let merged = dataset(&s, &logs, MergeMode::TwoThirds);
    for (label, row) in merged.labels.iter().zip(&merged.x) {
        if (4..=6).contains(label) {
            assert!(row[col("market_ratio")] < 1.0);
        }
    }
}

// The mid barely follows the fundamental, so the sign of this gap is set by
// a handful of price paths and flips between seeds.
#[test]
#[ignore = "sign depends on the seed under the canonical parameters"]
fn fundamentalists_out_earn_noise_traders() {
    let (s, logs) = batch(8, 720_000.0, 42);
    let none = dataset(&s, &logs, MergeMode::None);
    let fund = class_mean(&none, &[7, 8, 9, 10], col("fund_profit"));
    let noise = class_mean(&none, &[15], col("fund_profit"));
    assert!(fund > noise, "{fund} vs {noise}");
}

#[test]
fn canonical_split_counts() {
    let labels: Vec<u8> = std::iter::repeat_n(1u8, 800).chain(std::iter::repeat_n(2, 400)).collect();
    let split = split_dataset(&labels, (0.6, 0.1, 0.3), 9).unwrap();
    let count = |rows: &[usize]| rows.iter().filter(|&&i| labels[i] == 1).count();
    assert_eq!((count(&split.train), count(&split.val), count(&split.test)), (480, 80, 240));
    let mut by_part: BTreeMap<usize, usize> = BTreeMap::new();
    for i in split.train.iter().chain(&split.val).chain(&split.test) {
        *by_part.entry(*i).or_default() += 1;
    }
    assert_eq!(by_part.len(), labels.len());
}

proptest! {
    #[test]
    fn scaler_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 2..40)) {
        let s = Scaler::fit(&rows);
        for r in &rows {
            let back = s.inverse(&s.transform(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }
}
