//! Generators, property checks and independent oracles shared by the
//! integration tests and the acceptance binary.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use proptest::prelude::*;

use itrash_core::analytics::TemporalStats;
use itrash_core::controller::{step, ControllerConfig, ControllerEvent, ControllerState, SideEffect};
use itrash_core::domain::{BinColor, ClassificationOutcome, DisposalRecord, NgoId};
use itrash_core::ledger::{Address, Ledger, LedgerError, LedgerPort, Tokens};

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 8, 0, 0).unwrap()
}

// ---------------------------------------------------------------- reference data

/// Ordinary trashcan, rows real bin, columns thrown bin (blue, yellow, brown).
pub const CONTROL_THROWN_VS_REAL: [[u64; 3]; 3] = [[11, 10, 15], [6, 22, 7], [6, 3, 9]];
/// Smart trashcan, rows real bin, columns predicted bin.
pub const ITRASH_PREDICTED_VS_REAL: [[u64; 3]; 3] = [[11, 2, 4], [3, 30, 3], [0, 0, 14]];
/// Smart trashcan, correctly predicted items only; rows predicted, columns thrown.
pub const ITRASH_CORRECT_VS_THROWN: [[u64; 3]; 3] = [[9, 0, 2], [7, 20, 3], [3, 2, 9]];

// ------------------------------------------------------------ controller

pub fn color() -> impl Strategy<Value = BinColor> {
    prop_oneof![Just(BinColor::Blue), Just(BinColor::Yellow), Just(BinColor::Brown)]
}

/// An event kind without its timestamp; ticks are added by the driver.
#[derive(Debug, Clone)]
pub enum Input {
    Main,
    Image(Vec<u8>),
    Classified(ClassificationOutcome),
    Bin(BinColor),
    Qr(String),
    Ngo(u32),
    Tick,
}

fn input() -> impl Strategy<Value = Input> {
    prop_oneof![
        2 => Just(Input::Main),
        2 => prop::collection::vec(any::<u8>(), 0..4).prop_map(Input::Image),
        2 => prop_oneof![
            color().prop_map(ClassificationOutcome::Valid),
            Just(ClassificationOutcome::Invalid)
        ]
        .prop_map(Input::Classified),
        2 => color().prop_map(Input::Bin),
        1 => prop_oneof![
            Just("itrash://wallet/rUser1".to_string()),
            Just("http://evil".to_string()),
            Just(String::new())
        ]
        .prop_map(Input::Qr),
        1 => (1u32..=4).prop_map(Input::Ngo),
        4 => Just(Input::Tick),
    ]
}

/// Events with non-decreasing times: gaps of 0..20 s on a 100 ms grid.
pub fn event_sequence() -> impl Strategy<Value = Vec<(i64, Input)>> {
    prop::collection::vec((0i64..200, input()), 1..40)
}

fn to_event(input: &Input, now: DateTime<Utc>) -> ControllerEvent {
    match input {
        Input::Main => ControllerEvent::MainProximityTriggered,
        Input::Image(b) => ControllerEvent::ImageCaptured(b.clone()),
        Input::Classified(c) => ControllerEvent::Classified(*c),
        Input::Bin(c) => ControllerEvent::BinSensorTriggered(*c),
        Input::Qr(s) => ControllerEvent::QrScanned(s.clone()),
        Input::Ngo(n) => ControllerEvent::NgoSelected(NgoId::new(*n).unwrap()),
        Input::Tick => ControllerEvent::Tick(now),
    }
}

/// Drives `step` over a sequence and checks the safety properties after
/// every transition, then the liveness bound with ticks only.
pub fn check_fsm_sequence(seq: &[(i64, Input)], config: &ControllerConfig) -> Result<(), String> {
    let mut state = ControllerState::Idle;
    let mut now = t0();
    let mut persisted: HashMap<String, usize> = HashMap::new();
    let mut rewarded: HashMap<String, usize> = HashMap::new();
    for (gap, inp) in seq {
        now += Duration::milliseconds(gap * 100);
        let before = state.clone();
        let (next, effects) = step(state, &to_event(inp, now), config, now);
        for e in &effects {
            match e {
                SideEffect::PersistRecord(r) => {
                    let n = persisted.entry(r.record_id().to_string()).or_default();
                    *n += 1;
                    if *n > 1 {
                        return Err(format!("record {} persisted twice", r.record_id()));
                    }
                }
                SideEffect::IssueReward { memo, .. } => {
                    let session = before
                        .session()
                        .ok_or_else(|| format!("reward issued from {}", before.name()))?;
                    let matched = session.thrown.is_some() && session.thrown == session.predicted;
                    if !matched {
                        return Err(format!(
                            "reward without matching disposal: predicted {:?} thrown {:?}",
                            session.predicted, session.thrown
                        ));
                    }
                    if memo != &session.record_id {
                        return Err("reward memo differs from the session id".into());
                    }
                    let n = rewarded.entry(memo.clone()).or_default();
                    *n += 1;
                    if *n > 1 {
                        return Err(format!("session {memo} rewarded twice"));
                    }
                }
                _ => {}
            }
        }
        // every reward is paired with a persisted correct record
        let rewards = effects.iter().filter(|e| matches!(e, SideEffect::IssueReward { .. })).count();
        let correct_records = effects
            .iter()
            .filter(|e| matches!(e, SideEffect::PersistRecord(r) if r.outcome().is_correct()))
            .count();
        if rewards > correct_records {
            return Err("reward without a correct record".into());
        }
        state = next;
    }
    // liveness: only ticks from here on
    let deadline = now + config.liveness_bound() + Duration::milliseconds(100);
    while !state.is_idle() {
        now += Duration::milliseconds(100);
        if now > deadline {
            return Err(format!("still in {} after the liveness bound", state.name()));
        }
        state = step(state, &ControllerEvent::Tick(now), config, now).0;
    }
    Ok(())
}

// ---------------------------------------------------------------- ledger

#[derive(Debug, Clone)]
pub enum LedgerOp {
    Create,
    Transfer {
        from: usize,
        to: usize,
        drops: u64,
        memo: Option<u8>,
    },
}

pub fn ledger_ops() -> impl Strategy<Value = Vec<LedgerOp>> {
    let op = prop_oneof![
        1 => Just(LedgerOp::Create),
        8 => (0usize..8, 0usize..8, prop_oneof![0u64..50_000, 0u64..200_000_000], prop::option::of(0u8..12))
            .prop_map(|(from, to, drops, memo)| LedgerOp::Transfer { from, to, drops, memo }),
    ];
    prop::collection::vec(op, 1..60)
}

/// Applies random operations to a bootstrapped ledger and checks
/// conservation, replay equality and the memo guard.
pub fn check_ledger_ops(ops: &[LedgerOp]) -> Result<(), String> {
    let mut ledger = Ledger::bootstrap(Tokens::whole(100));
    let supply = ledger.total_supply();
    let mut used_memos = std::collections::HashSet::new();
    let mut extra = 0;
    for op in ops {
        let addrs: Vec<Address> = ledger.wallets().map(|w| w.address.clone()).collect();
        match op {
            LedgerOp::Create => {
                extra += 1;
                ledger
                    .create_wallet(&format!("user_{extra}"), Tokens::ZERO)
                    .map_err(|e| e.to_string())?;
            }
            LedgerOp::Transfer { from, to, drops, memo } => {
                let from = &addrs[from % addrs.len()];
                let to = &addrs[to % addrs.len()];
                let memo = memo.map(|m| format!("session-{m}"));
                let before = ledger.balances();
                let log_len = ledger.transfers().len();
                let result = ledger.transfer(from, to, Tokens::from_drops(*drops), memo.as_deref(), t0());
                match &result {
                    Ok(_) => {
                        if let Some(m) = &memo {
                            if !used_memos.insert(m.clone()) {
                                return Err(format!("memo {m} accepted twice"));
                            }
                        }
                    }
                    Err(e) => {
                        if ledger.balances() != before || ledger.transfers().len() != log_len {
                            return Err(format!("failed transfer changed state: {e}"));
                        }
                    }
                }
            }
        }
        if ledger.total_supply() != supply {
            return Err(format!("supply changed: {} -> {}", supply, ledger.total_supply()));
        }
    }
    let replayed = ledger.replay_balances().map_err(|e| e.to_string())?;
    if replayed != ledger.balances() {
        return Err("log replay disagrees with live balances".into());
    }
    // a used memo is rejected even for an otherwise valid transfer
    let sys = ledger.address_of("itrash").map_err(|e| e.to_string())?;
    let ngo = ledger.address_of("ngo_1").map_err(|e| e.to_string())?;
    if let Some(m) = used_memos.iter().next() {
        if ledger.balance(&sys).unwrap() >= Tokens::from_drops(1) {
            match ledger.transfer(&sys, &ngo, Tokens::from_drops(1), Some(m), t0()) {
                Err(LedgerError::DuplicateMemo(_)) => {}
                other => return Err(format!("reused memo not rejected: {other:?}")),
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------- temporal oracle

/// Percentile read off the piecewise-linear curve through the points
/// (i / (n - 1), x_i) of the sorted data, by scanning segments.
pub fn oracle_percentile(values: &[f64], p: f64) -> f64 {
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return xs[0];
    }
    let step = 1.0 / (n - 1) as f64;
    for i in 0..n - 1 {
        let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
        if p >= a && p <= b + 1e-15 {
            let t = ((p - a) / step).min(1.0);
            return xs[i] * (1.0 - t) + xs[i + 1] * t;
        }
    }
    xs[n - 1]
}

/// Per-day counts by (slot, color) recomputed from records directly.
pub fn oracle_counts(
    records: &[DisposalRecord],
    slot_minutes: u32,
    days: usize,
) -> BTreeMap<(u32, usize), Vec<f64>> {
    let first = records.iter().filter(|r| r.bin_thrown().is_some()).map(|r| r.time().date_naive()).min();
    let mut out = BTreeMap::new();
    for slot in 0..(24 * 60 / slot_minutes) {
        for c in 0..3 {
            out.insert((slot, c), vec![0.0; days]);
        }
    }
    let Some(first) = first else { return out };
    for r in records {
        let Some(thrown) = r.bin_thrown() else { continue };
        let day = (r.time().date_naive() - first).num_days() as usize;
        if day >= days {
            continue;
        }
        let slot = (r.time().hour() * 60 + r.time().minute()) / slot_minutes;
        out.get_mut(&(slot, thrown.index())).unwrap()[day] += 1.0;
    }
    out
}

/// Compares every per-color box statistic against the oracle.
pub fn check_temporal(
    records: &[DisposalRecord],
    stats: &[TemporalStats],
    slot_minutes: u32,
    days: usize,
    tol: f64,
) -> Result<(), String> {
    let counts = oracle_counts(records, slot_minutes, days);
    for (i, s) in stats.iter().enumerate() {
        for c in BinColor::ALL {
            let xs = &counts[&(i as u32, c.index())];
            let b = s.color(c);
            let q1 = oracle_percentile(xs, 0.25);
            let q2 = oracle_percentile(xs, 0.5);
            let q3 = oracle_percentile(xs, 0.75);
            let iqr = q3 - q1;
            let lo = xs.iter().copied().filter(|v| *v >= q1 - 1.5 * iqr).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().filter(|v| *v <= q3 + 1.5 * iqr).fold(f64::NEG_INFINITY, f64::max);
            let outliers = xs.iter().filter(|v| **v < q1 - 1.5 * iqr || **v > q3 + 1.5 * iqr).count();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let checks = [
                ("q1", b.q1, q1),
                ("median", b.median, q2),
                ("q3", b.q3, q3),
                ("iqr", b.iqr, iqr),
                ("whisker_low", b.whisker_low, lo),
                ("whisker_high", b.whisker_high, hi),
                ("mean", b.mean, mean),
            ];
            for (name, got, want) in checks {
                if (got - want).abs() > tol {
                    return Err(format!("slot {i} {c} {name}: {got} vs oracle {want}"));
                }
            }
            if b.outliers.len() != outliers {
                return Err(format!("slot {i} {c}: {} outliers vs oracle {outliers}", b.outliers.len()));
            }
        }
    }
    Ok(())
}
