//! The two textbook executions, checked event by event.

use std::collections::{BTreeMap, BTreeSet};

use snaplab::checker::{check, Suite};
use snaplab::harness::{explore, repro, run_fixed, ExploreConfig, Mode, Scenario};
use snaplab::linearizer::{brute_force_linearize, completed_set, linearize, pick_maximal_candidate, write_order, OracleResult};
use snaplab::visibility::Visibility;
use snaplab::{Algorithm, EventId, History, Op, OpScript, Val};

fn write_with(h: &History, cell: i64, value: i64) -> EventId {
    h.abs_writes().find(|e| e.input == Val::ints(&[cell, value])).expect("write present").id
}

fn scan(h: &History) -> EventId {
    h.abs_scans().next().expect("scan present").id
}

#[test]
fn naive_scan_returns_a_state_that_never_existed() {
    let h = repro(Scenario::Naive03).unwrap();
    assert_eq!(h.event(scan(&h)).output, Some(Val::ints(&[0, 3])));
    assert!(matches!(brute_force_linearize(&h, 10), OracleResult::NotLinearizable { .. }));
    let report = check(&h, &Suite::ALL).unwrap();
    assert!(!report.passed(), "some suite must reject the naive history");
    assert!(report.suite(Suite::S).is_some_and(|s| !s.pass));
}

#[test]
fn forwarded_scan_returns_forwarded_value() {
    let h = repro(Scenario::Jayanti1Forwarded).unwrap();
    assert_eq!(h.event(scan(&h)).output, Some(Val::ints(&[2, 4])));
    let report = check(&h, &Suite::ALL).unwrap();
    assert!(report.passed(), "{}", report.to_json_pretty());
}

#[test]
fn forwarded_scan_visibility() {
    let h = repro(Scenario::Jayanti1Forwarded).unwrap();
    let v = Visibility::new(&h).unwrap();
    let (w0, w0b, w1, s) = (write_with(&h, 0, 2), write_with(&h, 0, 3), write_with(&h, 1, 4), scan(&h));
    // w0 reaches the scan only by forwarding, w1 directly
    assert!(v.fwd.iter().any(|&(w, sg)| w == w0 && v.sigmas[sg].owner == Some(s)));
    assert!(!v.fwd.iter().any(|&(w, _)| w == w1));
    let sl = v.s_level();
    assert!(sl.rf.contains(&(w0, s)));
    assert!(sl.rf.contains(&(w1, s)));
    assert!(!sl.rf.contains(&(w0b, s)));
    // effectful writes besides the initial ones
    let effectful: BTreeSet<EventId> =
        v.writes.iter().filter(|w| !w.init && w.wa.is_some()).map(|w| w.id).collect();
    assert_eq!(effectful, BTreeSet::from([w0, w0b, w1]));
}

#[test]
fn forwarded_scan_linearization() {
    let h = repro(Scenario::Jayanti1Forwarded).unwrap();
    let v = Visibility::new(&h).unwrap();
    let (w0, w0b, w1, s) = (write_with(&h, 0, 2), write_with(&h, 0, 3), write_with(&h, 1, 4), scan(&h));
    let i0 = write_with(&h, 0, 0);
    let i1 = write_with(&h, 1, 0);

    let wo = write_order(&v).unwrap();
    assert_eq!(wo.order, vec![i0, i1, w0, w1, w0b]);

    // w'0 is <w-greatest and unobserved, so it is removed first
    let rank: BTreeMap<EventId, usize> = wo.order.iter().enumerate().map(|(k, w)| (*w, k)).collect();
    let all: BTreeSet<EventId> = completed_set(&v).into_iter().collect();
    assert_eq!(pick_maximal_candidate(&v, &rank, &all), Some(w0b));

    let lin = linearize(&v).unwrap();
    assert!(lin.legal);
    assert_eq!(lin.order, vec![i0, i1, w0, w1, s, w0b]);
    let scan_step = lin.replay.iter().find(|r| r.event == s).unwrap();
    assert_eq!(scan_step.array, vec![2, 4]);
}

#[test]
fn fixed_mode_reproduces_the_scenario_exactly() {
    let sc = Scenario::Jayanti1Forwarded;
    let mut cfg = ExploreConfig::new(sc.algorithm(), 2, sc.script(), Mode::Fixed(sc.schedule()));
    cfg.suites = Suite::ALL.to_vec();
    let mut runs = Vec::new();
    let summary = explore(&cfg, &mut |r| runs.push(r.history.clone())).unwrap();
    assert_eq!(summary.histories, 1);
    assert!(summary.clean());
    assert_eq!(runs[0].to_json(), repro(sc).unwrap().to_json());
}

#[test]
fn naive_exhaustive_exposes_non_linearizable_history() {
    let sc = Scenario::Naive03;
    let mut cfg = ExploreConfig::new(Algorithm::Naive, 2, sc.script(), Mode::Exhaustive { cap: 10_000 });
    cfg.oracle = true;
    let summary = explore(&cfg, &mut |_| {}).unwrap();
    assert!(summary.oracle_not_linearizable >= 1);
    assert_eq!(summary.oracle_disagreements, 0, "linearize must fail exactly where the oracle does");
}

#[test]
fn jayanti1_single_cell_exhaustive_passes() {
    let script = OpScript::new(vec![vec![Op::Write(0, 2)], vec![Op::Scan]]);
    let mut cfg = ExploreConfig::new(Algorithm::Jayanti1, 1, script, Mode::Exhaustive { cap: 10_000 });
    cfg.suites = vec![Suite::Rb, Suite::M, Suite::F, Suite::S, Suite::Chain];
    cfg.oracle = true;
    let summary = explore(&cfg, &mut |_| {}).unwrap();
    assert!(summary.histories > 1);
    assert!(summary.clean(), "{summary:?}");
}

#[test]
fn partial_schedule_leaves_pending_operations() {
    let sc = Scenario::Jayanti1Forwarded;
    let prefix = &sc.schedule()[..6];
    let h = run_fixed(sc.algorithm(), 2, &[0, 0], &sc.script(), prefix).unwrap();
    assert!(h.abs_scans().all(|s| !s.terminated()));
    let report = check(&h, &Suite::ALL).unwrap();
    assert!(report.passed(), "{}", report.to_json_pretty());
    assert!(linearize(&Visibility::new(&h).unwrap()).unwrap().legal);
}
