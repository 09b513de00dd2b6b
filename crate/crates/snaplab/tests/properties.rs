//! Invariants over randomly generated scripts and schedules.

use proptest::prelude::*;
use snaplab::checker::{check, Suite};
use snaplab::event::{check_interval_order, check_subevent_rb, returns_before, subevent};
use snaplab::harness::{analyse, run_random, stress_script};
use snaplab::linearizer::{brute_force_linearize, completed_set, linearize, OracleResult};
use snaplab::visibility::Visibility;
use snaplab::{Algorithm, History, Kind};

fn algorithm() -> impl Strategy<Value = Algorithm> {
    prop::sample::select(Algorithm::ALL.to_vec())
}

/// A random valid script and one random schedule of it.
fn history() -> impl Strategy<Value = History> {
    (algorithm(), 1usize..=2, 2usize..=3, 1usize..=2, any::<u64>(), any::<u64>()).prop_map(
        |(alg, n, threads, ops, seed, sample)| {
            let script = stress_script(alg, n, threads, ops, seed, 0);
            run_random(alg, n, &vec![0; n], &script, seed, sample).expect("valid script runs")
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn structure_holds(h in history()) {
        prop_assert!(check_interval_order(&h).is_empty());
        prop_assert!(check_subevent_rb(&h).is_empty());
        for e in &h.events {
            if e.kind == Kind::Rep {
                let p = h.event(e.parent.expect("rep events have parents"));
                prop_assert!(subevent(e, p));
            }
        }
    }

    #[test]
    fn returns_before_is_a_strict_order(h in history()) {
        let evs = &h.events;
        for a in evs {
            prop_assert!(!returns_before(a, a));
            for b in evs {
                if !returns_before(a, b) {
                    continue;
                }
                for c in evs {
                    if returns_before(b, c) {
                        prop_assert!(returns_before(a, c));
                    }
                }
            }
        }
    }

    /// Correct algorithms satisfy every applicable suite; the naive scan at
    /// least keeps its registers honest.
    #[test]
    fn correct_algorithms_pass_every_suite(h in history()) {
        let alg: Algorithm = h.meta.algorithm.parse().unwrap();
        let r = check(&h, &Suite::ALL).unwrap();
        if alg == Algorithm::Naive {
            for s in [Suite::Rb, Suite::M, Suite::Chain] {
                prop_assert!(r.suite(s).unwrap().pass, "{}", r.to_json_pretty());
            }
        } else {
            prop_assert!(r.passed(), "{}", r.to_json_pretty());
        }
    }

    #[test]
    fn rep_happens_before_is_acyclic(h in history()) {
        let v = Visibility::new(&h).unwrap();
        prop_assert!(v.rep.reach().is_acyclic());
    }

    #[test]
    fn virtual_scans_lie_inside_their_scans(h in history()) {
        prop_assume!(h.abs_scans().any(|s| s.terminated()));
        let v = Visibility::new(&h).unwrap();
        let alg: Algorithm = h.meta.algorithm.parse().unwrap();
        for (&s, &k) in &v.sigma_of {
            let sg = &v.sigmas[k];
            // another operation's virtual scan may serve, but inside s
            prop_assert!(subevent(&sg.span, h.event(s)));
            if matches!(alg, Algorithm::Naive | Algorithm::Jayanti1 | Algorithm::Jayanti2) {
                let e = h.event(s);
                prop_assert_eq!(sg.owner, Some(s));
                prop_assert_eq!(sg.span, (e.start, e.end));
            }
        }
    }

    /// The constructive order and brute-force search agree, and the order
    /// extends returns-before on the completed operations.
    #[test]
    fn linearizer_agrees_with_oracle(h in history()) {
        let v = Visibility::new(&h).unwrap();
        let ours = linearize(&v);
        match brute_force_linearize(&h, 9) {
            OracleResult::Linearizable(l) => {
                prop_assert!(l.legal);
                let lin = ours.as_ref().expect("oracle found an order");
                prop_assert!(lin.legal);
            }
            OracleResult::NotLinearizable { .. } => prop_assert!(ours.map_or(true, |l| !l.legal)),
            OracleResult::SizeGuard { .. } => {}
        }
        if let Ok(lin) = linearize(&v) {
            let pos = |e| lin.order.iter().position(|&x| x == e).unwrap();
            let ec = completed_set(&v);
            for &a in &ec {
                for &b in &ec {
                    if returns_before(h.event(a), h.event(b)) {
                        prop_assert!(pos(a) < pos(b));
                    }
                }
            }
        }
    }

    /// Checking is a pure function of the history, and histories survive a
    /// JSON round trip unchanged.
    #[test]
    fn checks_are_deterministic_across_round_trip(h in history()) {
        let json = h.to_json();
        let back = History::from_json(&json).unwrap();
        prop_assert_eq!(&back, &h);
        let a = analyse(h, 0, &Suite::ALL, Some(8)).unwrap();
        let b = analyse(back, 0, &Suite::ALL, Some(8)).unwrap();
        prop_assert_eq!(a.report.to_json_pretty(), b.report.to_json_pretty());
        prop_assert_eq!(a.linearization, b.linearization);
    }
}
