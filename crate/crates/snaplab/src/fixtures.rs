//! Hand-corrupted histories, one per class of recording fault the checker
//! must catch. Each fixture starts from a clean simulated history and applies
//! one minimal edit.

use crate::algorithms::{Algorithm, Op, OpScript, REG_X};
use crate::checker::Suite;
use crate::event::{EventId, History, Kind, Val};
use crate::harness::{repro, run_fixed, Scenario};

/// A corrupted history and the axiom that must flag it.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    /// The suite `expected` belongs to.
    pub suite: Suite,
    pub expected: &'static str,
    /// The uncorrupted history the edit was applied to.
    pub clean: History,
    pub history: History,
}

/// Two writers and the scanner on one cell; the second writer's forwarding
/// attempts validate against a link to X it took while the scan was on.
const J2_SCHEDULE: [usize; 15] = [0, 0, 2, 2, 2, 1, 1, 2, 2, 1, 1, 1, 1, 1, 1];

fn j2_script() -> OpScript {
    OpScript::new(vec![vec![Op::Write(0, 2)], vec![Op::Write(0, 3)], vec![Op::Scan]])
}

fn forwarded_scenario() -> History {
    repro(Scenario::Jayanti1Forwarded).expect("scenario replays")
}

fn j2_history() -> History {
    run_fixed(Algorithm::Jayanti2, 1, &[0], &j2_script(), &J2_SCHEDULE).expect("schedule replays")
}

fn find(h: &History, pred: impl Fn(&crate::event::Event) -> bool) -> EventId {
    h.events.iter().find(|e| pred(e)).map(|e| e.id).expect("fixture anchor event exists")
}

fn top_scan(h: &History) -> EventId {
    find(h, |e| e.is_top_abs() && e.op == "scan")
}

fn child(h: &History, parent: EventId, label: &str) -> EventId {
    find(h, |e| e.parent == Some(parent) && e.label == label)
}

/// A second rf edge into a read that already observes a write.
pub fn duplicate_rf() -> Fixture {
    let clean = forwarded_scenario();
    let mut h = clean.clone();
    let s = top_scan(&h);
    let a1 = child(&h, s, "a[1]");
    // a[1] observes w1; add the overwritten initial write of A[1] as well
    let init = find(&h, |e| e.is_top_abs() && e.label == "init" && e.input == Val::ints(&[1, 0]));
    let wa = child(&h, init, "wa");
    h.rf.push((wa, a1));
    h.rf.sort();
    Fixture { name: "duplicate rf into one read", suite: Suite::M, expected: "M.robsuniq", clean, history: h }
}

/// A VL linked to an LL executed by a different operation.
pub fn ll_across_parents() -> Fixture {
    let clean = j2_history();
    let mut h = clean.clone();
    let writes: Vec<EventId> = h.abs_writes().filter(|e| e.label != "init").map(|e| e.id).collect();
    let (first, second) = (writes[0], writes[1]);
    let foreign = child(&h, first, "wx");
    let vl = child(&h, second, "f1.fx");
    for edge in h.ll.iter_mut().filter(|(_, c)| *c == vl) {
        edge.0 = foreign;
    }
    h.ll.sort();
    Fixture { name: "ll edge across parents", suite: Suite::MPlus, expected: "M+.llobsparent", clean, history: h }
}

/// The scan's `b[0]` read keeps its forwarded value but loses the rf edge
/// from the forwarding write.
pub fn removed_forward() -> Fixture {
    let clean = forwarded_scenario();
    let mut h = clean.clone();
    let s = top_scan(&h);
    let b0 = child(&h, s, "b[0]");
    h.rf.retain(|&(_, r)| r != b0);
    Fixture { name: "removed fwd edge with non-bottom B read", suite: Suite::F, expected: "F.4b", clean, history: h }
}

/// A VL that failed is recorded as succeeding although X changed since
/// its LL.
pub fn sc_without_version() -> Fixture {
    let clean = j2_history();
    let mut h = clean.clone();
    let id = find(&h, |e| {
        e.kind == Kind::Rep && e.op == "vl" && e.object.as_deref() == Some(REG_X) && e.output == Some(Val::Bool(false))
    });
    h.events[id.ix()].output = Some(Val::Bool(true));
    Fixture {
        name: "SC/VL success without matching version",
        suite: Suite::MPlus,
        expected: "M+.llsc-success",
        clean,
        history: h,
    }
}

/// The scan's output disagrees with what its reads returned.
pub fn scan_output_mismatch() -> Fixture {
    let clean = forwarded_scenario();
    let mut h = clean.clone();
    let s = top_scan(&h);
    h.events[s.ix()].output = Some(Val::ints(&[2, 3]));
    Fixture { name: "scan output mismatch", suite: Suite::S, expected: "S.1", clean, history: h }
}

/// A read observing a write that only starts after the read returned.
pub fn fabricated_cycle() -> Fixture {
    let clean = forwarded_scenario();
    let mut h = clean.clone();
    let s = top_scan(&h);
    let a0 = child(&h, s, "a[0]");
    // the scan reads 0 from the initial write; w'0 is later
    let w0b = find(&h, |e| e.is_top_abs() && e.input == Val::ints(&[0, 3]));
    let wa = child(&h, w0b, "wa");
    h.events[a0.ix()].output = Some(Val::Int(3));
    for edge in h.rf.iter_mut().filter(|(_, r)| *r == a0) {
        edge.0 = wa;
    }
    h.rf.sort();
    Fixture { name: "fabricated hb cycle", suite: Suite::M, expected: "V.1", clean, history: h }
}

pub fn all() -> Vec<Fixture> {
    vec![
        duplicate_rf(),
        ll_across_parents(),
        removed_forward(),
        sc_without_version(),
        scan_output_mismatch(),
        fabricated_cycle(),
    ]
}
