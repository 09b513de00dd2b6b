//! Axiom suites evaluated by enumeration over one history.
//!
//! Every check is a direct transcription of a universally quantified property:
//! nested loops over the relevant event sets, one [`Violation`] per failing
//! instance, with the instantiated events as witnesses (in quantifier order).
//!
//! Axiom ids carry the suite prefix: `RB`/`WF` (structure), `V` (well-founded
//! observation), `M`, `M+`, `L` (registers and LL/SC lemmas), `S` (snapshot),
//! `F`, `F+` (forwarding), `A` (Afek) and `CHAIN` (implications between suites).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::algorithms::{reg_a, Algorithm, REG_X};
use crate::event::{check_interval_order, check_subevent_rb, returns_before, subevent, validate};
use crate::event::{EventId, History, Kind, Meta, Val, Violation};
use crate::linearizer::linearize;
use crate::visibility::{AbsNode, VisError, Visibility, VirtualScan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    Rb,
    M,
    MPlus,
    L,
    S,
    F,
    FPlus,
    A,
    Chain,
}

impl Suite {
    pub const ALL: [Suite; 9] =
        [Suite::Rb, Suite::M, Suite::MPlus, Suite::L, Suite::S, Suite::F, Suite::FPlus, Suite::A, Suite::Chain];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Rb => "RB",
            Suite::M => "M",
            Suite::MPlus => "M+",
            Suite::L => "L",
            Suite::S => "S",
            Suite::F => "F",
            Suite::FPlus => "F+",
            Suite::A => "A",
            Suite::Chain => "chain",
        }
    }

    /// Whether the suite describes `alg` at all.
    pub fn applies(self, alg: Algorithm) -> bool {
        use Algorithm::*;
        match self {
            Suite::Rb | Suite::M | Suite::S | Suite::Chain => true,
            Suite::MPlus | Suite::L | Suite::FPlus => matches!(alg, Jayanti2 | Jayanti3),
            Suite::F => matches!(alg, Jayanti1 | Jayanti2 | Jayanti3),
            Suite::A => alg == Afek,
        }
    }

    /// Parse a comma-separated list; `all` selects every suite.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>, String> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Suite::ALL);
            } else {
                out.insert(part.parse()?);
            }
        }
        Ok(out.into_iter().collect())
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown suite {s:?} (expected RB, M, M+, L, S, F, F+, A, chain or all)"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

impl SuiteReport {
    fn of(mut violations: Vec<Violation>) -> SuiteReport {
        violations.sort();
        violations.dedup();
        SuiteReport { pass: violations.is_empty(), violations, skipped: false }
    }

    fn skipped() -> SuiteReport {
        SuiteReport { pass: true, violations: Vec::new(), skipped: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub events: usize,
    pub rf: usize,
    pub ll: usize,
    pub virtual_scans: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub history: Meta,
    pub suites: BTreeMap<String, SuiteReport>,
    pub stats: Stats,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.values().all(|s| s.pass)
    }

    pub fn suite(&self, s: Suite) -> Option<&SuiteReport> {
        self.suites.get(s.name())
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.suites.values().flat_map(|s| &s.violations)
    }

    pub fn failed_axioms(&self) -> BTreeSet<String> {
        self.violations().map(|v| v.axiom.clone()).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Run the requested suites. Suites that do not describe the history's
/// algorithm are reported as skipped.
pub fn check(h: &History, suites: &[Suite]) -> Result<CheckReport, VisError> {
    let mut out = BTreeMap::new();
    let rb = check_structure(h);
    // index-level corruption makes every derived relation meaningless
    let broken = rb.iter().any(|v| v.axiom == "WF.id" || v.axiom == "WF.ref");
    if broken {
        for &s in suites {
            let r = if s == Suite::Rb { SuiteReport::of(rb.clone()) } else { SuiteReport::skipped() };
            out.insert(s.name().to_string(), r);
        }
        return Ok(CheckReport {
            history: h.meta.clone(),
            suites: out,
            stats: Stats { events: h.events.len(), rf: h.rf.len(), ll: h.ll.len(), virtual_scans: 0 },
        });
    }
    let v = Visibility::new(h)?;
    let mut cache: BTreeMap<Suite, SuiteReport> = BTreeMap::new();
    let run = |s: Suite, cache: &mut BTreeMap<Suite, SuiteReport>| -> SuiteReport {
        if let Some(r) = cache.get(&s) {
            return r.clone();
        }
        let r = if s == Suite::Rb {
            SuiteReport::of(rb.clone())
        } else if !s.applies(v.alg) {
            SuiteReport::skipped()
        } else {
            SuiteReport::of(match s {
                Suite::M => check_areg(&v),
                Suite::MPlus => check_llreg(&v),
                Suite::L => check_llsc_lemmas(&v),
                Suite::S => check_snapshot(&v),
                Suite::F => check_forwarding(&v),
                Suite::FPlus => check_mw_forwarding(&v),
                Suite::A => check_afek(&v),
                Suite::Rb | Suite::Chain => unreachable!(),
            })
        };
        cache.insert(s, r.clone());
        r
    };
    for &s in suites {
        if s == Suite::Chain {
            continue;
        }
        let r = run(s, &mut cache);
        out.insert(s.name().to_string(), r);
    }
    if suites.contains(&Suite::Chain) {
        let mut pass = |s: Suite| run(s, &mut cache).pass;
        let r = SuiteReport::of(check_chain(&v, &mut pass));
        out.insert(Suite::Chain.name().to_string(), r);
    }
    Ok(CheckReport {
        history: h.meta.clone(),
        suites: out,
        stats: Stats { events: h.events.len(), rf: h.rf.len(), ll: h.ll.len(), virtual_scans: v.sigmas.len() },
    })
}

/// Well-formedness plus the two returns-before properties.
pub fn check_structure(h: &History) -> Vec<Violation> {
    let mut out = validate(h);
    out.extend(check_interval_order(h));
    out.extend(check_subevent_rb(h));
    out
}

/// Rep events of one register, split by role.
#[derive(Default)]
struct Reg {
    name: String,
    writes: Vec<EventId>,
    wc: Vec<EventId>,
    reads: Vec<EventId>,
    lls: Vec<EventId>,
    scs: Vec<EventId>,
    vls: Vec<EventId>,
}

impl Reg {
    fn llsc(&self) -> bool {
        !(self.lls.is_empty() && self.scs.is_empty() && self.vls.is_empty())
    }

    fn read_like(&self) -> impl Iterator<Item = EventId> + '_ {
        self.reads.iter().chain(&self.lls).chain(&self.scs).chain(&self.vls).copied()
    }
}

fn registers(v: &Visibility) -> Vec<Reg> {
    let mut regs: BTreeMap<&str, Reg> = BTreeMap::new();
    for e in v.h.events.iter().filter(|e| e.kind == Kind::Rep) {
        let Some(obj) = e.object.as_deref() else { continue };
        let r = regs.entry(obj).or_insert_with(|| Reg { name: obj.to_string(), ..Reg::default() });
        match e.op.as_str() {
            "write" => {
                r.writes.push(e.id);
                r.wc.push(e.id);
            }
            "read" => r.reads.push(e.id),
            "ll" => r.lls.push(e.id),
            "sc" => {
                r.scs.push(e.id);
                if e.output == Some(Val::Bool(true)) {
                    r.wc.push(e.id);
                }
            }
            "vl" => r.vls.push(e.id),
            _ => {}
        }
    }
    let mut out: Vec<Reg> = regs.into_values().collect();
    for r in &mut out {
        r.wc.sort_unstable();
    }
    out
}

/// `w.in = r.out` for a write-like `w`.
fn written_value<'a>(v: &'a Visibility<'_>, w: EventId) -> &'a Val {
    &v.event(w).input
}

fn nowrbetween(v: &Visibility, axiom: &str, writers: &[EventId], reader: EventId, out: &mut Vec<Violation>) {
    for &w in &v.rep.rf_from[reader.ix()] {
        for &w2 in writers {
            if w2 != w && v.rep.hb(w, w2) && v.rep.hb(w2, reader) {
                out.push(Violation::new(axiom, vec![w, reader, w2], "a later write happens between write and read"));
            }
        }
    }
}

fn wrtotal(v: &Visibility, axiom: &str, writers: &[EventId], out: &mut Vec<Violation>) {
    for (k, &w) in writers.iter().enumerate() {
        for &w2 in &writers[k + 1..] {
            if !v.rep.hb(w, w2) && !v.rep.hb(w2, w) {
                out.push(Violation::new(axiom, vec![w, w2], "writes are not ordered by happens-before"));
            }
        }
    }
}

fn robsuniq(v: &Visibility, axiom: &str, reader: EventId, out: &mut Vec<Violation>) {
    let ws = &v.rep.rf_from[reader.ix()];
    if ws.len() > 1 {
        let mut wit = ws.clone();
        wit.push(reader);
        out.push(Violation::new(axiom, wit, "read observes more than one write"));
    }
}

/// Atomic-register axioms on every register without LL/SC/VL, plus the
/// well-founded observation property over all rep events.
pub fn check_areg(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    let h = v.h;
    for (e, e2) in v.rep.prec().late_ancestors(|x| {
        let ev = h.event(EventId(x));
        (ev.start, ev.end)
    }) {
        out.push(Violation::new(
            "V.1",
            vec![EventId(e), EventId(e2)],
            "an event is visible to something that returned before it",
        ));
    }
    for reg in registers(v).iter().filter(|r| !r.llsc()) {
        for &r in &reg.reads {
            let ev = v.event(r);
            if ev.terminated() {
                let ws = &v.rep.rf_from[r.ix()];
                let ok = ws.iter().any(|&w| v.event(w).op == "write" && Some(written_value(v, w)) == ev.output.as_ref());
                if !ok {
                    let mut wit = ws.clone();
                    wit.insert(0, r);
                    out.push(Violation::new("M.io", wit, format!("read of {} observes no write of its value", reg.name)));
                }
            }
            nowrbetween(v, "M.nowrbetween", &reg.writes, r, &mut out);
            robsuniq(v, "M.robsuniq", r, &mut out);
        }
        wrtotal(v, "M.wrtotal", &reg.writes, &mut out);
    }
    out
}

/// LL/SC-register axioms on every register with LL/SC/VL events.
pub fn check_llreg(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    for reg in registers(v).iter().filter(|r| r.llsc()) {
        let wc: BTreeSet<EventId> = reg.wc.iter().copied().collect();
        for r in reg.read_like() {
            let ev = v.event(r);
            let ws = &v.rep.rf_from[r.ix()];
            if ev.terminated() && !ws.iter().any(|w| wc.contains(w)) {
                out.push(Violation::new("M+.robspop", vec![r], format!("{} event observes no write-like event", ev.op)));
            }
            if ev.terminated() && matches!(ev.op.as_str(), "read" | "ll") {
                for &w in ws {
                    if Some(written_value(v, w)) != ev.output.as_ref() {
                        out.push(Violation::new("M+.io", vec![w, r], "observed value differs from the value written"));
                    }
                }
            }
            if ev.terminated() && matches!(ev.op.as_str(), "sc" | "vl") && ev.output.as_ref().and_then(Val::as_bool).is_none() {
                out.push(Violation::new("M+.vl-io", vec![r], "SC/VL output is not a boolean"));
            }
            nowrbetween(v, "M+.nowrbetween", &reg.wc, r, &mut out);
            robsuniq(v, "M+.robsuniq", r, &mut out);
        }
        wrtotal(v, "M+.wrtotal", &reg.wc, &mut out);
        for &c in reg.scs.iter().chain(&reg.vls) {
            let links = &v.rep.ll_from[c.ix()];
            let linked = links.iter().any(|&l| v.event(l).op == "ll" && v.event(l).terminated());
            if !linked {
                out.push(Violation::new("M+.llobspop", vec![c], "SC/VL without a terminated LL linked to it"));
            }
            for &l in links {
                let (el, ec) = (v.event(l), v.event(c));
                if el.parent != ec.parent {
                    out.push(Violation::new("M+.llobsparent", vec![l, c], "LL and its SC/VL belong to different operations"));
                }
                for &l2 in &reg.lls {
                    if l2 != l && v.event(l2).parent == ec.parent && v.rep.hb(l, l2) && v.rep.hb(l2, c) {
                        out.push(Violation::new("M+.llobsparent", vec![l, c, l2], "a later LL of the same operation intervenes"));
                    }
                }
                let ok = v.event(c).output == Some(Val::Bool(true));
                for &w in &v.rep.rf_from[l.ix()] {
                    for &w2 in &v.rep.rf_from[c.ix()] {
                        if (w == w2) != ok {
                            out.push(Violation::new(
                                "M+.llsc-success",
                                vec![w, w2, l, c],
                                format!("SC/VL {} although the observed write {}", if ok { "succeeded" } else { "failed" }, if w == w2 { "is unchanged" } else { "changed" }),
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Instances of the three LL/SC lemmas.
pub fn check_llsc_lemmas(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    let ok = |c: EventId| v.event(c).output == Some(Val::Bool(true));
    for reg in registers(v).iter().filter(|r| r.llsc()) {
        let pairs: Vec<(EventId, EventId)> =
            reg.scs.iter().filter_map(|&c| v.rep.link(c).map(|l| (l, c))).collect();
        let good: Vec<(EventId, EventId)> =
            pairs.iter().copied().filter(|&(_, c)| ok(c) && v.event(c).terminated()).collect();
        for &(_, c) in &good {
            for &(l2, c2) in &good {
                if c != c2 && v.rep.hb(c, c2) && !v.rep.hb(c, l2) {
                    out.push(Violation::new("L4.1", vec![c, l2, c2], "ordered successful SCs but the first is not before the second's LL"));
                }
            }
        }
        let failed_vls = reg.vls.iter().copied().filter(|&c| !ok(c));
        for c in reg.scs.iter().copied().chain(failed_vls) {
            if !v.event(c).terminated() {
                continue;
            }
            let Some(l) = v.rep.link(c) else { continue };
            let found = reg.wc.iter().any(|&w| !v.rep.hb(w, l) && v.rep.hb_eq(w, c));
            if !found {
                out.push(Violation::new("L4.2", vec![l, c], "no write-like event after the LL and up to the SC/VL"));
            }
        }
        for &(l, c) in &pairs {
            for &(l2, c2) in &pairs {
                if !returns_before(v.event(c), v.event(l2)) {
                    continue;
                }
                let (lo, hi) = (v.event(l).start, v.event(c2).end);
                let plain = reg.writes.iter().any(|&w| {
                    let e = v.event(w);
                    e.start <= hi && lo <= e.end
                });
                if plain {
                    continue;
                }
                let found = good.iter().any(|&(l3, c3)| !v.rep.hb(l3, l) && v.rep.hb_eq(c3, c2));
                if !found {
                    out.push(Violation::new("L4.3", vec![l, c, l2, c2], "no successful LL/SC pair inside the window"));
                }
            }
        }
    }
    out
}

fn out_cell(v: &Visibility, s: EventId, i: usize) -> Option<i64> {
    v.event(s).output.as_ref()?.as_tuple()?.get(i)?.as_int()
}

fn cell_of(v: &Visibility, w: EventId) -> Option<usize> {
    v.write(w).map(|w| w.cell)
}

/// Snapshot-signature axioms over abs events.
pub fn check_snapshot(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    let sl = v.s_level();
    let n = v.n;
    for (e, e2) in sl.prec().late_ancestors(|x| {
        let ev = v.event(sl.nodes[x as usize]);
        (ev.start, ev.end)
    }) {
        out.push(Violation::new(
            "V.1.abs",
            vec![sl.nodes[e as usize], sl.nodes[e2 as usize]],
            "an abs event is visible to something that returned before it",
        ));
    }
    let mut effectful: Vec<Vec<EventId>> = vec![Vec::new(); n];
    for w in &v.writes {
        if w.wa.is_some() && w.cell < n {
            effectful[w.cell].push(w.id);
        }
    }
    let obs = |s: EventId, i: usize| -> Vec<EventId> {
        sl.observed_by(s).iter().copied().filter(|&w| cell_of(v, w) == Some(i)).collect()
    };
    for &s in &v.scans {
        let es = v.event(s);
        for (i, cell_writes) in effectful.iter().enumerate() {
            let ws = obs(s, i);
            if es.terminated() {
                let want = out_cell(v, s, i);
                if !ws.iter().any(|&w| v.write(w).map(|w| w.value) == want && want.is_some()) {
                    let note = if v.sigma_of.contains_key(&s) {
                        format!("no observed write into cell {i} carries the returned value")
                    } else {
                        "terminated scan has no virtual scan".to_string()
                    };
                    let mut wit = vec![s];
                    wit.extend(&ws);
                    out.push(Violation::new("S.1", wit, note));
                }
            }
            if ws.len() > 1 {
                let mut wit = ws.clone();
                wit.push(s);
                out.push(Violation::new("S.3", wit, format!("scan observes several writes into cell {i}")));
            }
            for &w in &ws {
                for &w2 in cell_writes {
                    if w2 != w && sl.hb(w, w2) && sl.hb(w2, s) {
                        out.push(Violation::new("S.2", vec![w, s, w2], "a later write happens between write and scan"));
                    }
                }
            }
        }
    }
    for ws in &effectful {
        for (k, &w) in ws.iter().enumerate() {
            for &w2 in &ws[k + 1..] {
                if !sl.hb(w, w2) && !sl.hb(w2, w) {
                    out.push(Violation::new("S.4", vec![w, w2], "effectful writes are not ordered"));
                }
            }
        }
    }
    for w in &v.writes {
        if v.event(w.id).terminated() && w.wa.is_none() {
            out.push(Violation::new("S.5", vec![w.id], "terminated write is not effectful"));
        }
    }
    let views: Vec<(EventId, Vec<Vec<EventId>>)> =
        v.scans.iter().map(|&s| (s, (0..n).map(|i| obs(s, i)).collect())).collect();
    for (s, vs) in &views {
        for (s2, vs2) in &views {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    for &wi in &vs[i] {
                        for &wi2 in &vs2[i] {
                            if !sl.hb(wi, wi2) {
                                continue;
                            }
                            for &wj in &vs[j] {
                                for &wj2 in &vs2[j] {
                                    if sl.hb(wj2, wj) {
                                        out.push(Violation::new(
                                            "S.7",
                                            vec![wi, wi2, wj, wj2, *s, *s2],
                                            "two scans order writes into two cells inconsistently",
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `w ⊏⊴rf σ`: `w` returns before `σ` or before some write `σ` observes.
fn rb_rf(v: &Visibility, w: EventId, sg: usize) -> bool {
    let ew = v.event(w);
    returns_before(ew, &v.sigmas[sg].span) || v.rf_of_sigma(sg).iter().any(|&e| returns_before(ew, v.event(e)))
}

fn writes_of_cell<'a>(v: &'a Visibility<'_>, i: usize) -> impl Iterator<Item = &'a crate::visibility::AbsWrite> {
    v.writes.iter().filter(move |w| w.cell == i)
}

/// The B-register writes a virtual scan's reset uniqueness ranges over.
fn b_writes(v: &Visibility, cell: &str, write_like: bool) -> Vec<EventId> {
    v.h.events
        .iter()
        .filter(|e| e.kind == Kind::Rep && e.object.as_deref() == Some(cell))
        .filter(|e| e.op == "write" || (write_like && e.op == "sc" && e.output == Some(Val::Bool(true))))
        .map(|e| e.id)
        .collect()
}

/// Axioms shared by both forwarding signatures, with the given id prefix.
fn forwarding_common(v: &Visibility, p: &str, write_like: bool, out: &mut Vec<Violation>) {
    let n = v.n;
    let id = |s: &str| format!("{p}.{s}");
    for (&s, &k) in &v.sigma_of {
        if !subevent(&v.sigmas[k].span, v.event(s)) {
            out.push(Violation::new(&id("1"), vec![s], format!("virtual scan #{k} is not inside its scan")));
        }
    }
    for &s in &v.scans {
        let es = v.event(s);
        if !es.terminated() {
            continue;
        }
        let Some(&k) = v.sigma_of.get(&s) else {
            out.push(Violation::new(&id("2"), vec![s], "terminated scan has no virtual scan"));
            continue;
        };
        for i in 0..n {
            let want = out_cell(v, s, i);
            let ok = v
                .rf_of_sigma(k)
                .iter()
                .any(|&w| v.write(w).is_some_and(|w| w.cell == i && Some(w.value) == want));
            if !ok {
                out.push(Violation::new(&id("2"), vec![s], format!("virtual scan #{k} observes no write of cell {i} with the returned value")));
            }
        }
    }
    // every write into A is some abs write's wa
    let was: BTreeSet<EventId> = v.writes.iter().filter_map(|w| w.wa).collect();
    for i in 0..n {
        let a = reg_a(i);
        for e in v.h.events.iter().filter(|e| e.kind == Kind::Rep && e.object.as_deref() == Some(a.as_str()) && e.op == "write") {
            if !was.contains(&e.id) {
                out.push(Violation::new(&id("3a"), vec![e.id], "write into A is not the main write of an abs write"));
            }
        }
    }
    // ⊥ into a forwarding array ⟺ some virtual scan's reset
    let resets: BTreeSet<EventId> = v.sigmas.iter().flat_map(|s| s.r.iter().flatten().copied()).collect();
    let windowed = v.alg == Algorithm::Jayanti3;
    let mut seen: BTreeSet<(String, Option<usize>)> = BTreeSet::new();
    for sg in &v.sigmas {
        for i in 0..n {
            let Some(cell) = sg.b_cell(i) else { continue };
            if !seen.insert((cell.clone(), windowed.then_some(sg.id))) {
                continue;
            }
            for e in b_writes(v, &cell, write_like) {
                let bot = v.event(e).input.is_bot();
                let is_reset = resets.contains(&e);
                if is_reset && !bot {
                    out.push(Violation::new(&id("3b"), vec![e], "a reset event writes a non-⊥ value"));
                }
                if bot && !is_reset && !(windowed && outside_window(v, sg, i, e)) {
                    out.push(Violation::new(&id("3b"), vec![e], format!("⊥ written into {cell} by something other than a reset")));
                }
            }
        }
    }
    let sigmas = &v.sigmas;
    for (k, a) in sigmas.iter().enumerate() {
        for b in &sigmas[k + 1..] {
            if !returns_before(&a.span, &b.span) && !returns_before(&b.span, &a.span) {
                out.push(Violation::new(
                    &id(if p == "F" { "2a" } else { "sctotal" }),
                    [a.owner, b.owner].into_iter().flatten().collect(),
                    format!("virtual scans #{} and #{} overlap", a.id, b.id),
                ));
            }
        }
    }
}

/// Whether a stray ⊥-write lies outside `σ`'s use of its forwarding array
/// (before its reset or after its read of cell `i`).
fn outside_window(v: &Visibility, sg: &VirtualScan, i: usize, e: EventId) -> bool {
    let before = sg.r[i].is_some_and(|r| v.rep.hb(e, r));
    let after = sg.b[i].is_some_and(|b| v.rep.hb(b, e));
    before || after
}

/// Forwarding-signature axioms (single-writer B array semantics).
pub fn check_forwarding(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    forwarding_common(v, "F", false, &mut out);
    let n = v.n;
    let fl = v.f_level();
    let hb_f = |a: EventId, b: EventId| fl.hb(AbsNode::Event(a), AbsNode::Event(b));
    for sg in &v.sigmas {
        for i in 0..n {
            let seq = [sg.r[i], sg.a[i], sg.b[i]];
            for w in seq.windows(2) {
                if let (Some(x), Some(y)) = (w[0], w[1]) {
                    if !returns_before(v.event(x), v.event(y)) {
                        out.push(Violation::new("F.2b", vec![x, y], format!("virtual scan #{} steps out of order in cell {i}", sg.id)));
                    }
                }
            }
        }
    }
    let mut fwd_by: BTreeMap<(usize, usize), Vec<EventId>> = BTreeMap::new();
    for &(w, sg) in &v.fwd {
        if let Some(i) = cell_of(v, w) {
            fwd_by.entry((sg, i)).or_default().push(w);
        }
    }
    for (&(sg, i), ws) in &fwd_by {
        if ws.len() > 1 {
            out.push(Violation::new("F.4a", ws.clone(), format!("several writes forwarded to virtual scan #{sg} in cell {i}")));
        }
    }
    for sg in &v.sigmas {
        for i in 0..n {
            let Some(b) = sg.b[i] else { continue };
            let direct = sg.r[i].is_some_and(|r| v.rep.rf_from[b.ix()].contains(&r));
            if v.event(b).terminated() && !direct && !fwd_by.contains_key(&(sg.id, i)) {
                out.push(Violation::new("F.4b", vec![b], format!("virtual scan #{} read a forwarded value in cell {i} with no forwarding write", sg.id)));
            }
        }
    }
    for &(w, k) in &v.fwd {
        let sg = &v.sigmas[k];
        let (Some(aw), Some(i)) = (v.write(w), cell_of(v, w)) else { continue };
        let Some(b) = sg.b[i] else { continue };
        let direct = sg.r[i].is_some_and(|r| v.rep.rf_from[b.ix()].contains(&r));
        if !aw.wa.is_some_and(|wa| v.rep.hb(wa, b)) || direct {
            out.push(Violation::new("F.4c", vec![w, b], format!("forwarding to virtual scan #{k} is not preceded by the write or was overwritten by the reset")));
        }
    }
    for sg in &v.sigmas {
        for i in 0..n {
            let (Some(r), Some(a), Some(b)) = (sg.r[i], sg.a[i], sg.b[i]) else { continue };
            if !v.rep.rf_from[b.ix()].contains(&r) {
                continue;
            }
            for w in writes_of_cell(v, i) {
                if rb_rf(v, w.id, sg.id) && !w.wa.is_some_and(|wa| v.rep.hb(wa, a)) {
                    out.push(Violation::new("F.5", vec![w.id, a], format!("an earlier write is not visible to virtual scan #{}'s read of A", sg.id)));
                }
            }
        }
    }
    for &(w, k) in &v.fwd {
        let sg = &v.sigmas[k];
        let Some(i) = cell_of(v, w) else { continue };
        for w2 in writes_of_cell(v, i) {
            if w2.id == w || !hb_f(w, w2.id) {
                continue;
            }
            if let (Some(wa2), Some(r)) = (w2.wa, sg.r[i]) {
                if v.rep.hb(wa2, r) {
                    out.push(Violation::new("F.6a", vec![w, w2.id], format!("forwarded write is older than a write preceding virtual scan #{k}'s reset")));
                }
            }
            if rb_rf(v, w2.id, k) {
                out.push(Violation::new("F.6b", vec![w, w2.id], format!("forwarded write is older than a write preceding virtual scan #{k}")));
            }
        }
    }
    out
}

/// Multi-writer forwarding axioms (LL/SC forwarding with control register X).
pub fn check_mw_forwarding(v: &Visibility) -> Vec<Violation> {
    let mut out = Vec::new();
    forwarding_common(v, "F+", true, &mut out);
    let n = v.n;
    let rb = |x: EventId, y: EventId| returns_before(v.event(x), v.event(y));
    let rb_or_rf = |x: EventId, y: EventId| x == y || v.rep.rf_from[y.ix()].contains(&x);
    // non-⊥ into a forwarding array ⟺ some forward's SC
    let fscs: BTreeSet<EventId> = v.forwards.iter().filter_map(|f| f.fsc).collect();
    let mut cells = BTreeSet::new();
    for sg in &v.sigmas {
        for i in 0..n {
            if let Some(c) = sg.b_cell(i) {
                cells.insert(c);
            }
        }
    }
    for cell in &cells {
        for e in b_writes(v, cell, true) {
            let bot = v.event(e).input.is_bot();
            if bot == fscs.contains(&e) {
                out.push(Violation::new("F+.fbBuniq", vec![e], format!("value written into {cell} does not match its origin")));
            }
        }
    }
    let x_reads: Vec<EventId> = v
        .h
        .events
        .iter()
        .filter(|e| e.kind == Kind::Rep && e.object.as_deref() == Some(REG_X) && e.op != "write")
        .map(|e| e.id)
        .collect();
    for sg in &v.sigmas {
        let Some(on) = sg.on else { continue };
        for &e in &x_reads {
            let lhs = v.rep.rf_from[e.ix()].contains(&on);
            let rhs = v.rep.hb(on, e) && !sg.off.is_some_and(|off| v.rep.hb(off, e));
            if lhs != rhs {
                out.push(Violation::new("F+.sconuniq", vec![on, e], format!("observing virtual scan #{}'s on does not match its window", sg.id)));
            }
        }
        for i in 0..n {
            let chain = [
                (sg.r[i], Some(on), true),
                (Some(on), sg.on_obs, false),
                (sg.on_obs, sg.a[i], true),
                (sg.a[i], sg.off, true),
                (sg.off, sg.off_obs, false),
                (sg.off_obs, sg.b[i], true),
            ];
            for (x, y, strict) in chain {
                let (Some(x), Some(y)) = (x, y) else { continue };
                let ok = if strict { rb(x, y) } else { rb_or_rf(x, y) };
                if !ok {
                    out.push(Violation::new("F+.scstruct", vec![x, y], format!("virtual scan #{} steps out of order in cell {i}", sg.id)));
                }
            }
        }
    }
    let on_sigma: BTreeMap<EventId, usize> = v.sigmas.iter().filter_map(|s| s.on.map(|on| (on, s.id))).collect();
    for w in &v.writes {
        if w.init {
            continue;
        }
        let fs: Vec<&crate::visibility::Forward> = w.forwards.iter().map(|&k| &v.forwards[k]).collect();
        if let (Some(wa), Some(wx)) = (w.wa, w.wx) {
            if !rb(wa, wx) {
                out.push(Violation::new("F+.wrstruct", vec![wa, wx], "write steps out of order"));
            }
            if let Some(f) = fs.first() {
                if !returns_before(v.event(wx), &f.span) {
                    out.push(Violation::new("F+.wrstruct", vec![wx], "forwarding starts before reading X"));
                }
            }
        }
        if let [f1, f2] = fs.as_slice() {
            if !returns_before(&f1.span, &f2.span) {
                out.push(Violation::new("F+.wrstruct", vec![w.id], "forwarding attempts overlap"));
            }
        }
        for f in &fs {
            let steps: Vec<EventId> = [f.fb, f.fa, f.fx, f.fsc].into_iter().flatten().collect();
            for p in steps.windows(2) {
                if !rb(p[0], p[1]) {
                    out.push(Violation::new("F+.fwdstruct", vec![p[0], p[1]], format!("{} steps out of order", f.group)));
                }
            }
            if let Some(fsc) = f.fsc {
                if f.fb.is_none() || v.rep.link(fsc) != f.fb {
                    out.push(Violation::new("F+.fwdstruct", vec![fsc], format!("{} SC is not linked to its LL", f.group)));
                }
            }
            let sg = w.wx.and_then(|wx| v.rep.writer(wx)).and_then(|x| on_sigma.get(&x)).map(|&k| &v.sigmas[k]);
            match sg {
                None => out.push(Violation::new("F+.fwdprecond", vec![w.id], format!("{} runs without having observed a virtual scan's on", f.group))),
                Some(sg) => {
                    if let Some(wx) = w.wx {
                        if !returns_before(v.event(wx), &f.span) {
                            out.push(Violation::new("F+.fwdprecond", vec![wx], format!("{} starts before reading X", f.group)));
                        }
                    }
                    let cell = [f.fb, f.fsc].into_iter().flatten().find_map(|e| v.event(e).object.clone());
                    if cell.is_some() && cell != sg.b_cell(f.cell) {
                        out.push(Violation::new("F+.fwdprecond", vec![w.id], format!("{} targets a different forwarding array than virtual scan #{}", f.group, sg.id)));
                    }
                    if let (Some(_), Some(fx), Some(on)) = (f.fsc, f.fx, sg.on) {
                        if !v.rep.rf_from[fx.ix()].contains(&on) {
                            out.push(Violation::new("F+.fwdsccond", vec![fx, on], format!("{} forwarded although X moved on", f.group)));
                        }
                    }
                }
            }
            if f.fsc.is_some() && sg.is_none() {
                out.push(Violation::new("F+.fwdsccond", vec![w.id], format!("{} forwarded with no virtual scan", f.group)));
            }
        }
    }
    out
}

/// Properties of Afek's collect-based virtual scans.
pub fn check_afek(v: &Visibility) -> Vec<Violation> {
    let mut out = v.anomalies.clone();
    for sg in v.sigmas.iter().filter(|s| s.complete) {
        for i in 0..v.n {
            let (Some(a), Some(b)) = (sg.a[i], sg.b[i]) else { continue };
            let common = v.rep.rf_from[a.ix()]
                .iter()
                .any(|w| v.rep.rf_from[b.ix()].contains(w) && v.write_of_wa(*w).is_some());
            if !common {
                out.push(Violation::new("A.success", vec![a, b], format!("virtual scan #{}'s two reads of cell {i} observe different writes", sg.id)));
            }
            for j in 0..v.n {
                if let Some(bj) = sg.b[j] {
                    if !returns_before(v.event(a), v.event(bj)) {
                        out.push(Violation::new("A.scrb", vec![a, bj], "first collect does not precede the second"));
                    }
                }
            }
        }
    }
    for (&s, &k) in &v.sigma_of {
        if !subevent(&v.sigmas[k].span, v.event(s)) {
            out.push(Violation::new("A.vrtinscan", vec![s], format!("virtual scan #{k} is not inside its scan")));
        }
    }
    out
}

/// Implications between suites, and from the snapshot suite to linearizability.
fn check_chain(v: &Visibility, pass: &mut dyn FnMut(Suite) -> bool) -> Vec<Violation> {
    let mut out = Vec::new();
    // the implications assume the registers behave: with broken register
    // axioms they are vacuous
    let registers_ok =
        pass(Suite::Rb) && pass(Suite::M) && (!Suite::MPlus.applies(v.alg) || pass(Suite::MPlus));
    let mut imply = |from: Suite, to: Suite, out: &mut Vec<Violation>| {
        if registers_ok && from.applies(v.alg) && pass(from) && !pass(to) {
            out.push(Violation::new(&format!("CHAIN.{from}->{to}"), vec![], format!("{from} holds but {to} fails")));
        }
    };
    imply(Suite::FPlus, Suite::F, &mut out);
    imply(Suite::F, Suite::S, &mut out);
    imply(Suite::A, Suite::S, &mut out);
    if pass(Suite::S) {
        match linearize(v) {
            Ok(lin) if lin.legal => {}
            Ok(_) => out.push(Violation::new("CHAIN.S->lin", vec![], "S holds but the constructed order does not replay")),
            Err(e) => out.push(Violation::new("CHAIN.S->lin", e.witnesses(), format!("S holds but linearization failed: {e}"))),
        }
    }
    out
}
