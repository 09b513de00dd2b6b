//! Events, histories, and the real-time relations between them.
//!
//! An [`Event`] is an interval `[start, end]` on a global tick counter. An
//! unterminated event has `end == Tick::INF` and no output. Everything else in
//! the crate is computed from a [`History`]: a dense, id-ordered event list plus
//! the reads-from and load-link edges recorded by the registers.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A point on the global tick counter; `Tick::INF` marks "not yet ended".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tick(pub u64);

impl Tick {
    pub const INF: Tick = Tick(u64::MAX);

    pub fn is_inf(self) -> bool {
        self == Tick::INF
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Tick {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_u64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Tick {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u64),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) if n != u64::MAX => Ok(Tick(n)),
            Repr::S(s) if s == "inf" => Ok(Tick::INF),
            _ => Err(serde::de::Error::custom("tick must be a natural number or \"inf\"")),
        }
    }
}

/// Dense per-history event identifier; equal to the event's position in
/// [`History::events`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u32);

impl EventId {
    pub fn ix(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Abs,
    Rep,
    Virtual,
}

/// Structured values stored in registers and carried by event inputs/outputs.
///
/// JSON: integers and booleans map directly, tuples are arrays, `Bot` is the
/// string `"bot"` and `Unit` is `"unit"` (JSON `null` is reserved for an absent
/// output).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Val {
    Bot,
    Unit,
    Bool(bool),
    Int(i64),
    Tuple(Vec<Val>),
}

impl Val {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Val::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Val::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Val]> {
        match self {
            Val::Tuple(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_bot(&self) -> bool {
        matches!(self, Val::Bot)
    }

    pub fn ints(vals: &[i64]) -> Val {
        Val::Tuple(vals.iter().map(|&v| Val::Int(v)).collect())
    }

    /// Interpret a tuple of integers (a snapshot array).
    pub fn to_ints(&self) -> Option<Vec<i64>> {
        self.as_tuple()?.iter().map(Val::as_int).collect()
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Bot => f.write_str("⊥"),
            Val::Unit => f.write_str("()"),
            Val::Bool(b) => write!(f, "{b}"),
            Val::Int(v) => write!(f, "{v}"),
            Val::Tuple(vs) => {
                f.write_str("(")?;
                for (k, v) in vs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Serialize for Val {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Val::Bot => s.serialize_str("bot"),
            Val::Unit => s.serialize_str("unit"),
            Val::Bool(b) => s.serialize_bool(*b),
            Val::Int(v) => s.serialize_i64(*v),
            Val::Tuple(vs) => vs.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Val {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            B(bool),
            I(i64),
            S(String),
            T(Vec<Val>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::B(b) => Val::Bool(b),
            Repr::I(v) => Val::Int(v),
            Repr::S(s) if s == "bot" => Val::Bot,
            Repr::S(s) if s == "unit" => Val::Unit,
            Repr::S(s) => return Err(serde::de::Error::custom(format!("unknown value {s:?}"))),
            Repr::T(vs) => Val::Tuple(vs),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub kind: Kind,
    pub op: String,
    pub input: Val,
    pub output: Option<Val>,
    pub start: Tick,
    pub end: Tick,
    pub parent: Option<EventId>,
    pub object: Option<String>,
    /// Structural tag naming the event's role inside its parent
    /// (`wa`, `a[1]`, `f2.fsc`, `v1.on`, ...). See [`Label`].
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl Event {
    pub fn terminated(&self) -> bool {
        !self.end.is_inf()
    }

    pub fn label(&self) -> Label<'_> {
        Label::parse(&self.label)
    }

    /// Top-level abstract event (not nested inside another operation).
    pub fn is_top_abs(&self) -> bool {
        self.kind == Kind::Abs && self.parent.is_none()
    }
}

/// Parsed form of an event label: `[group.]name[[index]]`, where `group` may
/// itself contain dots (`ws.k2.a[0]` has group `ws.k2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Label<'a> {
    pub group: Option<&'a str>,
    pub name: &'a str,
    pub index: Option<usize>,
}

impl<'a> Label<'a> {
    pub fn parse(s: &'a str) -> Label<'a> {
        let (group, rest) = match s.rfind('.') {
            Some(p) => (Some(&s[..p]), &s[p + 1..]),
            None => (None, s),
        };
        if let (Some(open), true) = (rest.find('['), rest.ends_with(']')) {
            if let Ok(ix) = rest[open + 1..rest.len() - 1].parse() {
                return Label { group, name: &rest[..open], index: Some(ix) };
            }
        }
        Label { group, name: rest, index: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub algorithm: String,
    pub n: usize,
    pub initial: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub meta: Meta,
    pub events: Vec<Event>,
    pub rf: Vec<(EventId, EventId)>,
    pub ll: Vec<(EventId, EventId)>,
}

impl History {
    pub fn event(&self, id: EventId) -> &Event {
        &self.events[id.ix()]
    }

    pub fn get(&self, id: EventId) -> Option<&Event> {
        self.events.get(id.ix())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("history serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    pub fn from_json(s: &str) -> Result<History, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Top-level abstract writes (`op == "write"`), including initial writes.
    pub fn abs_writes(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_top_abs() && e.op == "write")
    }

    /// Top-level abstract scans.
    pub fn abs_scans(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_top_abs() && e.op == "scan")
    }
}

/// A failed axiom instance.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: String,
    pub witnesses: Vec<EventId>,
    pub note: String,
}

impl Violation {
    pub fn new(axiom: &str, witnesses: Vec<EventId>, note: impl Into<String>) -> Violation {
        Violation { axiom: axiom.to_string(), witnesses, note: note.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [", self.axiom)?;
        for (k, w) in self.witnesses.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{w}")?;
        }
        write!(f, "] {}", self.note)
    }
}

/// `start`/`end` pair; the only thing the real-time relations look at.
pub trait Interval {
    fn span(&self) -> (Tick, Tick);
}

impl Interval for Event {
    fn span(&self) -> (Tick, Tick) {
        (self.start, self.end)
    }
}

impl Interval for (Tick, Tick) {
    fn span(&self) -> (Tick, Tick) {
        *self
    }
}

/// `e ⊏ e2`: `e` terminated strictly before `e2` started.
pub fn returns_before<A: Interval + ?Sized, B: Interval + ?Sized>(e: &A, e2: &B) -> bool {
    let (_, end) = e.span();
    let (start2, _) = e2.span();
    !end.is_inf() && end < start2
}

/// `e ⊆ e2`: interval containment (an open end is only contained in an open end).
pub fn subevent<A: Interval + ?Sized, B: Interval + ?Sized>(e: &A, e2: &B) -> bool {
    let (s, t) = e.span();
    let (s2, t2) = e2.span();
    s2 <= s && t <= t2
}

/// Structural well-formedness: the event and history invariants that every
/// checker relies on. Violation ids are prefixed `WF.`.
pub fn validate(h: &History) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = h.events.len();
    for (k, e) in h.events.iter().enumerate() {
        if e.id.ix() != k {
            out.push(Violation::new("WF.id", vec![e.id], format!("event at position {k} has id {}", e.id)));
            continue;
        }
        if e.terminated() && e.end <= e.start {
            out.push(Violation::new("WF.interval", vec![e.id], format!("end {} not after start {}", e.end, e.start)));
        }
        if e.start.is_inf() {
            out.push(Violation::new("WF.interval", vec![e.id], "start is inf"));
        }
        if e.output.is_some() != e.terminated() {
            out.push(Violation::new("WF.output", vec![e.id], "output present iff terminated"));
        }
        match (e.kind, e.parent) {
            (Kind::Rep, None) => out.push(Violation::new("WF.parent", vec![e.id], "rep event without parent")),
            (Kind::Virtual, None) => out.push(Violation::new("WF.parent", vec![e.id], "virtual event without parent")),
            (_, Some(p)) if p.ix() >= n => {
                out.push(Violation::new("WF.ref", vec![e.id], format!("parent {p} does not exist")))
            }
            (Kind::Rep | Kind::Virtual, Some(p)) => {
                let pe = &h.events[p.ix()];
                if pe.kind != Kind::Abs {
                    out.push(Violation::new("WF.parent", vec![e.id, p], "parent is not an abs event"));
                }
                if !subevent(e, pe) {
                    out.push(Violation::new("WF.contain", vec![e.id, p], "interval not contained in parent"));
                }
            }
            _ => {}
        }
        if e.kind == Kind::Rep && e.object.is_none() {
            out.push(Violation::new("WF.object", vec![e.id], "rep event without register object"));
        }
    }
    // rep children of one abs event form a chain under ⊏
    let mut children: Vec<Vec<EventId>> = vec![Vec::new(); n];
    for e in &h.events {
        if let (Kind::Rep, Some(p)) = (e.kind, e.parent) {
            if p.ix() < n {
                children[p.ix()].push(e.id);
            }
        }
    }
    for (p, kids) in children.iter_mut().enumerate() {
        kids.sort_by_key(|id| h.events[id.ix()].start);
        for w in kids.windows(2) {
            let (a, b) = (&h.events[w[0].ix()], &h.events[w[1].ix()]);
            if !returns_before(a, b) {
                out.push(Violation::new(
                    "WF.chain",
                    vec![EventId(p as u32), a.id, b.id],
                    "rep events of one abs event overlap",
                ));
            }
        }
    }
    let mut check_edge = |label: &str, (x, y): (EventId, EventId)| {
        if x.ix() >= n || y.ix() >= n {
            out.push(Violation::new("WF.ref", vec![x, y], format!("{label} edge references a missing event")));
            return;
        }
        let (ex, ey) = (&h.events[x.ix()], &h.events[y.ix()]);
        if ex.kind != Kind::Rep || ey.kind != Kind::Rep || ex.object != ey.object {
            out.push(Violation::new("WF.object", vec![x, y], format!("{label} edge joins different registers")));
        }
    };
    for &p in &h.rf {
        check_edge("rf", p);
    }
    for &p in &h.ll {
        check_edge("ll", p);
    }
    out
}

/// Brute-force limit for the quadruple enumerations below.
const BRUTE_LIMIT: usize = 48;

/// Interval-order property: `e1⊏e2 ∧ e1'⊏e2' ⟹ e1⊏e2' ∨ e1'⊏e2`.
///
/// Small histories are checked by enumerating all quadruples. For larger ones
/// the quantifier collapses: a counterexample needs `e1.end < e2.start ≤ e1'.end`
/// and `e1'.end < e2'.start ≤ e1.end`, so the ends of `e1` and `e1'` would have
/// to be strictly ordered both ways. With scalar ticks that cannot happen, and
/// the large path only confirms the premise that every finite end is a tick.
pub fn check_interval_order(h: &History) -> Vec<Violation> {
    let ev = &h.events;
    let mut out = Vec::new();
    if ev.len() <= BRUTE_LIMIT {
        for e1 in ev {
            for e2 in ev.iter().filter(|e2| returns_before(e1, *e2)) {
                for f1 in ev {
                    for f2 in ev.iter().filter(|f2| returns_before(f1, *f2)) {
                        if !returns_before(e1, f2) && !returns_before(f1, e2) {
                            out.push(Violation::new(
                                "RB.1",
                                vec![e1.id, e2.id, f1.id, f2.id],
                                "returns-before is not an interval order",
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Subevent/returns-before property:
/// `e1⊆e1' ∧ e2⊆e2' ∧ e1'⊏e2' ⟹ e1⊏e2`.
///
/// Small histories enumerate all subevent pairs. For a genuinely contained
/// pair the implication holds by transitivity of `≤` on ticks, so larger
/// histories only examine (child, parent) pairs whose containment is broken,
/// against the earliest event starting after the parent ends.
pub fn check_subevent_rb(h: &History) -> Vec<Violation> {
    let ev = &h.events;
    let mut out = BTreeSet::new();
    if ev.len() <= BRUTE_LIMIT {
        let pairs: Vec<(&Event, &Event)> = ev
            .iter()
            .flat_map(|a| ev.iter().filter(move |b| subevent(a, *b)).map(move |b| (a, b)))
            .collect();
        for &(e1, p1) in &pairs {
            for &(e2, p2) in &pairs {
                if returns_before(p1, p2) && !returns_before(e1, e2) {
                    out.insert(Violation::new(
                        "RB.2",
                        vec![e1.id, p1.id, e2.id, p2.id],
                        "subevents of ordered events are not ordered",
                    ));
                }
            }
        }
        return out.into_iter().collect();
    }
    let mut starts: Vec<(Tick, EventId)> = ev.iter().map(|e| (e.start, e.id)).collect();
    starts.sort();
    for e in ev {
        let Some(p) = e.parent.and_then(|p| ev.get(p.ix())) else { continue };
        if subevent(e, p) || !p.terminated() {
            continue;
        }
        let k = starts.partition_point(|(s, _)| *s <= p.end);
        if let Some(&(_, next)) = starts.get(k) {
            let n = &ev[next.ix()];
            if !returns_before(e, n) {
                out.insert(Violation::new(
                    "RB.2",
                    vec![e.id, p.id, n.id, n.id],
                    "subevents of ordered events are not ordered",
                ));
            }
        }
    }
    out.into_iter().collect()
}

/// Deterministic order used whenever "earliest" is needed: by start, then id.
pub fn by_start(a: &Event, b: &Event) -> Ordering {
    (a.start, a.id).cmp(&(b.start, b.id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: u64, e: u64) -> (Tick, Tick) {
        (Tick(s), if e == u64::MAX { Tick::INF } else { Tick(e) })
    }

    #[test]
    fn rb_examples() {
        assert!(returns_before(&iv(0, 1), &iv(2, 3)));
        assert!(!returns_before(&iv(0, 3), &iv(2, 5)));
        assert!(!returns_before(&iv(0, u64::MAX), &iv(9, 10)));
    }

    #[test]
    fn subevent_examples() {
        assert!(subevent(&iv(2, 3), &iv(1, 4)));
        assert!(!subevent(&iv(1, 4), &iv(2, 3)));
        assert!(subevent(&iv(2, u64::MAX), &iv(1, u64::MAX)));
        assert!(!subevent(&iv(2, u64::MAX), &iv(1, 9)));
    }

    #[test]
    fn label_parse() {
        assert_eq!(Label::parse("wa"), Label { group: None, name: "wa", index: None });
        assert_eq!(Label::parse("a[3]"), Label { group: None, name: "a", index: Some(3) });
        assert_eq!(Label::parse("f2.fsc"), Label { group: Some("f2"), name: "fsc", index: None });
        assert_eq!(Label::parse("ws.k2.b[1]"), Label { group: Some("ws.k2"), name: "b", index: Some(1) });
    }

    #[test]
    fn val_json_roundtrip() {
        let v = Val::Tuple(vec![Val::Int(-3), Val::Bot, Val::Unit, Val::Bool(true), Val::ints(&[1, 2])]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[-3,"bot","unit",true,[1,2]]"#);
        assert_eq!(serde_json::from_str::<Val>(&s).unwrap(), v);
    }

    #[test]
    fn tick_json() {
        assert_eq!(serde_json::to_string(&Tick::INF).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Tick>("7").unwrap(), Tick(7));
        assert!(serde_json::from_str::<Tick>("\"never\"").is_err());
    }
}
