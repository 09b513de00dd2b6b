//! Instrumented shared registers.
//!
//! Every cell supports plain read/write plus LL/SC/VL. LL/SC is emulated with
//! a per-cell version counter that every write-like event bumps (plain writes
//! and successful SCs alike), so an SC succeeds exactly when the write-like
//! event its LL observed is still the cell's last writer.
//!
//! Two memories share the cell logic: [`SimMem`] for the single-threaded
//! simulator (cheap to clone for DFS) and [`ConcMem`] for real threads, where
//! each cell sits behind its own lock and ticks come from one atomic counter.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;
use std::cell::RefCell;

use thiserror::Error;

use crate::event::{Event, EventId, History, Kind, Meta, Tick, Val};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RegError {
    #[error("register {0} read before any write")]
    Uninitialized(String),
    #[error("SC/VL on {0} without a prior LL by the same thread")]
    NoLink(String),
    #[error("unknown register {0}")]
    Unknown(String),
}

/// A primitive register operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegOp {
    Read,
    Write(Val),
    Ll,
    Sc(Val),
    Vl,
}

impl RegOp {
    pub fn name(&self) -> &'static str {
        match self {
            RegOp::Read => "read",
            RegOp::Write(_) => "write",
            RegOp::Ll => "ll",
            RegOp::Sc(_) => "sc",
            RegOp::Vl => "vl",
        }
    }

    fn input(&self) -> Val {
        match self {
            RegOp::Write(v) | RegOp::Sc(v) => v.clone(),
            _ => Val::Unit,
        }
    }
}

/// State of one register cell.
#[derive(Clone, Debug, Default)]
pub struct Cell {
    pub value: Option<Val>,
    pub writer: Option<EventId>,
    pub version: u64,
    /// Per-thread state of the latest LL on this cell.
    links: BTreeMap<usize, Link>,
}

/// Snapshot taken by an LL: the cell version and writer it observed.
#[derive(Clone, Copy, Debug)]
pub struct Link {
    pub version: u64,
    pub writer: Option<EventId>,
    pub ll: EventId,
}

/// What a step did, for the recorder.
struct Effect {
    output: Val,
    rf_from: Option<EventId>,
    ll_from: Option<EventId>,
}

impl Cell {
    fn apply(&mut self, reg: &str, thread: usize, op: &RegOp, me: EventId) -> Result<Effect, RegError> {
        let observed = || self.value.clone().ok_or_else(|| RegError::Uninitialized(reg.to_string()));
        match op {
            RegOp::Read => Ok(Effect { output: observed()?, rf_from: self.writer, ll_from: None }),
            RegOp::Ll => {
                let v = observed()?;
                self.links.insert(thread, Link { version: self.version, writer: self.writer, ll: me });
                Ok(Effect { output: v, rf_from: self.writer, ll_from: None })
            }
            RegOp::Write(v) => {
                self.install(v.clone(), me);
                Ok(Effect { output: Val::Unit, rf_from: None, ll_from: None })
            }
            RegOp::Sc(_) | RegOp::Vl => {
                let link = *self.links.get(&thread).ok_or_else(|| RegError::NoLink(reg.to_string()))?;
                let rf_from = self.writer;
                let ok = link.version == self.version;
                if let (true, RegOp::Sc(v)) = (ok, op) {
                    self.install(v.clone(), me);
                }
                Ok(Effect { output: Val::Bool(ok), rf_from, ll_from: Some(link.ll) })
            }
        }
    }

    fn install(&mut self, v: Val, me: EventId) {
        self.value = Some(v);
        self.writer = Some(me);
        self.version += 1;
    }
}

/// The recording memory interface used by algorithm code.
pub trait Memory {
    /// Open an abstract or virtual event; its start tick is sampled now.
    fn begin(&self, kind: Kind, op: &str, input: Val, parent: Option<EventId>, label: &str) -> EventId;
    /// Close an event opened by [`Memory::begin`]; `label`, when given, replaces the original.
    fn finish(&self, id: EventId, output: Val, label: Option<String>);
    /// Perform one register step as a rep event of `parent`.
    fn step(&self, thread: usize, parent: EventId, reg: &str, op: RegOp, label: &str) -> Result<Val, RegError>;
}

#[derive(Clone, Debug, Default)]
struct SimState {
    events: Vec<Event>,
    rf: Vec<(EventId, EventId)>,
    ll: Vec<(EventId, EventId)>,
    cells: BTreeMap<String, Cell>,
    tick: u64,
}

impl SimState {
    fn next_id(&self) -> EventId {
        EventId(self.events.len() as u32)
    }

    fn tick(&mut self) -> Tick {
        let t = Tick(self.tick);
        self.tick += 1;
        t
    }
}

/// Deterministic single-threaded memory. Each register step takes two
/// consecutive ticks; `begin`/`finish` take one each.
#[derive(Clone, Debug, Default)]
pub struct SimMem {
    st: RefCell<SimState>,
}

impl SimMem {
    pub fn new() -> SimMem {
        SimMem::default()
    }

    pub fn history(&self, meta: Meta) -> History {
        let st = self.st.borrow();
        let mut rf = st.rf.clone();
        let mut ll = st.ll.clone();
        rf.sort();
        ll.sort();
        History { meta, events: st.events.clone(), rf, ll }
    }

    pub fn event_count(&self) -> usize {
        self.st.borrow().events.len()
    }

    /// Current value of a cell (None if never written).
    pub fn peek(&self, reg: &str) -> Option<Val> {
        self.st.borrow().cells.get(reg).and_then(|c| c.value.clone())
    }
}

impl Memory for SimMem {
    fn begin(&self, kind: Kind, op: &str, input: Val, parent: Option<EventId>, label: &str) -> EventId {
        let mut st = self.st.borrow_mut();
        let id = st.next_id();
        let start = st.tick();
        st.events.push(Event {
            id,
            kind,
            op: op.to_string(),
            input,
            output: None,
            start,
            end: Tick::INF,
            parent,
            object: None,
            label: label.to_string(),
        });
        id
    }

    fn finish(&self, id: EventId, output: Val, label: Option<String>) {
        let mut st = self.st.borrow_mut();
        let end = st.tick();
        let e = &mut st.events[id.ix()];
        e.end = end;
        e.output = Some(output);
        if let Some(l) = label {
            e.label = l;
        }
    }

    fn step(&self, thread: usize, parent: EventId, reg: &str, op: RegOp, label: &str) -> Result<Val, RegError> {
        let mut st = self.st.borrow_mut();
        let st = &mut *st;
        let me = st.next_id();
        let cell = st.cells.entry(reg.to_string()).or_default();
        let eff = cell.apply(reg, thread, &op, me)?;
        let start = Tick(st.tick);
        let end = Tick(st.tick + 1);
        st.tick += 2;
        st.events.push(Event {
            id: me,
            kind: Kind::Rep,
            op: op.name().to_string(),
            input: op.input(),
            output: Some(eff.output.clone()),
            start,
            end,
            parent: Some(parent),
            object: Some(reg.to_string()),
            label: label.to_string(),
        });
        if let Some(w) = eff.rf_from {
            st.rf.push((w, me));
        }
        if let Some(l) = eff.ll_from {
            st.ll.push((l, me));
        }
        Ok(eff.output)
    }
}

enum LogEntry {
    Event(Event),
    Finish(EventId, Tick, Val, Option<String>),
    Rf(EventId, EventId),
    Ll(EventId, EventId),
}

/// Memory for real threads. Each cell is protected by its own lock; the rep
/// event's start and end ticks are both sampled while the lock is held, so
/// reads-from never points forward in time.
pub struct ConcMem {
    cells: HashMap<String, Mutex<Cell>>,
    tick: AtomicU64,
    ids: AtomicU32,
    log: Mutex<Vec<LogEntry>>,
}

impl ConcMem {
    /// All registers must be declared up front.
    pub fn new<I: IntoIterator<Item = String>>(registers: I) -> ConcMem {
        ConcMem {
            cells: registers
                .into_iter()
                .map(|r| (r, Mutex::new(Cell::default())))
                .collect(),
            tick: AtomicU64::new(0),
            ids: AtomicU32::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    fn tick(&self) -> Tick {
        Tick(self.tick.fetch_add(1, Ordering::SeqCst))
    }

    fn push(&self, e: LogEntry) {
        self.log.lock().expect("log lock").push(e);
    }

    pub fn into_history(self, meta: Meta) -> History {
        let log = self.log.into_inner().expect("log lock");
        let n = self.ids.load(Ordering::SeqCst) as usize;
        let mut slots: Vec<Option<Event>> = vec![None; n];
        let (mut rf, mut ll) = (Vec::new(), Vec::new());
        let mut finishes = Vec::new();
        for entry in log {
            match entry {
                LogEntry::Event(e) => {
                    let ix = e.id.ix();
                    slots[ix] = Some(e);
                }
                LogEntry::Finish(id, t, v, l) => finishes.push((id, t, v, l)),
                LogEntry::Rf(a, b) => rf.push((a, b)),
                LogEntry::Ll(a, b) => ll.push((a, b)),
            }
        }
        let mut events: Vec<Event> = slots.into_iter().map(|e| e.expect("every allocated id is logged")).collect();
        for (id, t, v, l) in finishes {
            let e = &mut events[id.ix()];
            e.end = t;
            e.output = Some(v);
            if let Some(l) = l {
                e.label = l;
            }
        }
        rf.sort();
        ll.sort();
        History { meta, events, rf, ll }
    }
}

impl Memory for ConcMem {
    fn begin(&self, kind: Kind, op: &str, input: Val, parent: Option<EventId>, label: &str) -> EventId {
        let id = EventId(self.ids.fetch_add(1, Ordering::SeqCst));
        let start = self.tick();
        self.push(LogEntry::Event(Event {
            id,
            kind,
            op: op.to_string(),
            input,
            output: None,
            start,
            end: Tick::INF,
            parent,
            object: None,
            label: label.to_string(),
        }));
        id
    }

    fn finish(&self, id: EventId, output: Val, label: Option<String>) {
        let end = self.tick();
        self.push(LogEntry::Finish(id, end, output, label));
    }

    fn step(&self, thread: usize, parent: EventId, reg: &str, op: RegOp, label: &str) -> Result<Val, RegError> {
        let slot = self.cells.get(reg).ok_or_else(|| RegError::Unknown(reg.to_string()))?;
        let mut guard = slot.lock().expect("cell lock");
        // The id is reserved before the effect so the cell can name its writer;
        // a failing step still logs an event to keep ids dense.
        let me = EventId(self.ids.fetch_add(1, Ordering::SeqCst));
        let start = self.tick();
        let res = guard.apply(reg, thread, &op, me);
        let end = self.tick();
        drop(guard);
        let output = res.as_ref().map(|e| e.output.clone()).unwrap_or(Val::Unit);
        self.push(LogEntry::Event(Event {
            id: me,
            kind: Kind::Rep,
            op: op.name().to_string(),
            input: op.input(),
            output: Some(output),
            start,
            end,
            parent: Some(parent),
            object: Some(reg.to_string()),
            label: label.to_string(),
        }));
        let eff = res?;
        if let Some(w) = eff.rf_from {
            self.push(LogEntry::Rf(w, me));
        }
        if let Some(l) = eff.ll_from {
            self.push(LogEntry::Ll(l, me));
        }
        Ok(eff.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs(m: &SimMem) -> EventId {
        m.begin(Kind::Abs, "test", Val::Unit, None, "")
    }

    #[test]
    fn sequential_writes_then_read_sees_latest() {
        let m = SimMem::new();
        let p = abs(&m);
        m.step(0, p, "A[0]", RegOp::Write(Val::Int(2)), "").unwrap();
        let w = m.step(0, p, "A[0]", RegOp::Write(Val::Int(3)), "").unwrap();
        assert_eq!(w, Val::Unit);
        assert_eq!(m.step(0, p, "A[0]", RegOp::Read, "").unwrap(), Val::Int(3));
        let h = m.history(Meta { algorithm: "t".into(), n: 1, initial: vec![], seed: None, schedule: None });
        assert_eq!(h.rf, vec![(EventId(2), EventId(3))]);
    }

    #[test]
    fn read_uninitialized_is_error() {
        let m = SimMem::new();
        let p = abs(&m);
        assert_eq!(m.step(0, p, "B[0]", RegOp::Read, ""), Err(RegError::Uninitialized("B[0]".into())));
    }

    #[test]
    fn sc_without_ll_is_error() {
        let m = SimMem::new();
        let p = abs(&m);
        m.step(0, p, "X", RegOp::Write(Val::Bool(false)), "").unwrap();
        assert_eq!(m.step(0, p, "X", RegOp::Sc(Val::Bool(true)), ""), Err(RegError::NoLink("X".into())));
        assert_eq!(m.step(0, p, "X", RegOp::Vl, ""), Err(RegError::NoLink("X".into())));
    }

    #[test]
    fn llsc_interference() {
        let m = SimMem::new();
        let p = abs(&m);
        let q = abs(&m);
        m.step(0, p, "X", RegOp::Write(Val::Int(0)), "").unwrap();
        m.step(0, p, "X", RegOp::Ll, "").unwrap();
        m.step(1, q, "X", RegOp::Ll, "").unwrap();
        assert_eq!(m.step(1, q, "X", RegOp::Sc(Val::Int(1)), "").unwrap(), Val::Bool(true));
        assert_eq!(m.step(0, p, "X", RegOp::Vl, "").unwrap(), Val::Bool(false));
        assert_eq!(m.step(0, p, "X", RegOp::Sc(Val::Int(2)), "").unwrap(), Val::Bool(false));
        assert_eq!(m.peek("X"), Some(Val::Int(1)));
    }

    #[test]
    fn plain_write_breaks_link() {
        let m = SimMem::new();
        let p = abs(&m);
        m.step(0, p, "B[0]", RegOp::Write(Val::Bot), "").unwrap();
        m.step(0, p, "B[0]", RegOp::Ll, "").unwrap();
        m.step(1, p, "B[0]", RegOp::Write(Val::Bot), "").unwrap();
        assert_eq!(m.step(0, p, "B[0]", RegOp::Sc(Val::Int(5)), "").unwrap(), Val::Bool(false));
    }

    #[test]
    fn vl_matches_sc_twin_run() {
        // Run identical prefixes, then VL on one copy and SC on the other.
        for interfere in [false, true] {
            let m = SimMem::new();
            let p = abs(&m);
            m.step(0, p, "X", RegOp::Write(Val::Int(0)), "").unwrap();
            m.step(0, p, "X", RegOp::Ll, "").unwrap();
            if interfere {
                m.step(1, p, "X", RegOp::Write(Val::Int(9)), "").unwrap();
            }
            let twin = m.clone();
            let vl = m.step(0, p, "X", RegOp::Vl, "").unwrap();
            let sc = twin.step(0, p, "X", RegOp::Sc(Val::Int(1)), "").unwrap();
            assert_eq!(vl, sc);
            assert_eq!(vl, Val::Bool(!interfere));
        }
    }

    #[test]
    fn conc_mem_records_dense_history() {
        let m = ConcMem::new(["A[0]".to_string()]);
        std::thread::scope(|s| {
            for t in 0..4 {
                let m = &m;
                s.spawn(move || {
                    let p = m.begin(Kind::Abs, "test", Val::Unit, None, "");
                    m.step(t, p, "A[0]", RegOp::Write(Val::Int(t as i64)), "").unwrap();
                    m.finish(p, Val::Unit, None);
                });
            }
        });
        let h = m.into_history(Meta { algorithm: "t".into(), n: 1, initial: vec![], seed: None, schedule: None });
        assert_eq!(h.events.len(), 8);
        assert!(h.events.iter().enumerate().all(|(k, e)| e.id.ix() == k && e.terminated()));
        assert!(crate::event::validate(&h).is_empty());
    }
}
