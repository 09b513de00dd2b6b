//! Visibility: happens-before at every level, virtual scans, and the derived
//! abstract relations.
//!
//! Three graphs are built from a history, each answering `a ◁ b` queries:
//!
//! | level | nodes                      | ≺ generators      |
//! |-------|----------------------------|-------------------|
//! | rep   | every event (by id)        | rf ∪ ll           |
//! | F     | abs writes ∪ virtual scans | rf_F ∪ wr         |
//! | S     | effectful writes ∪ scans   | rf ∪ wr ∪ sc      |
//!
//! Returns-before is never materialised as pairs. It is encoded with one
//! auxiliary node per distinct start tick (see [`ReachBuilder::interval_layer`]),
//! which keeps the graph linear in the number of events. The scan order `sc`
//! is encoded the same way over virtual-scan intervals.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use fixedbitset::FixedBitSet;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{afek_exit, Algorithm};
use crate::event::{returns_before, Event, EventId, History, Kind, Label, Tick, Val, Violation};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum VisError {
    #[error("unknown algorithm {0:?} in history metadata")]
    UnknownAlgorithm(String),
}

/// Reachability over a finite graph with lazily computed ancestor sets.
pub struct Reach {
    real: usize,
    pred: Vec<Vec<u32>>,
    spans: Vec<Option<(Tick, Tick)>>,
    anc: Vec<OnceCell<FixedBitSet>>,
    acyclic: OnceCell<Option<Vec<u32>>>,
}

pub struct ReachBuilder {
    real: usize,
    total: usize,
    edges: Vec<(u32, u32)>,
    spans: Vec<Option<(Tick, Tick)>>,
}

impl ReachBuilder {
    pub fn new(real: usize) -> ReachBuilder {
        ReachBuilder { real, total: real, edges: Vec::new(), spans: vec![None; real] }
    }

    pub fn edge(&mut self, a: u32, b: u32) {
        self.edges.push((a, b));
    }

    /// Add the relation `x ⊏ y ⟺ x.end < y.start` over `items`.
    ///
    /// Distinct start ticks `s_0 < … < s_m` get auxiliary nodes chained
    /// `aux_k → aux_{k+1}`; `aux_k → x` for every `x` starting at `s_k`, and a
    /// terminated `x` links to the first `aux_k` with `s_k > x.end`. A path
    /// `x → aux_k →* aux_j → y` exists exactly when `x ⊏ y`.
    ///
    /// With `fast_path`, the spans are also used to short-circuit `hb`
    /// queries (valid only when this layer is plain returns-before).
    pub fn interval_layer(&mut self, items: &[(u32, (Tick, Tick))], fast_path: bool) {
        let mut starts: Vec<Tick> = items.iter().map(|(_, (s, _))| *s).collect();
        starts.sort_unstable();
        starts.dedup();
        let base = self.total as u32;
        self.total += starts.len();
        for k in 1..starts.len() as u32 {
            self.edges.push((base + k - 1, base + k));
        }
        for &(x, (s, e)) in items {
            let k = starts.binary_search(&s).expect("start is indexed") as u32;
            self.edges.push((base + k, x));
            if !e.is_inf() {
                let next = starts.partition_point(|t| *t <= e);
                if next < starts.len() {
                    self.edges.push((x, base + next as u32));
                }
            }
            if fast_path {
                self.spans[x as usize] = Some((s, e));
            }
        }
    }

    pub fn build(self) -> Reach {
        let mut pred = vec![Vec::new(); self.total];
        for (a, b) in self.edges {
            pred[b as usize].push(a);
        }
        for p in &mut pred {
            p.sort_unstable();
            p.dedup();
        }
        Reach {
            real: self.real,
            anc: (0..self.real).map(|_| OnceCell::new()).collect(),
            pred,
            spans: self.spans,
            acyclic: OnceCell::new(),
        }
    }
}

impl Reach {
    pub fn len(&self) -> usize {
        self.real
    }

    pub fn is_empty(&self) -> bool {
        self.real == 0
    }

    /// Nodes (including auxiliary ones, index `>= len()`) with a non-empty path to `b`.
    pub fn ancestors(&self, b: u32) -> &FixedBitSet {
        self.anc[b as usize].get_or_init(|| {
            let mut seen = FixedBitSet::with_capacity(self.pred.len());
            let mut stack = Vec::new();
            for &p in &self.pred[b as usize] {
                if !seen.put(p as usize) {
                    stack.push(p);
                }
            }
            while let Some(x) = stack.pop() {
                for &p in &self.pred[x as usize] {
                    if !seen.put(p as usize) {
                        stack.push(p);
                    }
                }
            }
            seen
        })
    }

    /// Real nodes of some cycle, if the graph has one.
    pub fn cycle(&self) -> Option<&[u32]> {
        self.acyclic
            .get_or_init(|| {
                let mut g: DiGraph<(), ()> = DiGraph::with_capacity(self.pred.len(), 0);
                for _ in 0..self.pred.len() {
                    g.add_node(());
                }
                for (b, ps) in self.pred.iter().enumerate() {
                    for &a in ps {
                        g.add_edge(NodeIndex::new(a as usize), NodeIndex::new(b), ());
                    }
                }
                tarjan_scc(&g).into_iter().find_map(|scc| {
                    let looped = scc.len() > 1 || self.pred[scc[0].index()].contains(&(scc[0].index() as u32));
                    looped.then(|| {
                        let mut real: Vec<u32> =
                            scc.iter().map(|x| x.index() as u32).filter(|&x| (x as usize) < self.real).collect();
                        real.sort_unstable();
                        real
                    })
                })
            })
            .as_deref()
    }

    pub fn is_acyclic(&self) -> bool {
        self.cycle().is_none()
    }

    /// `a ◁ b`: a non-empty path from `a` to `b`.
    pub fn hb(&self, a: u32, b: u32) -> bool {
        if let (Some(x), Some(y)) = (self.spans[a as usize], self.spans[b as usize]) {
            if returns_before(&x, &y) {
                return true;
            }
            // b ⊏ a together with a ◁ b would close a cycle
            if returns_before(&y, &x) && self.is_acyclic() {
                return false;
            }
        }
        if a == b && self.is_acyclic() {
            return false;
        }
        self.ancestors(b).contains(a as usize)
    }

    /// `a ⊴ b`.
    pub fn hb_eq(&self, a: u32, b: u32) -> bool {
        a == b || self.hb(a, b)
    }

    /// Kahn order over all nodes; `None` when cyclic.
    pub fn topo(&self) -> Option<Vec<u32>> {
        let total = self.pred.len();
        let mut succ = vec![Vec::new(); total];
        let mut indeg = vec![0usize; total];
        for (b, ps) in self.pred.iter().enumerate() {
            indeg[b] = ps.len();
            for &a in ps {
                succ[a as usize].push(b as u32);
            }
        }
        let mut queue: Vec<u32> = (0..total as u32).filter(|&x| indeg[x as usize] == 0).collect();
        let mut order = Vec::with_capacity(total);
        while let Some(x) = queue.pop() {
            order.push(x);
            for &y in &succ[x as usize] {
                indeg[y as usize] -= 1;
                if indeg[y as usize] == 0 {
                    queue.push(y);
                }
            }
        }
        (order.len() == total).then_some(order)
    }

    /// Pairs `(e, e')` with a path `e →⁺ e'` but `e' ⊑ e` (as given by `span`).
    ///
    /// A cycle yields its members paired with themselves. Otherwise, for each
    /// `e'` the ancestor with the latest start is found in one topological
    /// pass; `e' ⊏ e` for some ancestor `e` iff that start exceeds `e'.end`.
    pub fn late_ancestors(&self, span: impl Fn(u32) -> (Tick, Tick)) -> Vec<(u32, u32)> {
        if let Some(c) = self.cycle() {
            return c.iter().map(|&x| (x, x)).collect();
        }
        let order = self.topo().expect("acyclic");
        let mut latest: Vec<Option<(Tick, u32)>> = vec![None; self.pred.len()];
        let mut out = Vec::new();
        for x in order {
            let mut best: Option<(Tick, u32)> = None;
            for &p in &self.pred[x as usize] {
                let own = ((p as usize) < self.real).then(|| (span(p).0, p));
                for cand in [own, latest[p as usize]].into_iter().flatten() {
                    if best.is_none_or(|b| cand.0 > b.0) {
                        best = Some(cand);
                    }
                }
            }
            latest[x as usize] = best;
            if (x as usize) < self.real {
                if let Some((s, e)) = best {
                    let end = span(x).1;
                    if !end.is_inf() && end < s {
                        out.push((e, x));
                    }
                }
            }
        }
        out
    }

    /// Real ancestors of `b`.
    pub fn real_ancestors(&self, b: u32) -> impl Iterator<Item = u32> + '_ {
        self.ancestors(b).ones().take_while(move |&x| x < self.real).map(|x| x as u32)
    }
}

fn id32(e: EventId) -> u32 {
    e.0
}

/// Rep-level relations: recorded rf/ll edges and `◁ = (⊏ ∪ rf ∪ ll)⁺`.
pub struct RepLevel<'h> {
    h: &'h History,
    pub rf_from: Vec<Vec<EventId>>,
    pub rf_to: Vec<Vec<EventId>>,
    pub ll_from: Vec<Vec<EventId>>,
    pub ll_to: Vec<Vec<EventId>>,
    hb: OnceCell<Reach>,
    prec: OnceCell<Reach>,
}

impl<'h> RepLevel<'h> {
    pub fn new(h: &'h History) -> RepLevel<'h> {
        let n = h.events.len();
        let mut rl = RepLevel {
            h,
            rf_from: vec![Vec::new(); n],
            rf_to: vec![Vec::new(); n],
            ll_from: vec![Vec::new(); n],
            ll_to: vec![Vec::new(); n],
            hb: OnceCell::new(),
            prec: OnceCell::new(),
        };
        for &(w, r) in &h.rf {
            if w.ix() < n && r.ix() < n {
                rl.rf_from[r.ix()].push(w);
                rl.rf_to[w.ix()].push(r);
            }
        }
        for &(l, c) in &h.ll {
            if l.ix() < n && c.ix() < n {
                rl.ll_from[c.ix()].push(l);
                rl.ll_to[l.ix()].push(c);
            }
        }
        rl
    }

    fn builder(&self) -> ReachBuilder {
        let mut b = ReachBuilder::new(self.h.events.len());
        for &(w, r) in self.h.rf.iter().chain(&self.h.ll) {
            if w.ix() < self.h.events.len() && r.ix() < self.h.events.len() {
                b.edge(id32(w), id32(r));
            }
        }
        b
    }

    /// `◁` over rep events (abs and virtual events are isolated nodes).
    pub fn reach(&self) -> &Reach {
        self.hb.get_or_init(|| {
            let mut b = self.builder();
            let items: Vec<(u32, (Tick, Tick))> = self
                .h
                .events
                .iter()
                .filter(|e| e.kind == Kind::Rep)
                .map(|e| (id32(e.id), (e.start, e.end)))
                .collect();
            b.interval_layer(&items, true);
            b.build()
        })
    }

    /// `≺⁺` only (no returns-before), for the well-formedness of observation.
    pub fn prec(&self) -> &Reach {
        self.prec.get_or_init(|| self.builder().build())
    }

    pub fn hb(&self, a: EventId, b: EventId) -> bool {
        self.reach().hb(id32(a), id32(b))
    }

    pub fn hb_eq(&self, a: EventId, b: EventId) -> bool {
        a == b || self.hb(a, b)
    }

    /// The unique recorded writer observed by `r`, if exactly one.
    pub fn writer(&self, r: EventId) -> Option<EventId> {
        match self.rf_from[r.ix()].as_slice() {
            [w] => Some(*w),
            _ => None,
        }
    }

    pub fn link(&self, c: EventId) -> Option<EventId> {
        match self.ll_from[c.ix()].as_slice() {
            [l] => Some(*l),
            _ => None,
        }
    }
}

/// An abstract write with its rep events located by label.
#[derive(Clone, Debug, Serialize)]
pub struct AbsWrite {
    pub id: EventId,
    pub cell: usize,
    pub value: i64,
    pub init: bool,
    pub wa: Option<EventId>,
    pub wx: Option<EventId>,
    pub wb: Option<EventId>,
    pub forwards: Vec<usize>,
}

/// One `forward` invocation of a multi-writer write.
#[derive(Clone, Debug, Serialize)]
pub struct Forward {
    pub write: EventId,
    pub cell: usize,
    pub group: String,
    pub fb: Option<EventId>,
    pub fa: Option<EventId>,
    pub fx: Option<EventId>,
    pub fsc: Option<EventId>,
    pub span: (Tick, Tick),
}

/// A ghost scan: the rep events that together constitute one logical scan.
#[derive(Clone, Debug, Serialize)]
pub struct VirtualScan {
    pub id: usize,
    /// The abs scan (or, for Afek, the write's embedded scan) it was taken from.
    pub owner: Option<EventId>,
    pub r: Vec<Option<EventId>>,
    pub on: Option<EventId>,
    pub on_obs: Option<EventId>,
    pub a: Vec<Option<EventId>>,
    pub off: Option<EventId>,
    pub off_obs: Option<EventId>,
    pub b: Vec<Option<EventId>>,
    pub x_init: Option<EventId>,
    pub ss: Option<EventId>,
    pub end: Option<EventId>,
    pub span: (Tick, Tick),
    pub complete: bool,
    /// Register-name prefix of its forwarding array (`B`, `B2`, ...).
    pub b_array: Option<String>,
}

impl VirtualScan {
    fn empty(id: usize, n: usize) -> VirtualScan {
        VirtualScan {
            id,
            owner: None,
            r: vec![None; n],
            on: None,
            on_obs: None,
            a: vec![None; n],
            off: None,
            off_obs: None,
            b: vec![None; n],
            x_init: None,
            ss: None,
            end: None,
            span: (Tick(0), Tick::INF),
            complete: false,
            b_array: None,
        }
    }

    /// Register name of `B[i]` for this virtual scan.
    pub fn b_cell(&self, i: usize) -> Option<String> {
        self.b_array.as_ref().map(|p| format!("{p}[{i}]"))
    }

    /// Slot events that bound the interval (auxiliary slots excluded).
    fn interval_slots(&self) -> impl Iterator<Item = Option<EventId>> + '_ {
        self.r
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .copied()
            .chain([self.on, self.on_obs, self.off, self.off_obs])
    }
}

/// Smallest interval covering `ids`, open-ended when `complete` is false.
fn hull(h: &History, ids: impl Iterator<Item = EventId>, complete: bool) -> (Tick, Tick) {
    let mut lo = Tick::INF;
    let mut hi = Tick(0);
    for id in ids {
        let e = h.event(id);
        lo = lo.min(e.start);
        hi = hi.max(e.end);
    }
    if lo.is_inf() {
        return (Tick(0), Tick::INF);
    }
    (lo, if complete { hi } else { Tick::INF })
}

/// A node of the abstract (F or S) level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbsNode {
    Event(EventId),
    Sigma(usize),
}

/// The forwarding level: abs writes and virtual scans under `rf_F ∪ wr`.
pub struct FLevel {
    pub nodes: Vec<AbsNode>,
    index: HashMap<AbsNode, u32>,
    pub reach: Reach,
}

impl FLevel {
    pub fn ix(&self, n: AbsNode) -> Option<u32> {
        self.index.get(&n).copied()
    }

    pub fn hb(&self, a: AbsNode, b: AbsNode) -> bool {
        match (self.ix(a), self.ix(b)) {
            (Some(x), Some(y)) => self.reach.hb(x, y),
            _ => false,
        }
    }

    pub fn hb_eq(&self, a: AbsNode, b: AbsNode) -> bool {
        a == b || self.hb(a, b)
    }
}

/// The snapshot level: effectful writes and top-level scans.
pub struct SLevel {
    pub nodes: Vec<EventId>,
    index: HashMap<EventId, u32>,
    /// `(w, s)` pairs of the snapshot reads-from.
    pub rf: BTreeSet<(EventId, EventId)>,
    pub rf_into: BTreeMap<EventId, Vec<EventId>>,
    pub wr: Vec<(EventId, EventId)>,
    pub reach: Reach,
    prec: Reach,
    uses_sc: bool,
}

impl SLevel {
    pub fn ix(&self, e: EventId) -> Option<u32> {
        self.index.get(&e).copied()
    }

    pub fn contains(&self, e: EventId) -> bool {
        self.index.contains_key(&e)
    }

    pub fn hb(&self, a: EventId, b: EventId) -> bool {
        match (self.ix(a), self.ix(b)) {
            (Some(x), Some(y)) => self.reach.hb(x, y),
            _ => false,
        }
    }

    pub fn hb_eq(&self, a: EventId, b: EventId) -> bool {
        a == b || self.hb(a, b)
    }

    /// `≺⁺` without returns-before.
    pub fn prec(&self) -> &Reach {
        &self.prec
    }

    pub fn observed_by(&self, s: EventId) -> &[EventId] {
        self.rf_into.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn uses_sc(&self) -> bool {
        self.uses_sc
    }
}

/// Everything derived from one history.
pub struct Visibility<'h> {
    pub h: &'h History,
    pub alg: Algorithm,
    pub n: usize,
    pub rep: RepLevel<'h>,
    children: HashMap<(EventId, &'h str), EventId>,
    virtuals: HashMap<EventId, Vec<EventId>>,
    pub writes: Vec<AbsWrite>,
    write_ix: HashMap<EventId, usize>,
    pub scans: Vec<EventId>,
    pub forwards: Vec<Forward>,
    pub sigmas: Vec<VirtualScan>,
    /// Σ: abs scan → virtual scan.
    pub sigma_of: BTreeMap<EventId, usize>,
    /// `(w, σ)` forwarding visibility.
    pub fwd: BTreeSet<(EventId, usize)>,
    /// `(w, σ)` reads-from at the forwarding level.
    pub rf_f: BTreeSet<(EventId, usize)>,
    rf_by_sigma: Vec<Vec<EventId>>,
    /// Problems met while deriving (e.g. an ill-founded Σ); reported by the checker.
    pub anomalies: Vec<Violation>,
    wr: OnceCell<Vec<(EventId, EventId)>>,
    f_level: OnceCell<FLevel>,
    s_level: OnceCell<SLevel>,
}

impl<'h> Visibility<'h> {
    pub fn new(h: &'h History) -> Result<Visibility<'h>, VisError> {
        let alg: Algorithm =
            h.meta.algorithm.parse().map_err(|_| VisError::UnknownAlgorithm(h.meta.algorithm.clone()))?;
        let mut children = HashMap::new();
        let mut virtuals: HashMap<EventId, Vec<EventId>> = HashMap::new();
        for e in &h.events {
            if let Some(p) = e.parent {
                children.entry((p, e.label.as_str())).or_insert(e.id);
                if e.kind == Kind::Virtual {
                    virtuals.entry(p).or_default().push(e.id);
                }
            }
        }
        let mut v = Visibility {
            h,
            alg,
            n: h.meta.n,
            rep: RepLevel::new(h),
            children,
            virtuals,
            writes: Vec::new(),
            write_ix: HashMap::new(),
            scans: h.abs_scans().map(|e| e.id).collect(),
            forwards: Vec::new(),
            sigmas: Vec::new(),
            sigma_of: BTreeMap::new(),
            fwd: BTreeSet::new(),
            rf_f: BTreeSet::new(),
            rf_by_sigma: Vec::new(),
            anomalies: Vec::new(),
            wr: OnceCell::new(),
            f_level: OnceCell::new(),
            s_level: OnceCell::new(),
        };
        v.collect_writes();
        match alg {
            Algorithm::Naive | Algorithm::Jayanti1 | Algorithm::Jayanti2 => v.sigmas_identity(),
            Algorithm::Jayanti3 => v.sigmas_multi(),
            Algorithm::Afek => v.sigmas_afek(),
        }
        v.derive_fwd();
        v.derive_rf_f();
        Ok(v)
    }

    pub fn event(&self, id: EventId) -> &'h Event {
        self.h.event(id)
    }

    /// Child of `parent` carrying `label`.
    pub fn child(&self, parent: EventId, label: &str) -> Option<EventId> {
        self.children.get(&(parent, label)).copied()
    }

    pub fn write(&self, id: EventId) -> Option<&AbsWrite> {
        self.write_ix.get(&id).map(|&k| &self.writes[k])
    }

    /// The abs write whose `wa` is the rep event `wa`.
    pub fn write_of_wa(&self, wa: EventId) -> Option<&AbsWrite> {
        let w = self.write(self.event(wa).parent?)?;
        (w.wa == Some(wa)).then_some(w)
    }

    /// Whether the scan-side direct read needs the B-side confirmation.
    fn has_b_array(&self) -> bool {
        matches!(self.alg, Algorithm::Jayanti1 | Algorithm::Jayanti2 | Algorithm::Jayanti3)
    }

    fn collect_writes(&mut self) {
        let h = self.h;
        for e in h.abs_writes() {
            let Some((cell, value)) = e.input.to_ints().and_then(|v| (v.len() == 2).then(|| (v[0] as usize, v[1])))
            else {
                continue;
            };
            let mut w = AbsWrite {
                id: e.id,
                cell,
                value,
                init: e.label == "init",
                wa: self.child(e.id, "wa"),
                wx: self.child(e.id, "wx"),
                wb: self.child(e.id, "wb"),
                forwards: Vec::new(),
            };
            for g in ["f1", "f2"] {
                let get = |name: &str| self.child(e.id, &format!("{g}.{name}"));
                let (fb, fa, fx, fsc) = (get("fb"), get("fa"), get("fx"), get("fsc"));
                let ids: Vec<EventId> = [fb, fa, fx, fsc].into_iter().flatten().collect();
                if ids.is_empty() {
                    continue;
                }
                let done = fsc.is_some() || fx.is_some_and(|x| h.event(x).output == Some(Val::Bool(false)));
                w.forwards.push(self.forwards.len());
                self.forwards.push(Forward {
                    write: e.id,
                    cell,
                    group: g.to_string(),
                    fb,
                    fa,
                    fx,
                    fsc,
                    span: hull(h, ids.into_iter(), done),
                });
            }
            self.write_ix.insert(e.id, self.writes.len());
            self.writes.push(w);
        }
    }

    /// Single-scanner algorithms (and the naive baseline): Σ is the identity
    /// and each virtual scan spans its abs scan.
    fn sigmas_identity(&mut self) {
        let n = self.n;
        for &s in &self.scans.clone() {
            let e = self.event(s);
            let mut sg = VirtualScan::empty(self.sigmas.len(), n);
            sg.owner = Some(s);
            for i in 0..n {
                sg.a[i] = self.child(s, &format!("a[{i}]"));
                if self.has_b_array() {
                    sg.r[i] = self.child(s, &format!("r[{i}]"));
                    sg.b[i] = self.child(s, &format!("b[{i}]"));
                }
            }
            if self.has_b_array() {
                sg.on = self.child(s, "on");
                sg.off = self.child(s, "off");
                sg.b_array = Some("B".to_string());
            }
            if self.alg == Algorithm::Jayanti2 {
                sg.on_obs = sg.on;
                sg.off_obs = sg.off;
            }
            sg.span = (e.start, e.end);
            sg.complete = e.terminated();
            self.sigma_of.insert(s, sg.id);
            self.sigmas.push(sg);
        }
    }

    fn is_ok(&self, id: EventId) -> bool {
        self.event(id).output == Some(Val::Bool(true))
    }

    fn name_of(&self, id: EventId) -> Label<'h> {
        self.h.event(id).label()
    }

    /// Group-relative sibling: same parent, label `{group}.{name}`.
    fn sibling(&self, of: EventId, name: &str) -> Option<EventId> {
        let e = self.event(of);
        let g = e.label().group?;
        self.child(e.parent?, &format!("{g}.{name}"))
    }

    /// LL events observing `writer` that are linked to a successful SC/VL
    /// named `linked`, sorted by start.
    fn observers_linked(&self, writer: EventId, linked: &str) -> Vec<(EventId, EventId)> {
        let mut out: Vec<(EventId, EventId)> = self.rep.rf_to[writer.ix()]
            .iter()
            .filter(|&&l| self.event(l).op == "ll")
            .flat_map(|&l| self.rep.ll_to[l.ix()].iter().map(move |&c| (l, c)))
            .filter(|&(_, c)| self.name_of(c).name == linked)
            .collect();
        out.sort_by_key(|&(l, c)| (self.event(l).start, l, c));
        out
    }

    /// Multi-scanner extraction: one virtual scan per successful `on`.
    fn sigmas_multi(&mut self) {
        let n = self.n;
        let h = self.h;
        let ons: Vec<EventId> = h
            .events
            .iter()
            .filter(|e| e.kind == Kind::Rep && e.op == "sc" && e.label().name == "on" && self.is_ok(e.id))
            .map(|e| e.id)
            .collect();
        for on in ons {
            let mut sg = VirtualScan::empty(self.sigmas.len(), n);
            sg.on = Some(on);
            sg.x_init = self.rep.link(on);
            for i in 0..n {
                sg.r[i] = self.sibling(on, &format!("vr[{i}]"));
            }
            let pb = self.event(on).input.as_tuple().and_then(|t| t.get(2)).and_then(Val::as_int);
            sg.b_array = pb.map(|p| format!("B{p}"));
            sg.owner = self.event(on).parent;
            // ōn: the LL that observed `on` and enabled the successful off
            let off_pair =
                self.observers_linked(on, "off").into_iter().find(|&(_, c)| self.is_ok(c));
            if let Some((l, off)) = off_pair {
                sg.on_obs = Some(l);
                sg.off = Some(off);
                for i in 0..n {
                    sg.a[i] = self.sibling(off, &format!("va[{i}]"));
                }
                // ōff: the X-LL behind the phase-3 pass whose SS write succeeded
                let phase3 = self.observers_linked(off, "vlx").into_iter().find_map(|(l, vlx)| {
                    let ss = self.sibling(vlx, "ss_sc")?;
                    self.is_ok(ss).then_some((l, vlx, ss))
                });
                if let Some((l, vlx, ss)) = phase3 {
                    sg.off_obs = Some(l);
                    sg.ss = Some(ss);
                    for i in 0..n {
                        sg.b[i] = self.sibling(vlx, &format!("vb[{i}]"));
                    }
                }
                sg.end = self.observers_linked(off, "end").into_iter().map(|(_, c)| c).find(|&c| self.is_ok(c));
            }
            let complete = sg.interval_slots().all(|s| s.is_some());
            sg.complete = complete;
            sg.span = hull(h, sg.interval_slots().flatten(), sg.complete);
            self.sigmas.push(sg);
        }
        let by_ss: HashMap<EventId, usize> =
            self.sigmas.iter().filter_map(|s| s.ss.filter(|_| s.complete).map(|ss| (ss, s.id))).collect();
        for &s in &self.scans {
            let Some(read) = self.child(s, "s_ss") else { continue };
            if let Some(&k) = self.rep.writer(read).and_then(|w| by_ss.get(&w)) {
                self.sigma_of.insert(s, k);
            }
        }
    }

    /// Afek: the returning clean round of every collect is a virtual scan;
    /// a scan that borrowed a view maps through the writer's embedded scan.
    fn sigmas_afek(&mut self) {
        let n = self.n;
        let h = self.h;
        // owner → (parent holding the rep events, label prefix, exit label)
        let mut owners: Vec<(EventId, EventId, &'h str, &'h str)> = Vec::new();
        for &s in &self.scans {
            let e = self.event(s);
            if e.terminated() {
                owners.push((s, s, "", e.label.as_str()));
            }
        }
        for e in &h.events {
            if e.kind == Kind::Virtual && e.terminated() && e.label.starts_with("ws:") {
                if let Some(p) = e.parent {
                    owners.push((e.id, p, "ws.", e.label.as_str()));
                }
            }
        }
        let mut clean: HashMap<EventId, usize> = HashMap::new();
        let mut borrowed: HashMap<EventId, EventId> = HashMap::new();
        for &(owner, holder, prefix, exit) in &owners {
            let Some((k, view)) = afek_exit(exit) else {
                self.anomalies.push(Violation::new("A.exit", vec![owner], format!("unparseable exit tag {exit:?}")));
                continue;
            };
            match view {
                None => {
                    let mut sg = VirtualScan::empty(self.sigmas.len(), n);
                    sg.owner = Some(owner);
                    for i in 0..n {
                        sg.a[i] = self.child(holder, &format!("{prefix}k{k}.a[{i}]"));
                        sg.b[i] = self.child(holder, &format!("{prefix}k{k}.b[{i}]"));
                    }
                    sg.complete = sg.a.iter().chain(&sg.b).all(Option::is_some);
                    sg.span = hull(h, sg.a.iter().chain(&sg.b).flatten().copied(), sg.complete);
                    clean.insert(owner, sg.id);
                    self.sigmas.push(sg);
                }
                Some(i) => {
                    let b = self.child(holder, &format!("{prefix}k{k}.b[{i}]"));
                    let lender = b
                        .and_then(|b| self.rep.writer(b))
                        .and_then(|wa| self.event(wa).parent)
                        .and_then(|w| self.virtuals.get(&w))
                        .and_then(|vs| vs.iter().copied().find(|&v| self.event(v).label.starts_with("ws")));
                    match lender {
                        Some(ws) => {
                            borrowed.insert(owner, ws);
                        }
                        None => self.anomalies.push(Violation::new(
                            "A.sigma",
                            vec![owner],
                            format!("view borrowed through cell {i} has no embedded scan to map to"),
                        )),
                    }
                }
            }
        }
        let limit = h.events.len() + 1;
        for &s in &self.scans {
            let mut cur = s;
            for _ in 0..limit {
                if let Some(&k) = clean.get(&cur) {
                    self.sigma_of.insert(s, k);
                    break;
                }
                match borrowed.get(&cur) {
                    Some(&next) => cur = next,
                    None => break,
                }
            }
            if !self.sigma_of.contains_key(&s) && borrowed.contains_key(&s) {
                self.anomalies.push(Violation::new("A.sigma", vec![s], "Σ recursion does not reach a clean collect"));
            }
        }
    }

    /// (σ, i) slots filled by each `b` event.
    fn b_slots(&self) -> HashMap<EventId, Vec<(usize, usize)>> {
        let mut m: HashMap<EventId, Vec<(usize, usize)>> = HashMap::new();
        for sg in &self.sigmas {
            for (i, b) in sg.b.iter().enumerate() {
                if let Some(b) = b {
                    m.entry(*b).or_default().push((sg.id, i));
                }
            }
        }
        m
    }

    fn derive_fwd(&mut self) {
        let slots = self.b_slots();
        let mut fwd = BTreeSet::new();
        match self.alg {
            Algorithm::Jayanti1 => {
                for w in &self.writes {
                    let Some(wb) = w.wb else { continue };
                    for r in &self.rep.rf_to[wb.ix()] {
                        for &(sg, i) in slots.get(r).into_iter().flatten() {
                            if i == w.cell {
                                fwd.insert((w.id, sg));
                            }
                        }
                    }
                }
            }
            Algorithm::Jayanti2 | Algorithm::Jayanti3 => {
                for f in &self.forwards {
                    let (Some(fa), Some(fsc)) = (f.fa, f.fsc) else { continue };
                    for r in &self.rep.rf_to[fsc.ix()] {
                        for &(sg, i) in slots.get(r).into_iter().flatten() {
                            for &wa in &self.rep.rf_from[fa.ix()] {
                                if let Some(w) = self.write_of_wa(wa) {
                                    if i == w.cell {
                                        fwd.insert((w.id, sg));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Algorithm::Naive | Algorithm::Afek => {}
        }
        self.fwd = fwd;
    }

    /// Direct reads-from of a virtual scan, per cell: writes whose `wa` the
    /// slot `a_i` observed (confirmed by `r_i → b_i` when a B array exists).
    pub fn direct_rf(&self, sg: &VirtualScan, i: usize) -> Vec<EventId> {
        let Some(a) = sg.a[i] else { return Vec::new() };
        if self.has_b_array() {
            let (Some(r), Some(b)) = (sg.r[i], sg.b[i]) else { return Vec::new() };
            if !self.rep.rf_from[b.ix()].contains(&r) {
                return Vec::new();
            }
        }
        self.rep.rf_from[a.ix()]
            .iter()
            .filter_map(|&wa| self.write_of_wa(wa))
            .filter(|w| w.cell == i)
            .map(|w| w.id)
            .collect()
    }

    fn derive_rf_f(&mut self) {
        let mut rf = self.fwd.clone();
        for sg in &self.sigmas {
            for i in 0..self.n {
                for w in self.direct_rf(sg, i) {
                    rf.insert((w, sg.id));
                }
            }
        }
        let mut by = vec![Vec::new(); self.sigmas.len()];
        for &(w, s) in &rf {
            by[s].push(w);
        }
        self.rf_by_sigma = by;
        self.rf_f = rf;
    }

    /// Writes `w` with `rf_F(w, σ)`.
    pub fn rf_of_sigma(&self, sg: usize) -> &[EventId] {
        &self.rf_by_sigma[sg]
    }

    /// Writing visibility `wr(w, w') ⟺ wa(w) ◁ wa(w')`, same cell.
    pub fn wr(&self) -> &[(EventId, EventId)] {
        self.wr.get_or_init(|| {
            let mut per_cell: BTreeMap<usize, Vec<(EventId, EventId)>> = BTreeMap::new();
            for w in &self.writes {
                if let Some(wa) = w.wa {
                    per_cell.entry(w.cell).or_default().push((w.id, wa));
                }
            }
            let mut out = Vec::new();
            for ws in per_cell.values() {
                for &(w, wa) in ws {
                    for &(w2, wa2) in ws {
                        if w != w2 && self.rep.hb(wa, wa2) {
                            out.push((w, w2));
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
    }

    /// `◁` at the forwarding level.
    pub fn f_level(&self) -> &FLevel {
        self.f_level.get_or_init(|| {
            let mut nodes: Vec<AbsNode> = self.writes.iter().map(|w| AbsNode::Event(w.id)).collect();
            nodes.extend((0..self.sigmas.len()).map(AbsNode::Sigma));
            let index: HashMap<AbsNode, u32> = nodes.iter().enumerate().map(|(k, n)| (*n, k as u32)).collect();
            let mut b = ReachBuilder::new(nodes.len());
            for &(w, s) in &self.rf_f {
                b.edge(index[&AbsNode::Event(w)], index[&AbsNode::Sigma(s)]);
            }
            for &(w, w2) in self.wr() {
                b.edge(index[&AbsNode::Event(w)], index[&AbsNode::Event(w2)]);
            }
            let items: Vec<(u32, (Tick, Tick))> = nodes
                .iter()
                .enumerate()
                .map(|(k, n)| (k as u32, self.span(*n)))
                .collect();
            b.interval_layer(&items, true);
            FLevel { nodes, index, reach: b.build() }
        })
    }

    pub fn span(&self, n: AbsNode) -> (Tick, Tick) {
        match n {
            AbsNode::Event(e) => {
                let e = self.event(e);
                (e.start, e.end)
            }
            AbsNode::Sigma(s) => self.sigmas[s].span,
        }
    }

    /// Snapshot reads-from: `rf(w, s) ⟺ rf_F(w, Σ[s])`.
    pub fn s_rf(&self) -> BTreeSet<(EventId, EventId)> {
        let mut out = BTreeSet::new();
        for (&s, &sg) in &self.sigma_of {
            for &w in self.rf_of_sigma(sg) {
                out.insert((w, s));
            }
        }
        out
    }

    /// `sc(s, s') ⟺ Σ[s] ⊏ Σ[s']`.
    pub fn sc(&self, s: EventId, s2: EventId) -> bool {
        match (self.sigma_of.get(&s), self.sigma_of.get(&s2)) {
            (Some(&a), Some(&b)) => returns_before(&self.sigmas[a].span, &self.sigmas[b].span),
            _ => false,
        }
    }

    fn s_uses_wr(&self) -> bool {
        self.alg != Algorithm::Afek
    }

    fn s_uses_sc(&self) -> bool {
        self.has_b_array()
    }

    /// The snapshot level.
    pub fn s_level(&self) -> &SLevel {
        self.s_level.get_or_init(|| {
            let mut nodes: Vec<EventId> = self.writes.iter().filter(|w| w.wa.is_some()).map(|w| w.id).collect();
            nodes.extend(&self.scans);
            nodes.sort_unstable();
            let index: HashMap<EventId, u32> = nodes.iter().enumerate().map(|(k, e)| (*e, k as u32)).collect();
            let rf = self.s_rf();
            let mut rf_into: BTreeMap<EventId, Vec<EventId>> = BTreeMap::new();
            for &(w, s) in &rf {
                rf_into.entry(s).or_default().push(w);
            }
            let wr: Vec<(EventId, EventId)> = if self.s_uses_wr() { self.wr().to_vec() } else { Vec::new() };
            let prec_builder = || {
                let mut b = ReachBuilder::new(nodes.len());
                for &(w, s) in rf.iter().chain(&wr) {
                    b.edge(index[&w], index[&s]);
                }
                if self.s_uses_sc() {
                    let items: Vec<(u32, (Tick, Tick))> = self
                        .sigma_of
                        .iter()
                        .filter_map(|(s, &sg)| index.get(s).map(|&k| (k, self.sigmas[sg].span)))
                        .collect();
                    b.interval_layer(&items, false);
                }
                b
            };
            let mut b = prec_builder();
            let items: Vec<(u32, (Tick, Tick))> = nodes
                .iter()
                .map(|&e| {
                    let ev = self.event(e);
                    (index[&e], (ev.start, ev.end))
                })
                .collect();
            b.interval_layer(&items, true);
            let reach = b.build();
            let prec = prec_builder().build();
            SLevel { nodes, index, rf, rf_into, wr, reach, prec, uses_sc: self.s_uses_sc() }
        })
    }

    /// Derived relations as labelled edge lists. Pairs whose second column is
    /// a virtual scan use its index into [`Visibility::sigmas`].
    pub fn edge_sets(&self, with_closure: bool) -> Vec<EdgeSet> {
        let ids = |v: &mut dyn Iterator<Item = (EventId, EventId)>| -> Vec<(u64, u64)> {
            v.map(|(a, b)| (a.0 as u64, b.0 as u64)).collect()
        };
        let mut out = vec![
            EdgeSet::new("rf", ids(&mut self.h.rf.iter().copied())),
            EdgeSet::new("ll", ids(&mut self.h.ll.iter().copied())),
            EdgeSet::new("fwd", self.fwd.iter().map(|&(w, s)| (w.0 as u64, s as u64)).collect()),
            EdgeSet::new("rf_sigma", self.rf_f.iter().map(|&(w, s)| (w.0 as u64, s as u64)).collect()),
            EdgeSet::new("sigma", self.sigma_of.iter().map(|(&s, &k)| (s.0 as u64, k as u64)).collect()),
            EdgeSet::new("wr", ids(&mut self.wr().iter().copied())),
        ];
        let sl = self.s_level();
        out.push(EdgeSet::new("rf_scan", ids(&mut sl.rf.iter().copied())));
        if sl.uses_sc {
            let mut sc = Vec::new();
            for &s in &self.scans {
                for &s2 in &self.scans {
                    if self.sc(s, s2) {
                        sc.push((s.0 as u64, s2.0 as u64));
                    }
                }
            }
            out.push(EdgeSet::new("sc", sc));
        }
        if with_closure {
            let mut rb = Vec::new();
            let mut hb = Vec::new();
            for &a in &sl.nodes {
                for &b in &sl.nodes {
                    if returns_before(self.event(a), self.event(b)) {
                        rb.push((a.0 as u64, b.0 as u64));
                    }
                    if sl.hb(a, b) {
                        hb.push((a.0 as u64, b.0 as u64));
                    }
                }
            }
            out.push(EdgeSet::new("rb", rb));
            out.push(EdgeSet::new("hb", hb));
        }
        out
    }
}

/// A labelled binary relation, for export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EdgeSet {
    pub label: String,
    pub pairs: Vec<(u64, u64)>,
}

impl EdgeSet {
    pub fn new(label: &str, mut pairs: Vec<(u64, u64)>) -> EdgeSet {
        pairs.sort_unstable();
        pairs.dedup();
        EdgeSet { label: label.to_string(), pairs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: u64, e: u64) -> (Tick, Tick) {
        (Tick(s), if e == u64::MAX { Tick::INF } else { Tick(e) })
    }

    #[test]
    fn interval_layer_matches_returns_before() {
        let spans = [t(0, 3), t(1, 2), t(4, 6), t(5, 9), t(7, u64::MAX), t(3, 4)];
        let mut b = ReachBuilder::new(spans.len());
        let items: Vec<_> = spans.iter().enumerate().map(|(k, s)| (k as u32, *s)).collect();
        b.interval_layer(&items, false);
        let r = b.build();
        for (x, sx) in spans.iter().enumerate() {
            for (y, sy) in spans.iter().enumerate() {
                assert_eq!(r.hb(x as u32, y as u32), returns_before(sx, sy), "{x} {y}");
            }
        }
        assert!(r.is_acyclic());
    }

    #[test]
    fn edges_compose_with_intervals() {
        // 0 ≺ 1 (overlapping), 1 ⊏ 2: so 0 ◁ 2 even though 0 does not return before 2
        let spans = [t(0, 10), t(1, 2), t(3, 4)];
        let mut b = ReachBuilder::new(3);
        b.edge(0, 1);
        let items: Vec<_> = spans.iter().enumerate().map(|(k, s)| (k as u32, *s)).collect();
        b.interval_layer(&items, true);
        let r = b.build();
        assert!(r.hb(0, 2));
        assert!(!r.hb(2, 0));
    }

    #[test]
    fn cycles_are_reported() {
        let mut b = ReachBuilder::new(3);
        b.edge(0, 1);
        b.edge(1, 2);
        b.edge(2, 0);
        let r = b.build();
        assert_eq!(r.cycle(), Some(&[0, 1, 2][..]));
        assert!(r.hb(0, 0));
    }
}
