//! Constructive linearization from snapshot-level visibility, sequential
//! replay, and a brute-force oracle.
//!
//! The construction works backwards: it repeatedly removes a *maximal
//! candidate* — a `◁`-maximal event that is either the greatest remaining
//! write in the write order `<w` and unobserved by any remaining scan, or a
//! scan whose observed writes are all greatest in their cells — and places it
//! last. Reversing the picks gives the linearization.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::event::{returns_before, EventId, History, Val};
use crate::visibility::{EdgeSet, ReachBuilder, Visibility};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LinError {
    #[error("write happens-before order has a cycle through {0:?}")]
    Cycle(Vec<EventId>),
    #[error("no maximal candidate among remaining events {0:?}")]
    NoCandidate(Vec<EventId>),
    #[error("constructed order puts {1} before {0} although {0} happens before {1}")]
    Order(EventId, EventId),
}

impl LinError {
    pub fn witnesses(&self) -> Vec<EventId> {
        match self {
            LinError::Cycle(w) | LinError::NoCandidate(w) => w.clone(),
            LinError::Order(a, b) => vec![*a, *b],
        }
    }
}

/// The total order `<w` on effectful writes, and its per-cell projections.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WriteOrder {
    pub order: Vec<EventId>,
    pub per_cell: BTreeMap<usize, Vec<EventId>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayStep {
    pub event: EventId,
    pub array: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Linearization {
    pub order: Vec<EventId>,
    pub replay: Vec<ReplayStep>,
    pub legal: bool,
}

impl Linearization {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("linearization serializes")
    }
}

/// `E_c`: terminated scans and effectful writes, in id order.
pub fn completed_set(v: &Visibility) -> Vec<EventId> {
    let mut out: Vec<EventId> = v.writes.iter().filter(|w| w.wa.is_some()).map(|w| w.id).collect();
    out.extend(v.scans.iter().copied().filter(|&s| v.event(s).terminated()));
    out.sort_unstable();
    out
}

fn effectful(v: &Visibility) -> Vec<EventId> {
    v.writes.iter().filter(|w| w.wa.is_some()).map(|w| w.id).collect()
}

/// `wrDiff(w_i, w'_j)`: `i ≠ j`, some scan observes `w_i` and a `w_j` with `w_j ◁ w'_j`.
pub fn wr_diff(v: &Visibility) -> BTreeSet<(EventId, EventId)> {
    let sl = v.s_level();
    let ws = effectful(v);
    let cell = |w: EventId| v.write(w).map(|w| w.cell);
    let mut out = BTreeSet::new();
    for &s in &v.scans {
        let obs = sl.observed_by(s);
        for &wi in obs {
            for &wj in obs {
                if cell(wi) == cell(wj) {
                    continue;
                }
                for &wj2 in &ws {
                    if cell(wj2) == cell(wj) && sl.hb(wj, wj2) {
                        out.insert((wi, wj2));
                    }
                }
            }
        }
    }
    out
}

/// Generating edges of `whb = (◁|𝕎 ∪ wrDiff)⁺` over effectful writes.
fn whb_generators(v: &Visibility) -> Vec<(EventId, EventId)> {
    let sl = v.s_level();
    let ws = effectful(v);
    let mut out: BTreeSet<(EventId, EventId)> = wr_diff(v);
    for &a in &ws {
        for &b in &ws {
            if a != b && sl.hb(a, b) {
                out.insert((a, b));
            }
        }
    }
    out.into_iter().collect()
}

/// The transitive closure `whb` as an edge set.
pub fn whb_edges(v: &Visibility) -> EdgeSet {
    let ws = effectful(v);
    let ix: BTreeMap<EventId, u32> = ws.iter().enumerate().map(|(k, w)| (*w, k as u32)).collect();
    let mut b = ReachBuilder::new(ws.len());
    for (a, c) in whb_generators(v) {
        b.edge(ix[&a], ix[&c]);
    }
    let r = b.build();
    let mut pairs = Vec::new();
    for (x, &a) in ws.iter().enumerate() {
        for (y, &c) in ws.iter().enumerate() {
            if r.hb(x as u32, y as u32) {
                pairs.push((a.0 as u64, c.0 as u64));
            }
        }
    }
    EdgeSet::new("whb", pairs)
}

/// Topological extension of `whb`, ties broken by (end tick, id).
pub fn write_order(v: &Visibility) -> Result<WriteOrder, LinError> {
    let ws = effectful(v);
    let ix: BTreeMap<EventId, usize> = ws.iter().enumerate().map(|(k, w)| (*w, k)).collect();
    let gens = whb_generators(v);
    let mut succ = vec![Vec::new(); ws.len()];
    let mut indeg = vec![0usize; ws.len()];
    for &(a, b) in &gens {
        succ[ix[&a]].push(ix[&b]);
        indeg[ix[&b]] += 1;
    }
    let key = |k: usize| {
        let e = v.event(ws[k]);
        Reverse((e.end, e.id))
    };
    let mut heap: BinaryHeap<(Reverse<(crate::event::Tick, EventId)>, usize)> =
        (0..ws.len()).filter(|&k| indeg[k] == 0).map(|k| (key(k), k)).collect();
    let mut order = Vec::with_capacity(ws.len());
    while let Some((_, k)) = heap.pop() {
        order.push(ws[k]);
        for &s in &succ[k] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push((key(s), s));
            }
        }
    }
    if order.len() < ws.len() {
        let mut b = ReachBuilder::new(ws.len());
        for &(a, c) in &gens {
            b.edge(ix[&a] as u32, ix[&c] as u32);
        }
        let cyc = b.build().cycle().map(|c| c.iter().map(|&k| ws[k as usize]).collect()).unwrap_or_default();
        return Err(LinError::Cycle(cyc));
    }
    let mut per_cell: BTreeMap<usize, Vec<EventId>> = BTreeMap::new();
    for &w in &order {
        if let Some(aw) = v.write(w) {
            per_cell.entry(aw.cell).or_default().push(w);
        }
    }
    Ok(WriteOrder { order, per_cell })
}

/// A maximal candidate of `remaining`, preferring scans, then the lowest id.
pub fn pick_maximal_candidate(
    v: &Visibility,
    rank: &BTreeMap<EventId, usize>,
    remaining: &BTreeSet<EventId>,
) -> Option<EventId> {
    let sl = v.s_level();
    let maximal = |e: EventId| !remaining.iter().any(|&x| x != e && sl.hb(e, x));
    let is_write = |e: EventId| rank.contains_key(&e);
    let greatest_in = |w: EventId, same_cell: bool| {
        let c = v.write(w).map(|w| w.cell);
        remaining
            .iter()
            .filter(|&&x| is_write(x) && (!same_cell || v.write(x).map(|x| x.cell) == c))
            .all(|x| rank[x] <= rank[&w])
    };
    let scan = remaining.iter().copied().filter(|&e| !is_write(e)).find(|&s| {
        maximal(s) && sl.observed_by(s).iter().all(|&w| remaining.contains(&w) && greatest_in(w, true))
    });
    scan.or_else(|| {
        remaining.iter().copied().filter(|&e| is_write(e)).find(|&w| {
            let observed = remaining.iter().any(|&s| !is_write(s) && sl.rf.contains(&(w, s)));
            !observed && greatest_in(w, false) && maximal(w)
        })
    })
}

/// Build, check and replay a linearization of `E_c`.
pub fn linearize(v: &Visibility) -> Result<Linearization, LinError> {
    let wo = write_order(v)?;
    let rank: BTreeMap<EventId, usize> = wo.order.iter().enumerate().map(|(k, w)| (*w, k)).collect();
    let ec = completed_set(v);
    let mut remaining: BTreeSet<EventId> = ec.iter().copied().collect();
    let mut picks = Vec::with_capacity(ec.len());
    while !remaining.is_empty() {
        let e = pick_maximal_candidate(v, &rank, &remaining)
            .ok_or_else(|| LinError::NoCandidate(remaining.iter().copied().collect()))?;
        remaining.remove(&e);
        picks.push(e);
    }
    picks.reverse();
    let pos: BTreeMap<EventId, usize> = picks.iter().enumerate().map(|(k, e)| (*e, k)).collect();
    let sl = v.s_level();
    for &a in &ec {
        for &b in &ec {
            if a != b && sl.hb(a, b) && pos[&a] > pos[&b] {
                return Err(LinError::Order(a, b));
            }
        }
    }
    Ok(replay(v.h, &picks))
}

/// Run `order` against a sequential snapshot starting from the history's
/// initial array.
pub fn replay(h: &History, order: &[EventId]) -> Linearization {
    let mut array = h.meta.initial.clone();
    let mut steps = Vec::with_capacity(order.len());
    let mut legal = true;
    for &id in order {
        let e = h.event(id);
        match e.op.as_str() {
            "write" => {
                match e.input.to_ints().as_deref() {
                    Some(&[i, val]) if (i as usize) < array.len() => array[i as usize] = val,
                    _ => legal = false,
                }
                if !matches!(e.output, None | Some(Val::Unit)) {
                    legal = false;
                }
            }
            "scan" => {
                if e.output.as_ref().and_then(Val::to_ints).as_deref() != Some(array.as_slice()) {
                    legal = false;
                }
            }
            _ => legal = false,
        }
        steps.push(ReplayStep { event: id, array: array.clone() });
    }
    Linearization { order: order.to_vec(), replay: steps, legal }
}

/// Default bound on the number of operations the oracle will search over.
pub const ORACLE_GUARD: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum OracleResult {
    Linearizable(Linearization),
    /// No legal order exists; `states` is the number of search states refuted.
    NotLinearizable { states: usize },
    SizeGuard { ops: usize, guard: usize },
}

impl OracleResult {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, OracleResult::Linearizable(_))
    }
}

/// Exhaustive search for a legal order of the abstract operations extending
/// returns-before, independent of any visibility relation. Terminated
/// operations are mandatory, pending writes optional, pending scans dropped.
pub fn brute_force_linearize(h: &History, guard: usize) -> OracleResult {
    let mut ops: Vec<EventId> = Vec::new();
    for e in h.events.iter().filter(|e| e.is_top_abs()) {
        match (e.op.as_str(), e.terminated()) {
            ("write", _) | ("scan", true) => ops.push(e.id),
            _ => {}
        }
    }
    if ops.len() > guard {
        return OracleResult::SizeGuard { ops: ops.len(), guard };
    }
    let m = ops.len();
    let ev = |k: usize| h.event(ops[k]);
    let preds: Vec<u32> = (0..m)
        .map(|k| (0..m).filter(|&j| returns_before(ev(j), ev(k))).fold(0u32, |acc, j| acc | 1 << j))
        .collect();
    let mandatory: u32 = (0..m).filter(|&k| ev(k).terminated()).fold(0, |acc, k| acc | 1 << k);
    let mut search = Search { h, ops: &ops, preds: &preds, mandatory, failed: HashSet::new(), path: Vec::new() };
    let array = h.meta.initial.clone();
    if search.dfs(0, array) {
        OracleResult::Linearizable(replay(h, &search.path))
    } else {
        OracleResult::NotLinearizable { states: search.failed.len() }
    }
}

struct Search<'a> {
    h: &'a History,
    ops: &'a [EventId],
    preds: &'a [u32],
    mandatory: u32,
    failed: HashSet<(u32, Vec<i64>)>,
    path: Vec<EventId>,
}

impl Search<'_> {
    fn dfs(&mut self, placed: u32, array: Vec<i64>) -> bool {
        if placed & self.mandatory == self.mandatory {
            return true;
        }
        if self.failed.contains(&(placed, array.clone())) {
            return false;
        }
        for k in 0..self.ops.len() {
            let bit = 1u32 << k;
            if placed & bit != 0 || self.preds[k] & !placed != 0 {
                continue;
            }
            let e = self.h.event(self.ops[k]);
            let mut next = array.clone();
            let ok = match e.op.as_str() {
                "write" => match e.input.to_ints().as_deref() {
                    Some(&[i, val]) if (i as usize) < next.len() => {
                        next[i as usize] = val;
                        true
                    }
                    _ => false,
                },
                _ => e.output.as_ref().and_then(Val::to_ints).as_deref() == Some(array.as_slice()),
            };
            if !ok {
                continue;
            }
            self.path.push(e.id);
            if self.dfs(placed | bit, next) {
                return true;
            }
            self.path.pop();
        }
        self.failed.insert((placed, array));
        false
    }
}
