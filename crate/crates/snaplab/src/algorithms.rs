//! The snapshot algorithms, written once against a step interface.
//!
//! Algorithm code is ordinary straight-line Rust over [`Ctx`]. Each register
//! call is one scheduling point. The [`OpRunner`] context makes an operation
//! resumable without hand-written state machines: results of already executed
//! calls are cached and replayed, exactly one new register step is performed
//! per scheduling, and the next fresh register call returns
//! [`Interrupt::Yield`]. With `single_step` off the same code runs straight
//! through, which is how real threads execute it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventId, Kind, Val};
use crate::registers::{Memory, RegError, RegOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Naive,
    Jayanti1,
    Jayanti2,
    Jayanti3,
    Afek,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Naive, Algorithm::Jayanti1, Algorithm::Jayanti2, Algorithm::Jayanti3, Algorithm::Afek];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Naive => "naive",
            Algorithm::Jayanti1 => "jayanti1",
            Algorithm::Jayanti2 => "jayanti2",
            Algorithm::Jayanti3 => "jayanti3",
            Algorithm::Afek => "afek",
        }
    }

    /// Maximum number of register steps one operation may take.
    pub fn step_bound(self, n: usize, op: &Op) -> usize {
        let scan = matches!(op, Op::Scan);
        match self {
            Algorithm::Naive => if scan { n } else { 1 },
            Algorithm::Jayanti1 => if scan { 3 * n + 2 } else { 3 },
            Algorithm::Jayanti2 => if scan { 3 * n + 2 } else { 2 + 2 * 4 },
            Algorithm::Jayanti3 => if scan { 2 * (5 * n + 9) + 1 } else { 2 + 2 * 4 },
            Algorithm::Afek => 2 * n * (n + 1) + usize::from(!scan),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected naive, jayanti1, jayanti2, jayanti3 or afek)"))
    }
}

/// One scripted operation. JSON: `{"write":[i,v]}` or `"scan"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Write(usize, i64),
    Scan,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadScript {
    pub pid: usize,
    pub ops: Vec<Op>,
}

/// Per-thread operation lists. JSON: `{"threads":[{"pid":0,"ops":[...]}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpScript {
    pub threads: Vec<ThreadScript>,
}

impl OpScript {
    /// Threads with pids `0..k` in order.
    pub fn new(threads: Vec<Vec<Op>>) -> OpScript {
        OpScript {
            threads: threads.into_iter().enumerate().map(|(pid, ops)| ThreadScript { pid, ops }).collect(),
        }
    }

    pub fn pids(&self) -> Vec<usize> {
        self.threads.iter().map(|t| t.pid).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("cell index {index} out of range for n = {n}")]
    CellOutOfRange { index: usize, n: usize },
    #[error("{alg} requires a single scanner thread, found scans in threads {threads:?}")]
    MultipleScanners { alg: Algorithm, threads: Vec<usize> },
    #[error("{alg} requires a single writer per cell, cell {cell} is written by threads {threads:?}")]
    MultipleWriters { alg: Algorithm, cell: usize, threads: Vec<usize> },
    #[error("duplicate pid {0}")]
    DuplicatePid(usize),
    #[error("array length must be positive")]
    EmptyArray,
}

/// Enforce the algorithm's concurrency constraints on a script.
pub fn validate_script(alg: Algorithm, n: usize, script: &OpScript) -> Result<(), ScriptError> {
    if n == 0 {
        return Err(ScriptError::EmptyArray);
    }
    let mut pids = script.pids();
    pids.sort_unstable();
    if let Some(w) = pids.windows(2).find(|w| w[0] == w[1]) {
        return Err(ScriptError::DuplicatePid(w[0]));
    }
    for t in &script.threads {
        for op in &t.ops {
            if let Op::Write(i, _) = op {
                if *i >= n {
                    return Err(ScriptError::CellOutOfRange { index: *i, n });
                }
            }
        }
    }
    let single_scanner = matches!(alg, Algorithm::Jayanti1 | Algorithm::Jayanti2);
    let single_writer = matches!(alg, Algorithm::Jayanti1 | Algorithm::Afek);
    if single_scanner {
        let scanners: Vec<usize> = script
            .threads
            .iter()
            .enumerate()
            .filter(|(_, t)| t.ops.contains(&Op::Scan))
            .map(|(k, _)| k)
            .collect();
        if scanners.len() > 1 {
            return Err(ScriptError::MultipleScanners { alg, threads: scanners });
        }
    }
    if single_writer {
        for cell in 0..n {
            let writers: Vec<usize> = script
                .threads
                .iter()
                .enumerate()
                .filter(|(_, t)| t.ops.iter().any(|op| matches!(op, Op::Write(i, _) if *i == cell)))
                .map(|(k, _)| k)
                .collect();
            if writers.len() > 1 {
                return Err(ScriptError::MultipleWriters { alg, cell, threads: writers });
            }
        }
    }
    Ok(())
}

pub fn reg_a(i: usize) -> String {
    format!("A[{i}]")
}

pub fn reg_b(i: usize) -> String {
    format!("B[{i}]")
}

pub fn reg_ap(p: usize, i: usize) -> String {
    format!("A{p}[{i}]")
}

pub fn reg_bp(p: usize, i: usize) -> String {
    format!("B{p}[{i}]")
}

pub const REG_X: &str = "X";
pub const REG_SS: &str = "SS";

/// Every register an instance may touch.
pub fn registers(alg: Algorithm, n: usize, pids: &[usize]) -> Vec<String> {
    let mut regs: Vec<String> = (0..n).map(reg_a).collect();
    match alg {
        Algorithm::Naive | Algorithm::Afek => {}
        Algorithm::Jayanti1 | Algorithm::Jayanti2 => {
            regs.extend((0..n).map(reg_b));
            regs.push(REG_X.into());
        }
        Algorithm::Jayanti3 => {
            // pid 0 is always allocated: the initial X names it as owner.
            let mut ps: Vec<usize> = pids.iter().copied().chain([0]).collect();
            ps.sort_unstable();
            ps.dedup();
            for p in ps {
                regs.extend((0..n).map(|i| reg_ap(p, i)));
                regs.extend((0..n).map(|i| reg_bp(p, i)));
            }
            regs.push(REG_X.into());
            regs.push(REG_SS.into());
        }
    }
    regs
}

/// Value stored in an Afek cell: ⟨data, version, view⟩.
pub fn afek_cell(data: i64, ver: i64, view: &[i64]) -> Val {
    Val::Tuple(vec![Val::Int(data), Val::Int(ver), Val::ints(view)])
}

/// Initial X for the multi-scanner algorithm: ⟨phase 1, pA 0, pB 0, sync false⟩.
pub fn j3_initial_x() -> Val {
    x_tuple(1, 0, 0, false)
}

fn x_tuple(phase: i64, pa: usize, pb: usize, sync: bool) -> Val {
    Val::Tuple(vec![Val::Int(phase), Val::Int(pa as i64), Val::Int(pb as i64), Val::Bool(sync)])
}

/// Thread id used for the initialising steps.
pub const INIT_THREAD: usize = usize::MAX;

/// Record the initial state: one `write` abs event per cell (label `init`),
/// plus one `init` abs event for the control registers when the algorithm has
/// any. Forwarding arrays start uninitialised.
pub fn initialize<M: Memory>(alg: Algorithm, initial: &[i64], mem: &M) -> Result<(), RegError> {
    for (i, &v) in initial.iter().enumerate() {
        let input = Val::ints(&[i as i64, v]);
        let id = mem.begin(Kind::Abs, "write", input, None, "init");
        let stored = match alg {
            Algorithm::Afek => afek_cell(v, 0, initial),
            _ => Val::Int(v),
        };
        mem.step(INIT_THREAD, id, &reg_a(i), RegOp::Write(stored), "wa")?;
        mem.finish(id, Val::Unit, None);
    }
    let control: Vec<(&str, Val)> = match alg {
        Algorithm::Naive | Algorithm::Afek => vec![],
        Algorithm::Jayanti1 | Algorithm::Jayanti2 => vec![(REG_X, Val::Bool(false))],
        Algorithm::Jayanti3 => {
            vec![(REG_X, j3_initial_x()), (REG_SS, Val::Tuple(vec![Val::ints(initial), Val::Bool(false)]))]
        }
    };
    if !control.is_empty() {
        let id = mem.begin(Kind::Abs, "init", Val::Unit, None, "init");
        for (reg, v) in control {
            mem.step(INIT_THREAD, id, reg, RegOp::Write(v), reg)?;
        }
        mem.finish(id, Val::Unit, None);
    }
    Ok(())
}

/// Why an operation stopped before returning.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Interrupt {
    #[error("yielded to the scheduler")]
    Yield,
    #[error(transparent)]
    Fault(#[from] RegError),
}

pub type Step<T> = Result<T, Interrupt>;

/// What algorithm code can do: register steps and virtual sub-events.
pub trait Ctx {
    fn pid(&self) -> usize;
    fn reg(&mut self, reg: &str, op: RegOp, label: &str) -> Step<Val>;
    fn begin_virtual(&mut self, op: &str, label: &str) -> Step<EventId>;
    fn finish_virtual(&mut self, id: EventId, output: Val, label: String) -> Step<()>;
    /// Label to attach to the abs event when it finishes.
    fn exit_label(&mut self, label: String);

    fn read(&mut self, reg: &str, label: &str) -> Step<Val> {
        self.reg(reg, RegOp::Read, label)
    }
    fn write(&mut self, reg: &str, v: Val, label: &str) -> Step<()> {
        self.reg(reg, RegOp::Write(v), label).map(drop)
    }
    fn ll(&mut self, reg: &str, label: &str) -> Step<Val> {
        self.reg(reg, RegOp::Ll, label)
    }
    fn sc(&mut self, reg: &str, v: Val, label: &str) -> Step<bool> {
        self.reg(reg, RegOp::Sc(v), label).map(|r| r == Val::Bool(true))
    }
    fn vl(&mut self, reg: &str, label: &str) -> Step<bool> {
        self.reg(reg, RegOp::Vl, label).map(|r| r == Val::Bool(true))
    }
}

/// Persistent per-operation state between schedulings.
#[derive(Clone, Debug, Default)]
pub struct OpState {
    pub abs: Option<EventId>,
    cache: Vec<Val>,
    pub steps: usize,
}

/// The [`Ctx`] implementation over a [`Memory`].
pub struct OpRunner<'a, M: Memory> {
    pub mem: &'a M,
    pub thread: usize,
    pub pid: usize,
    pub op: &'a Op,
    pub state: &'a mut OpState,
    /// Perform at most one new register step, then yield.
    pub single_step: bool,
    pos: usize,
    stepped: bool,
    exit: Option<String>,
}

/// Result of driving an operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Progress {
    Done(Val),
    Pending,
}

impl<'a, M: Memory> OpRunner<'a, M> {
    pub fn new(mem: &'a M, thread: usize, pid: usize, op: &'a Op, state: &'a mut OpState, single_step: bool) -> Self {
        OpRunner { mem, thread, pid, op, state, single_step, pos: 0, stepped: false, exit: None }
    }

    fn abs(&mut self) -> EventId {
        if let Some(id) = self.state.abs {
            return id;
        }
        let (name, input) = match self.op {
            Op::Write(i, v) => ("write", Val::ints(&[*i as i64, *v])),
            Op::Scan => ("scan", Val::Unit),
        };
        let id = self.mem.begin(Kind::Abs, name, input, None, "");
        self.state.abs = Some(id);
        id
    }

    fn cached(&mut self) -> Option<Val> {
        let v = self.state.cache.get(self.pos).cloned();
        if v.is_some() {
            self.pos += 1;
        }
        v
    }

    fn remember(&mut self, v: &Val) {
        if self.single_step {
            self.state.cache.push(v.clone());
            self.pos += 1;
        }
    }

    /// Run the operation (one step in single-step mode, to completion otherwise)
    /// and close the abs event when it returns.
    pub fn drive(mut self, alg: Algorithm, n: usize) -> Result<Progress, RegError> {
        match run_op(alg, n, self.op, &mut self) {
            Ok(out) => {
                let id = self.abs();
                self.mem.finish(id, out.clone(), self.exit.take());
                Ok(Progress::Done(out))
            }
            Err(Interrupt::Yield) => Ok(Progress::Pending),
            Err(Interrupt::Fault(e)) => Err(e),
        }
    }
}

impl<M: Memory> Ctx for OpRunner<'_, M> {
    fn pid(&self) -> usize {
        self.pid
    }

    fn reg(&mut self, reg: &str, op: RegOp, label: &str) -> Step<Val> {
        let parent = self.abs();
        if let Some(v) = self.cached() {
            return Ok(v);
        }
        if self.single_step && self.stepped {
            return Err(Interrupt::Yield);
        }
        let v = self.mem.step(self.thread, parent, reg, op, label)?;
        self.stepped = true;
        self.state.steps += 1;
        self.remember(&v);
        Ok(v)
    }

    fn begin_virtual(&mut self, op: &str, label: &str) -> Step<EventId> {
        let parent = self.abs();
        if let Some(v) = self.cached() {
            return Ok(EventId(v.as_int().expect("cached id") as u32));
        }
        let id = self.mem.begin(Kind::Virtual, op, Val::Unit, Some(parent), label);
        self.remember(&Val::Int(id.0 as i64));
        Ok(id)
    }

    fn finish_virtual(&mut self, id: EventId, output: Val, label: String) -> Step<()> {
        if self.cached().is_some() {
            return Ok(());
        }
        self.mem.finish(id, output, Some(label));
        self.remember(&Val::Unit);
        Ok(())
    }

    fn exit_label(&mut self, label: String) {
        self.exit = Some(label);
    }
}

/// Execute one operation of `alg` against `c`.
pub fn run_op<C: Ctx>(alg: Algorithm, n: usize, op: &Op, c: &mut C) -> Step<Val> {
    match (alg, op) {
        (Algorithm::Naive, Op::Write(i, v)) => {
            c.write(&reg_a(*i), Val::Int(*v), "wa")?;
            Ok(Val::Unit)
        }
        (Algorithm::Naive, Op::Scan) => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                out.push(c.read(&reg_a(i), &format!("a[{i}]"))?);
            }
            Ok(Val::Tuple(out))
        }
        (Algorithm::Jayanti1, Op::Write(i, v)) => {
            c.write(&reg_a(*i), Val::Int(*v), "wa")?;
            if c.read(REG_X, "wx")? == Val::Bool(true) {
                c.write(&reg_b(*i), Val::Int(*v), "wb")?;
            }
            Ok(Val::Unit)
        }
        (Algorithm::Jayanti1, Op::Scan) => {
            c.write(REG_X, Val::Bool(true), "on")?;
            for i in 0..n {
                c.write(&reg_b(i), Val::Bot, &format!("r[{i}]"))?;
            }
            two_pass_tail(c, n)
        }
        (Algorithm::Jayanti2, Op::Write(i, v)) => {
            c.write(&reg_a(*i), Val::Int(*v), "wa")?;
            if c.ll(REG_X, "wx")? == Val::Bool(true) {
                forward(c, *i, &reg_b(*i), "f1")?;
                forward(c, *i, &reg_b(*i), "f2")?;
            }
            Ok(Val::Unit)
        }
        (Algorithm::Jayanti2, Op::Scan) => {
            for i in 0..n {
                c.write(&reg_b(i), Val::Bot, &format!("r[{i}]"))?;
            }
            c.write(REG_X, Val::Bool(true), "on")?;
            two_pass_tail(c, n)
        }
        (Algorithm::Jayanti3, Op::Write(i, v)) => {
            c.write(&reg_a(*i), Val::Int(*v), "wa")?;
            let x = XState::parse(&c.ll(REG_X, "wx")?);
            if x.phase == 2 {
                forward(c, *i, &reg_bp(x.pb, *i), "f1")?;
                forward(c, *i, &reg_bp(x.pb, *i), "f2")?;
            }
            Ok(Val::Unit)
        }
        (Algorithm::Jayanti3, Op::Scan) => {
            push_vs(c, n, "v1")?;
            push_vs(c, n, "v2")?;
            let ss = c.read(REG_SS, "s_ss")?;
            Ok(ss.as_tuple().expect("SS holds ⟨img, sync⟩")[0].clone())
        }
        (Algorithm::Afek, Op::Write(i, v)) => {
            let ws = c.begin_virtual("scan", "ws")?;
            let res = afek_collect(c, n, "ws.")?;
            c.finish_virtual(ws, res.output.clone(), format!("ws:{}", res.exit))?;
            let ver = res.last_b[*i].as_tuple().expect("afek cell")[1].as_int().expect("version");
            let view = res.output.to_ints().expect("view of ints");
            c.write(&reg_a(*i), afek_cell(*v, ver + 1, &view), "wa")?;
            Ok(Val::Unit)
        }
        (Algorithm::Afek, Op::Scan) => {
            let res = afek_collect(c, n, "")?;
            c.exit_label(res.exit);
            Ok(res.output)
        }
    }
}

/// The part shared by the single-scanner scans: read A, turn X off, repair from B.
fn two_pass_tail<C: Ctx>(c: &mut C, n: usize) -> Step<Val> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(c.read(&reg_a(i), &format!("a[{i}]"))?);
    }
    c.write(REG_X, Val::Bool(false), "off")?;
    for (i, slot) in out.iter_mut().enumerate() {
        let b = c.read(&reg_b(i), &format!("b[{i}]"))?;
        if !b.is_bot() {
            *slot = b;
        }
    }
    Ok(Val::Tuple(out))
}

fn forward<C: Ctx>(c: &mut C, i: usize, cell: &str, group: &str) -> Step<()> {
    c.ll(cell, &format!("{group}.fb"))?;
    let v = c.read(&reg_a(i), &format!("{group}.fa"))?;
    if c.vl(REG_X, &format!("{group}.fx"))? {
        c.sc(cell, v, &format!("{group}.fsc"))?;
    }
    Ok(())
}

/// Decoded multi-scanner control word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct XState {
    pub phase: i64,
    pub pa: usize,
    pub pb: usize,
    pub sync: bool,
}

impl XState {
    pub fn parse(v: &Val) -> XState {
        let t = v.as_tuple().expect("X holds a 4-tuple");
        XState {
            phase: t[0].as_int().expect("phase"),
            pa: t[1].as_int().expect("pA") as usize,
            pb: t[2].as_int().expect("pB") as usize,
            sync: t[3].as_bool().expect("sync"),
        }
    }
}

fn push_vs<C: Ctx>(c: &mut C, n: usize, g: &str) -> Step<()> {
    let p = c.pid();
    let mut x = XState::parse(&c.ll(REG_X, &format!("{g}.vx0"))?);
    if x.phase == 1 {
        for i in 0..n {
            c.write(&reg_bp(p, i), Val::Bot, &format!("{g}.vr[{i}]"))?;
        }
        c.sc(REG_X, x_tuple(2, x.pa, p, x.sync), &format!("{g}.on"))?;
        x = XState::parse(&c.ll(REG_X, &format!("{g}.vx1"))?);
    }
    if x.phase == 2 {
        for i in 0..n {
            let a = c.read(&reg_a(i), &format!("{g}.va[{i}]"))?;
            c.write(&reg_ap(p, i), a, &format!("{g}.vabar[{i}]"))?;
        }
        c.sc(REG_X, x_tuple(3, p, x.pb, x.sync), &format!("{g}.off"))?;
        x = XState::parse(&c.ll(REG_X, &format!("{g}.vx2"))?);
    }
    if x.phase == 3 {
        let mut view = Vec::with_capacity(n);
        for i in 0..n {
            let b = c.read(&reg_bp(x.pb, i), &format!("{g}.vb[{i}]"))?;
            view.push(if b.is_bot() { c.read(&reg_ap(x.pa, i), &format!("{g}.vau[{i}]"))? } else { b });
        }
        let ss = c.ll(REG_SS, &format!("{g}.ss_ll"))?;
        let ss_sync = ss.as_tuple().expect("SS holds ⟨img, sync⟩")[1].as_bool().expect("sync");
        let valid = c.vl(REG_X, &format!("{g}.vlx"))?;
        if ss_sync == x.sync && valid {
            c.sc(REG_SS, Val::Tuple(vec![Val::Tuple(view), Val::Bool(!ss_sync)]), &format!("{g}.ss_sc"))?;
        }
        c.sc(REG_X, x_tuple(1, x.pa, x.pb, !x.sync), &format!("{g}.end"))?;
    }
    Ok(())
}

struct Collect {
    output: Val,
    exit: String,
    last_b: Vec<Val>,
}

/// Double collect with move tracking. `prefix` distinguishes a write's
/// embedded scan (`ws.`) from a top-level scan.
fn afek_collect<C: Ctx>(c: &mut C, n: usize, prefix: &str) -> Step<Collect> {
    let mut moved = vec![false; n];
    let ver = |v: &Val| v.as_tuple().expect("afek cell")[1].clone();
    for k in 1.. {
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            a.push(c.read(&reg_a(i), &format!("{prefix}k{k}.a[{i}]"))?);
        }
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            b.push(c.read(&reg_a(i), &format!("{prefix}k{k}.b[{i}]"))?);
        }
        let mut changed = false;
        for i in 0..n {
            if ver(&a[i]) != ver(&b[i]) {
                if moved[i] {
                    let view = b[i].as_tuple().expect("afek cell")[2].clone();
                    return Ok(Collect { output: view, exit: format!("k{k}:view[{i}]"), last_b: b });
                }
                changed = true;
                moved[i] = true;
            }
        }
        if !changed {
            let data = b.iter().map(|v| v.as_tuple().expect("afek cell")[0].clone()).collect();
            return Ok(Collect { output: Val::Tuple(data), exit: format!("k{k}:clean"), last_b: b });
        }
    }
    unreachable!("collect loop only exits by returning")
}

/// Decoded Afek exit tag (`k3:clean`, `ws:k2:view[1]`): the returning round and,
/// for a borrowed view, the cell whose writer supplied it.
pub fn afek_exit(label: &str) -> Option<(usize, Option<usize>)> {
    let tail = label.strip_prefix("ws:").unwrap_or(label);
    let (round, how) = tail.strip_prefix('k')?.split_once(':')?;
    let round = round.parse().ok()?;
    if how == "clean" {
        return Some((round, None));
    }
    let cell = how.strip_prefix("view[")?.strip_suffix(']')?.parse().ok()?;
    Some((round, Some(cell)))
}
