//! Execution drivers: schedule exploration in the simulator, a real-thread
//! stress runner, and the two hard-coded textbook scenarios.
//!
//! A *schedule* is the sequence of thread indices, one per register step.
//! Every simulated history records the schedule that produced it (and the
//! seed, in random mode), so any history can be regenerated exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Barrier};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{initialize, registers, validate_script, Algorithm, Op, OpRunner, OpScript, OpState, Progress, ScriptError};
use crate::checker::{check, CheckReport, Suite};
use crate::event::{History, Kind, Meta, Val, Violation};
use crate::linearizer::{brute_force_linearize, linearize, LinError, Linearization, OracleResult, ORACLE_GUARD};
use crate::registers::{ConcMem, RegError, SimMem};
use crate::visibility::{VisError, Visibility};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("register fault: {0}")]
    Register(#[from] RegError),
    #[error(transparent)]
    Visibility(#[from] VisError),
    #[error("exhaustive exploration exceeded the cap of {0} schedules; use --mode dfs:LIMIT or random:SEED:SAMPLES")]
    CapExceeded(usize),
    #[error("schedule step {step} names thread {thread}, which has no operation left")]
    BadSchedule { step: usize, thread: usize },
    #[error("initial array has length {got}, expected {n}")]
    Initial { got: usize, n: usize },
    #[error("scenario {scenario} returned {got}, expected {expected}")]
    ScenarioMismatch { scenario: &'static str, got: String, expected: String },
}

/// How schedules are chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every interleaving; fails if more than `cap` schedules exist.
    Exhaustive { cap: usize },
    /// Depth-first enumeration stopped after `limit` schedules.
    Dfs { limit: usize },
    /// `samples` uniformly scheduled runs; sample `k` uses stream `k` of `seed`.
    Random { seed: u64, samples: usize },
    /// One run following the given schedule (which may stop early).
    Fixed(Vec<usize>),
}

pub const DEFAULT_EXHAUSTIVE_CAP: usize = 2_000_000;
pub const DEFAULT_DFS_LIMIT: usize = 200_000;

impl FromStr for Mode {
    type Err = String;

    /// `exhaustive[:CAP]`, `dfs[:LIMIT]`, `random:SEED:SAMPLES`, or
    /// `fixed:T,T,...` (an inline schedule).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |x: &str| x.parse::<usize>().map_err(|e| format!("bad number {x:?} in mode {s:?}: {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["exhaustive"] => Ok(Mode::Exhaustive { cap: DEFAULT_EXHAUSTIVE_CAP }),
            ["exhaustive", cap] => Ok(Mode::Exhaustive { cap: num(cap)? }),
            ["dfs"] => Ok(Mode::Dfs { limit: DEFAULT_DFS_LIMIT }),
            ["dfs", limit] => Ok(Mode::Dfs { limit: num(limit)? }),
            ["random", seed, samples] => Ok(Mode::Random {
                seed: seed.parse().map_err(|e| format!("bad seed {seed:?}: {e}"))?,
                samples: num(samples)?,
            }),
            ["fixed", sched] => Ok(Mode::Fixed(
                sched.split(',').filter(|x| !x.trim().is_empty()).map(|x| num(x.trim())).collect::<Result<_, _>>()?,
            )),
            _ => Err(format!("unknown mode {s:?} (expected exhaustive, dfs:LIMIT, random:SEED:SAMPLES or fixed:...)")),
        }
    }
}

/// One simulated execution in progress.
#[derive(Clone)]
pub struct World {
    alg: Algorithm,
    n: usize,
    initial: Vec<i64>,
    mem: SimMem,
    threads: Vec<ThreadRun>,
    schedule: Vec<usize>,
}

#[derive(Clone)]
struct ThreadRun {
    pid: usize,
    ops: Arc<Vec<Op>>,
    next: usize,
    state: OpState,
}

impl World {
    pub fn new(alg: Algorithm, n: usize, initial: &[i64], script: &OpScript) -> Result<World, HarnessError> {
        validate_script(alg, n, script)?;
        if initial.len() != n {
            return Err(HarnessError::Initial { got: initial.len(), n });
        }
        let mem = SimMem::new();
        initialize(alg, initial, &mem)?;
        let threads = script
            .threads
            .iter()
            .map(|t| ThreadRun { pid: t.pid, ops: Arc::new(t.ops.clone()), next: 0, state: OpState::default() })
            .collect();
        Ok(World { alg, n, initial: initial.to_vec(), mem, threads, schedule: Vec::new() })
    }

    /// Threads with an operation left.
    pub fn enabled(&self) -> Vec<usize> {
        (0..self.threads.len()).filter(|&t| self.threads[t].next < self.threads[t].ops.len()).collect()
    }

    /// Execute one register step of thread `t`.
    pub fn step(&mut self, t: usize) -> Result<(), HarnessError> {
        let step = self.schedule.len();
        let th = self.threads.get_mut(t).filter(|th| th.next < th.ops.len());
        let Some(th) = th else { return Err(HarnessError::BadSchedule { step, thread: t }) };
        let ops = Arc::clone(&th.ops);
        let r = OpRunner::new(&self.mem, t, th.pid, &ops[th.next], &mut th.state, true).drive(self.alg, self.n)?;
        if let Progress::Done(_) = r {
            th.next += 1;
            th.state = OpState::default();
        }
        self.schedule.push(t);
        Ok(())
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn history(&self, seed: Option<u64>) -> History {
        self.mem.history(Meta {
            algorithm: self.alg.name().to_string(),
            n: self.n,
            initial: self.initial.clone(),
            seed,
            schedule: Some(self.schedule.clone()),
        })
    }
}

/// Run `schedule` and return the resulting (possibly partial) history.
pub fn run_fixed(
    alg: Algorithm,
    n: usize,
    initial: &[i64],
    script: &OpScript,
    schedule: &[usize],
) -> Result<History, HarnessError> {
    let mut w = World::new(alg, n, initial, script)?;
    for &t in schedule {
        w.step(t)?;
    }
    Ok(w.history(None))
}

/// Run one schedule drawn from stream `sample` of `seed`.
pub fn run_random(
    alg: Algorithm,
    n: usize,
    initial: &[i64],
    script: &OpScript,
    seed: u64,
    sample: u64,
) -> Result<History, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    let mut w = World::new(alg, n, initial, script)?;
    loop {
        let en = w.enabled();
        if en.is_empty() {
            break;
        }
        let t = en[rng.gen_range(0..en.len())];
        w.step(t)?;
    }
    Ok(w.history(Some(seed)))
}

/// Depth-first enumeration of complete schedules in lexicographic order.
/// `leaf` returns `false` to stop early.
pub fn enumerate(start: World, leaf: &mut dyn FnMut(World) -> bool) -> Result<bool, HarnessError> {
    let mut stack = vec![start];
    while let Some(w) = stack.pop() {
        let en = w.enabled();
        if en.is_empty() {
            if !leaf(w) {
                return Ok(false);
            }
            continue;
        }
        let mut children = Vec::with_capacity(en.len());
        let (last, rest) = en.split_last().expect("non-empty");
        for &t in rest {
            let mut c = w.clone();
            c.step(t)?;
            children.push(c);
        }
        let mut c = w;
        c.step(*last)?;
        children.push(c);
        stack.extend(children.into_iter().rev());
    }
    Ok(true)
}

/// Upper bound on the number of schedules: the multinomial coefficient of the
/// per-thread step bounds.
pub fn estimate_interleavings(alg: Algorithm, n: usize, script: &OpScript) -> f64 {
    let steps: Vec<usize> =
        script.threads.iter().map(|t| t.ops.iter().map(|op| alg.step_bound(n, op)).sum()).collect();
    let ln_fact = |k: usize| (1..=k).map(|x| (x as f64).ln()).sum::<f64>();
    let total: usize = steps.iter().sum();
    (ln_fact(total) - steps.iter().map(|&s| ln_fact(s)).sum::<f64>()).exp()
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub alg: Algorithm,
    pub n: usize,
    pub initial: Vec<i64>,
    pub script: OpScript,
    pub mode: Mode,
    pub suites: Vec<Suite>,
    pub oracle: bool,
    pub oracle_guard: usize,
    /// Worker threads for checking; `None` uses rayon's default.
    pub jobs: Option<usize>,
}

impl ExploreConfig {
    pub fn new(alg: Algorithm, n: usize, script: OpScript, mode: Mode) -> ExploreConfig {
        ExploreConfig {
            alg,
            n,
            initial: vec![0; n],
            script,
            mode,
            suites: vec![Suite::Rb, Suite::S],
            oracle: false,
            oracle_guard: ORACLE_GUARD,
            jobs: None,
        }
    }
}

/// Everything computed for one history.
#[derive(Clone, Debug)]
pub struct Run {
    pub index: usize,
    pub history: History,
    pub report: CheckReport,
    pub linearization: Result<Linearization, LinError>,
    pub oracle: Option<OracleResult>,
}

impl Run {
    pub fn linearized(&self) -> bool {
        matches!(&self.linearization, Ok(l) if l.legal)
    }

    /// Both linearizability verdicts coincide (vacuous without an oracle
    /// verdict).
    pub fn oracle_agrees(&self) -> bool {
        match &self.oracle {
            Some(OracleResult::Linearizable(_)) => self.linearized(),
            Some(OracleResult::NotLinearizable { .. }) => !self.linearized(),
            _ => true,
        }
    }

    pub fn ok(&self) -> bool {
        self.report.passed() && self.linearized() && self.oracle_agrees()
    }

    /// Scan outputs in scan order, for summaries.
    pub fn scan_outputs(&self) -> Vec<String> {
        self.history
            .abs_scans()
            .filter_map(|s| s.output.as_ref().map(Val::to_string))
            .collect()
    }
}

/// Analyse one history: checks, linearization and (optionally) the oracle.
pub fn analyse(h: History, index: usize, suites: &[Suite], oracle: Option<usize>) -> Result<Run, HarnessError> {
    let report = check(&h, suites)?;
    let linearization = {
        let v = Visibility::new(&h)?;
        linearize(&v)
    };
    let oracle = oracle.map(|g| brute_force_linearize(&h, g));
    Ok(Run { index, history: h, report, linearization, oracle })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub histories: usize,
    pub passed: usize,
    pub failed: usize,
    pub violations: BTreeMap<String, usize>,
    pub linearized: usize,
    pub oracle_linearizable: usize,
    pub oracle_not_linearizable: usize,
    pub oracle_size_guard: usize,
    pub oracle_disagreements: usize,
    /// Distinct scan-output tuples seen, with counts.
    pub scan_outputs: BTreeMap<String, usize>,
    /// DFS stopped at its limit before exhausting the tree.
    pub truncated: bool,
}

impl Summary {
    pub fn add(&mut self, r: &Run) {
        self.histories += 1;
        if r.ok() {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        for a in r.report.failed_axioms() {
            *self.violations.entry(a).or_default() += 1;
        }
        if r.linearized() {
            self.linearized += 1;
        } else {
            *self.violations.entry("linearize".to_string()).or_default() += 1;
        }
        match &r.oracle {
            Some(OracleResult::Linearizable(_)) => self.oracle_linearizable += 1,
            Some(OracleResult::NotLinearizable { .. }) => self.oracle_not_linearizable += 1,
            Some(OracleResult::SizeGuard { .. }) => self.oracle_size_guard += 1,
            None => {}
        }
        if !r.oracle_agrees() {
            self.oracle_disagreements += 1;
        }
        for o in r.scan_outputs() {
            *self.scan_outputs.entry(o).or_default() += 1;
        }
    }

    pub fn clean(&self) -> bool {
        self.failed == 0 && self.oracle_disagreements == 0
    }
}

const BATCH: usize = 2048;

fn pool(jobs: Option<usize>) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().expect("thread pool")
}

/// Explore `cfg`, calling `sink` on every analysed history in schedule order.
pub fn explore(cfg: &ExploreConfig, sink: &mut dyn FnMut(&Run)) -> Result<Summary, HarnessError> {
    let pool = pool(cfg.jobs);
    let oracle = cfg.oracle.then_some(cfg.oracle_guard);
    let mut summary = Summary::default();
    let mut index = 0usize;
    let mut flush = |batch: &mut Vec<History>, summary: &mut Summary| -> Result<(), HarnessError> {
        let runs: Vec<Result<Run, HarnessError>> = pool.install(|| {
            std::mem::take(batch)
                .into_par_iter()
                .enumerate()
                .map(|(k, h)| analyse(h, index + k, &cfg.suites, oracle))
                .collect()
        });
        for r in runs {
            let r = r?;
            summary.add(&r);
            sink(&r);
            index += 1;
        }
        Ok(())
    };
    let mut batch = Vec::with_capacity(BATCH);
    match &cfg.mode {
        Mode::Fixed(s) => {
            batch.push(run_fixed(cfg.alg, cfg.n, &cfg.initial, &cfg.script, s)?);
        }
        Mode::Random { seed, samples } => {
            for lo in (0..*samples).step_by(BATCH) {
                let hi = (lo + BATCH).min(*samples);
                let hs: Result<Vec<History>, HarnessError> = pool.install(|| {
                    (lo..hi)
                        .into_par_iter()
                        .map(|k| run_random(cfg.alg, cfg.n, &cfg.initial, &cfg.script, *seed, k as u64))
                        .collect()
                });
                batch = hs?;
                flush(&mut batch, &mut summary)?;
            }
        }
        Mode::Exhaustive { cap: limit } | Mode::Dfs { limit } => {
            let exhaustive = matches!(cfg.mode, Mode::Exhaustive { .. });
            let start = World::new(cfg.alg, cfg.n, &cfg.initial, &cfg.script)?;
            let mut count = 0usize;
            let mut err = None;
            let finished = enumerate(start, &mut |w| {
                if count == *limit {
                    return false;
                }
                count += 1;
                batch.push(w.history(None));
                if batch.len() == BATCH {
                    if let Err(e) = flush(&mut batch, &mut summary) {
                        err = Some(e);
                        return false;
                    }
                }
                true
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            if !finished {
                if exhaustive {
                    return Err(HarnessError::CapExceeded(*limit));
                }
                summary.truncated = true;
            }
        }
    }
    if !batch.is_empty() {
        flush(&mut batch, &mut summary)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct StressConfig {
    pub alg: Algorithm,
    pub n: usize,
    pub threads: usize,
    pub ops_per_thread: usize,
    pub runs: usize,
    pub seed: u64,
    pub suites: Vec<Suite>,
}

impl StressConfig {
    pub fn new(alg: Algorithm, n: usize, threads: usize, ops_per_thread: usize, runs: usize) -> StressConfig {
        StressConfig { alg, n, threads, ops_per_thread, runs, seed: 0, suites: vec![Suite::Rb, Suite::S] }
    }
}

/// A random workload that respects the algorithm's scanner/writer constraints.
pub fn stress_script(alg: Algorithm, n: usize, threads: usize, ops: usize, seed: u64, run: u64) -> OpScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    let single_scanner = matches!(alg, Algorithm::Jayanti1 | Algorithm::Jayanti2);
    let single_writer = matches!(alg, Algorithm::Jayanti1 | Algorithm::Afek);
    let writers: Vec<usize> = if single_scanner && threads > 1 { (1..threads).collect() } else { (0..threads).collect() };
    let mut out = Vec::with_capacity(threads);
    for t in 0..threads {
        let cells: Vec<usize> = match writers.iter().position(|&w| w == t) {
            None => vec![],
            Some(k) if single_writer => (0..n).filter(|c| c % writers.len() == k).collect(),
            Some(_) => (0..n).collect(),
        };
        let may_scan = !single_scanner || t == 0;
        let mut list = Vec::with_capacity(ops);
        for k in 0..ops {
            let write = !cells.is_empty() && (!may_scan || rng.gen_bool(0.5));
            if write {
                let cell = cells[rng.gen_range(0..cells.len())];
                list.push(Op::Write(cell, ((t + 1) * 1_000_000 + k + 1) as i64));
            } else if may_scan {
                list.push(Op::Scan);
            }
        }
        out.push(list);
    }
    OpScript::new(out)
}

/// Execute `script` on real threads (one per scripted thread).
pub fn stress_run(alg: Algorithm, n: usize, initial: &[i64], script: &OpScript) -> Result<History, HarnessError> {
    validate_script(alg, n, script)?;
    let mem = ConcMem::new(registers(alg, n, &script.pids()));
    initialize(alg, initial, &mem)?;
    let barrier = Barrier::new(script.threads.len());
    let results: Vec<Result<(), RegError>> = std::thread::scope(|sc| {
        let handles: Vec<_> = script
            .threads
            .iter()
            .enumerate()
            .map(|(t, th)| {
                let (mem, barrier) = (&mem, &barrier);
                sc.spawn(move || -> Result<(), RegError> {
                    barrier.wait();
                    for op in &th.ops {
                        let mut st = OpState::default();
                        OpRunner::new(mem, t, th.pid, op, &mut st, false).drive(alg, n)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("stress thread panicked")).collect()
    });
    for r in results {
        r?;
    }
    Ok(mem.into_history(Meta {
        algorithm: alg.name().to_string(),
        n,
        initial: initial.to_vec(),
        seed: None,
        schedule: None,
    }))
}

/// One checked stress run.
#[derive(Clone, Debug)]
pub struct StressRun {
    pub index: usize,
    pub history: History,
    pub report: CheckReport,
    /// Rep-level happens-before cycle, if any.
    pub rep_cycle: Option<Violation>,
}

impl StressRun {
    pub fn ok(&self) -> bool {
        self.report.passed() && self.rep_cycle.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StressSummary {
    pub runs: usize,
    pub passed: usize,
    pub failed: usize,
    pub events: usize,
    pub violations: BTreeMap<String, usize>,
}

/// Run `cfg.runs` stress executions one after another (each one already
/// uses all scripted threads) and check them post hoc.
pub fn stress(cfg: &StressConfig, sink: &mut dyn FnMut(&StressRun)) -> Result<StressSummary, HarnessError> {
    let mut summary = StressSummary::default();
    let initial = vec![0; cfg.n];
    for run in 0..cfg.runs {
        let script = stress_script(cfg.alg, cfg.n, cfg.threads, cfg.ops_per_thread, cfg.seed, run as u64);
        let mut h = stress_run(cfg.alg, cfg.n, &initial, &script)?;
        h.meta.seed = Some(cfg.seed);
        let report = check(&h, &cfg.suites)?;
        let rep_cycle = {
            let v = Visibility::new(&h)?;
            v.rep.reach().cycle().map(|c| {
                let ids = c.iter().map(|&x| crate::event::EventId(x)).collect();
                Violation::new("V.rep", ids, "rep-level happens-before has a cycle")
            })
        };
        let r = StressRun { index: run, history: h, report, rep_cycle };
        summary.runs += 1;
        summary.events += r.history.events.len();
        if r.ok() {
            summary.passed += 1;
        } else {
            summary.failed += 1;
        }
        for a in r.report.failed_axioms() {
            *summary.violations.entry(a).or_default() += 1;
        }
        if let Some(c) = &r.rep_cycle {
            *summary.violations.entry(c.axiom.clone()).or_default() += 1;
        }
        sink(&r);
    }
    Ok(summary)
}

/// The two textbook executions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Naive double read returning a state that never existed.
    Naive03,
    /// Single-writer forwarding scan rescued by a forwarded value.
    Jayanti1Forwarded,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Naive03, Scenario::Jayanti1Forwarded];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Naive03 => "naive_03",
            Scenario::Jayanti1Forwarded => "jayanti1_fig3",
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            Scenario::Naive03 => Algorithm::Naive,
            Scenario::Jayanti1Forwarded => Algorithm::Jayanti1,
        }
    }

    pub fn script(self) -> OpScript {
        match self {
            Scenario::Naive03 => OpScript::new(vec![vec![Op::Write(0, 2)], vec![Op::Write(1, 3)], vec![Op::Scan]]),
            Scenario::Jayanti1Forwarded => OpScript::new(vec![
                vec![Op::Write(0, 2), Op::Write(0, 3)],
                vec![Op::Write(1, 4)],
                vec![Op::Scan],
            ]),
        }
    }

    /// The scanner reads `A[0]` first; both writes land before it reads `A[1]`.
    pub fn schedule(self) -> Vec<usize> {
        match self {
            Scenario::Naive03 => vec![2, 0, 1, 2],
            // scan: on, r[0], r[1], a[0]; w0: wa, wx, wb; w'0: wa; w1: wa;
            // scan: a[1], off, b[0], b[1]
            Scenario::Jayanti1Forwarded => vec![2, 2, 2, 2, 0, 0, 0, 0, 1, 2, 2, 2, 2],
        }
    }

    pub fn expected(self) -> Val {
        match self {
            Scenario::Naive03 => Val::ints(&[0, 3]),
            Scenario::Jayanti1Forwarded => Val::ints(&[2, 4]),
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?} (expected naive_03 or jayanti1_fig3)"))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Replay a scenario and check that its scan returns the expected snapshot.
pub fn repro(s: Scenario) -> Result<History, HarnessError> {
    let h = run_fixed(s.algorithm(), 2, &[0, 0], &s.script(), &s.schedule())?;
    let got = h
        .events
        .iter()
        .find(|e| e.kind == Kind::Abs && e.op == "scan")
        .and_then(|e| e.output.clone());
    if got.as_ref() != Some(&s.expected()) {
        return Err(HarnessError::ScenarioMismatch {
            scenario: s.name(),
            got: got.map_or("nothing".to_string(), |v| v.to_string()),
            expected: s.expected().to_string(),
        });
    }
    Ok(h)
}
