//! `snaplab` command-line front end.
//!
//! Exit codes: 0 when every requested check passed, 1 on check failures (the
//! failing axiom ids go to stderr), 2 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use snaplab::checker::{check, Suite};
use snaplab::harness::{self, ExploreConfig, Mode, Run, Scenario, StressConfig};
use snaplab::linearizer::{brute_force_linearize, linearize, OracleResult, ORACLE_GUARD};
use snaplab::visibility::Visibility;
use snaplab::{Algorithm, History, OpScript, Val};

#[derive(Parser)]
#[command(name = "snaplab", version, about = "Explore, check and linearize snapshot-object histories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a script under many schedules and check every history.
    Explore(ExploreArgs),
    /// Run random workloads on real threads and check the histories.
    Stress(StressArgs),
    /// Check a recorded history.
    Check(CheckArgs),
    /// Linearize a recorded history and replay the order.
    Linearize(LinearizeArgs),
    /// Replay a built-in scenario and assert its outputs.
    Repro(ReproArgs),
    /// Export the derived relations of a history as labelled edge lists.
    DumpEdges(DumpArgs),
}

#[derive(Args)]
struct SuiteArgs {
    /// Comma-separated suites: RB, M, M+, L, S, F, F+, A, chain, all.
    #[arg(long = "check", visible_alias = "suites", default_value = "all", value_parser = parse_suites)]
    check: SuiteList,
    /// Also run the implication chain between suites.
    #[arg(long)]
    chain: bool,
}

#[derive(Clone, Debug)]
struct SuiteList(Vec<Suite>);

fn parse_suites(s: &str) -> Result<SuiteList, String> {
    Suite::parse_list(s).map(SuiteList)
}

impl SuiteArgs {
    fn suites(&self) -> Vec<Suite> {
        let mut s = self.check.0.clone();
        if self.chain && !s.contains(&Suite::Chain) {
            s.push(Suite::Chain);
        }
        s.sort();
        s
    }
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    alg: Algorithm,
    #[arg(long)]
    n: usize,
    /// OpScript JSON file.
    #[arg(long)]
    script: PathBuf,
    /// Initial array, comma-separated (default all zeros).
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<i64>>,
    /// exhaustive[:CAP], dfs:LIMIT, random:SEED:SAMPLES, or fixed:PATH
    /// (a JSON array or comma list of thread indices; inline lists work too).
    #[arg(long, default_value = "exhaustive")]
    mode: String,
    #[command(flatten)]
    suites: SuiteArgs,
    /// Compare every linearization verdict against brute-force search.
    #[arg(long)]
    oracle: bool,
    /// Largest number of operations the oracle searches over.
    #[arg(long, default_value_t = ORACLE_GUARD)]
    oracle_guard: usize,
    /// Run directory: summary.json plus artifacts of failing histories.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write artifacts for every history, not only failing ones.
    #[arg(long)]
    keep_all: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StressArgs {
    #[arg(long)]
    alg: Algorithm,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 200)]
    ops: usize,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Seed for the generated workloads.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "check", visible_alias = "suites", default_value = "RB,S", value_parser = parse_suites)]
    check: SuiteList,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// History JSON file.
    #[arg(long)]
    history: PathBuf,
    #[command(flatten)]
    suites: SuiteArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LinearizeArgs {
    #[arg(long)]
    history: PathBuf,
    /// Also run the brute-force oracle.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = ORACLE_GUARD)]
    oracle_guard: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproArgs {
    /// naive_03 or jayanti1_fig3
    scenario: Scenario,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    history: PathBuf,
    /// Include the returns-before and happens-before closures.
    #[arg(long)]
    closure: bool,
    /// Output file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure that maps to exit code 1.
#[derive(Debug)]
struct CheckFailed(Vec<String>);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "check failed: {}", self.0.join(" "))
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Explore(a) => explore(a),
        Cmd::Stress(a) => stress(a),
        Cmd::Check(a) => check_cmd(a),
        Cmd::Linearize(a) => linearize_cmd(a),
        Cmd::Repro(a) => repro(a),
        Cmd::DumpEdges(a) => dump_edges(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<CheckFailed>() {
            Some(CheckFailed(axioms)) => {
                eprintln!("FAILED: {}", axioms.join(" "));
                ExitCode::from(1)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}

fn read_history(p: &Path) -> Result<History> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    History::from_json(&s).with_context(|| format!("parsing history {}", p.display()))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, content).with_context(|| format!("writing {}", p.display()))
}

fn parse_mode(s: &str) -> Result<Mode> {
    if let Some(rest) = s.strip_prefix("fixed:") {
        let p = Path::new(rest);
        if p.is_file() {
            let text = fs::read_to_string(p).with_context(|| format!("reading schedule {}", p.display()))?;
            let sched: Vec<usize> = match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(_) => text
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse().with_context(|| format!("bad thread index {x:?} in schedule")))
                    .collect::<Result<_>>()?,
            };
            return Ok(Mode::Fixed(sched));
        }
    }
    s.parse::<Mode>().map_err(anyhow::Error::msg)
}

fn artifacts(dir: &Path, stem: &str, r: &Run) -> Result<()> {
    write(dir, &format!("{stem}.history.json"), &r.history.to_json_pretty())?;
    write(dir, &format!("{stem}.report.json"), &r.report.to_json_pretty())?;
    let lin = match &r.linearization {
        Ok(l) => l.to_json_pretty(),
        Err(e) => serde_json::to_string_pretty(&serde_json::json!({ "error": e.to_string() }))?,
    };
    write(dir, &format!("{stem}.linearization.json"), &lin)
}

fn run_failures(r: &Run) -> Vec<String> {
    let mut out: Vec<String> = r.report.failed_axioms().into_iter().collect();
    if !r.linearized() {
        out.push("linearize".into());
    }
    if !r.oracle_agrees() {
        out.push("oracle-disagreement".into());
    }
    out
}

fn explore(a: ExploreArgs) -> Result<()> {
    let text = fs::read_to_string(&a.script).with_context(|| format!("reading {}", a.script.display()))?;
    let script: OpScript = serde_json::from_str(&text).with_context(|| format!("parsing script {}", a.script.display()))?;
    let mut cfg = ExploreConfig::new(a.alg, a.n, script, parse_mode(&a.mode)?);
    if let Some(init) = a.initial {
        cfg.initial = init;
    }
    cfg.suites = a.suites.suites();
    cfg.oracle = a.oracle;
    cfg.oracle_guard = a.oracle_guard;
    cfg.jobs = a.jobs;
    let mut first_failure: Option<(usize, Vec<String>)> = None;
    let mut io_err = None;
    let summary = harness::explore(&cfg, &mut |r| {
        let failed = !r.ok();
        if failed && first_failure.is_none() {
            first_failure = Some((r.index, run_failures(r)));
        }
        if let Some(dir) = &a.out {
            if a.keep_all || failed {
                let sub = if failed { dir.join("failures") } else { dir.join("histories") };
                if let Err(e) = artifacts(&sub, &format!("h{:06}", r.index), r) {
                    io_err.get_or_insert(e);
                }
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    if let Some(dir) = &a.out {
        write(dir, "summary.json", &json)?;
    }
    if !summary.clean() {
        let mut axioms: Vec<String> = summary.violations.keys().cloned().collect();
        if summary.oracle_disagreements > 0 {
            axioms.push("oracle-disagreement".into());
        }
        if let Some((ix, ax)) = first_failure {
            eprintln!("first failing history: #{ix} ({})", ax.join(" "));
        }
        bail!(CheckFailed(axioms));
    }
    Ok(())
}

fn stress(a: StressArgs) -> Result<()> {
    let mut cfg = StressConfig::new(a.alg, a.n, a.threads, a.ops, a.runs);
    cfg.seed = a.seed;
    cfg.suites = a.check.0;
    let mut io_err = None;
    let summary = harness::stress(&cfg, &mut |r| {
        if let (Some(dir), false) = (&a.out, r.ok()) {
            let stem = format!("run{:04}", r.index);
            let res = write(&dir.join("failures"), &format!("{stem}.history.json"), &r.history.to_json())
                .and_then(|_| write(&dir.join("failures"), &format!("{stem}.report.json"), &r.report.to_json_pretty()));
            if let Err(e) = res {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    if let Some(dir) = &a.out {
        write(dir, "summary.json", &json)?;
    }
    if summary.failed > 0 {
        bail!(CheckFailed(summary.violations.keys().cloned().collect()));
    }
    Ok(())
}

fn check_cmd(a: CheckArgs) -> Result<()> {
    let h = read_history(&a.history)?;
    let report = check(&h, &a.suites.suites())?;
    let json = report.to_json_pretty();
    println!("{json}");
    if let Some(dir) = &a.out {
        write(dir, "report.json", &json)?;
    }
    if !report.passed() {
        bail!(CheckFailed(report.failed_axioms().into_iter().collect()));
    }
    Ok(())
}

fn linearize_cmd(a: LinearizeArgs) -> Result<()> {
    let h = read_history(&a.history)?;
    let v = Visibility::new(&h)?;
    let lin = linearize(&v);
    let oracle = a.oracle.then(|| brute_force_linearize(&h, a.oracle_guard));
    let json = match &lin {
        Ok(l) => l.to_json_pretty(),
        Err(e) => serde_json::to_string_pretty(&serde_json::json!({ "error": e.to_string(), "witnesses": e.witnesses() }))?,
    };
    println!("{json}");
    if let Some(o) = &oracle {
        eprintln!("oracle: {}", oracle_word(o));
    }
    if let Some(dir) = &a.out {
        write(dir, "linearization.json", &json)?;
    }
    let mut failed = Vec::new();
    match &lin {
        Ok(l) if l.legal => {}
        Ok(_) => failed.push("linearize.replay".to_string()),
        Err(_) => failed.push("linearize".to_string()),
    }
    if let Some(o) = &oracle {
        let ours = matches!(&lin, Ok(l) if l.legal);
        if matches!(o, OracleResult::Linearizable(_) | OracleResult::NotLinearizable { .. }) && o.is_linearizable() != ours {
            failed.push("oracle-disagreement".to_string());
        }
    }
    if !failed.is_empty() {
        bail!(CheckFailed(failed));
    }
    Ok(())
}

fn oracle_word(o: &OracleResult) -> String {
    match o {
        OracleResult::Linearizable(_) => "linearizable".into(),
        OracleResult::NotLinearizable { states } => format!("not linearizable ({states} states refuted)"),
        OracleResult::SizeGuard { ops, guard } => format!("skipped ({ops} operations > guard {guard})"),
    }
}

fn write_input(h: &History, cell: i64, value: i64) -> Option<snaplab::EventId> {
    h.abs_writes().find(|e| e.input == Val::ints(&[cell, value])).map(|e| e.id)
}

fn repro(a: ReproArgs) -> Result<()> {
    let h = harness::repro(a.scenario)?;
    let out = h.abs_scans().find_map(|e| e.output.clone()).expect("scenario has a completed scan");
    println!("{}: scan returned {out}", a.scenario);
    let oracle = brute_force_linearize(&h, ORACLE_GUARD);
    println!("oracle: {}", oracle_word(&oracle));
    let v = Visibility::new(&h)?;
    let lin = linearize(&v);
    match &lin {
        Ok(l) => println!("linearize: order {:?}, replay {}", l.order.iter().map(|e| e.0).collect::<Vec<_>>(), if l.legal { "legal" } else { "illegal" }),
        Err(e) => println!("linearize: {e}"),
    }
    if let Some(dir) = &a.out {
        write(dir, "history.json", &h.to_json_pretty())?;
        if let Ok(l) = &lin {
            write(dir, "linearization.json", &l.to_json_pretty())?;
        }
    }
    let mut failed = Vec::new();
    match a.scenario {
        // expected failure: the naive scan is not linearizable
        Scenario::Naive03 => {
            if !matches!(oracle, OracleResult::NotLinearizable { .. }) {
                failed.push("oracle".to_string());
            }
        }
        Scenario::Jayanti1Forwarded => {
            if !oracle.is_linearizable() {
                failed.push("oracle".to_string());
            }
            match &lin {
                Ok(l) if l.legal => {
                    let pos = |w: Option<snaplab::EventId>| w.and_then(|w| l.order.iter().position(|&x| x == w));
                    let (w0, w1, w0b) = (pos(write_input(&h, 0, 2)), pos(write_input(&h, 1, 4)), pos(write_input(&h, 0, 3)));
                    let ordered = matches!((w0, w1, w0b), (Some(a), Some(b), Some(c)) if a < b && a < c);
                    println!("w0 precedes w1 and w'0: {ordered}");
                    if !ordered {
                        failed.push("linearize.order".to_string());
                    }
                }
                _ => failed.push("linearize".to_string()),
            }
        }
    }
    if !failed.is_empty() {
        bail!(CheckFailed(failed));
    }
    Ok(())
}

fn dump_edges(a: DumpArgs) -> Result<()> {
    let h = read_history(&a.history)?;
    let v = Visibility::new(&h)?;
    let json = serde_json::to_string_pretty(&v.edge_sets(a.closure))?;
    match &a.out {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}
