//! The `wsi` command-line tool.
//!
//! Verbs:
//! - `run` executes a workload and prints one CSV row of metrics.
//! - `check` judges every history in a file under SI, WSI and serializability.
//! - `replay` prints the per-transaction decisions for each history.
//! - `bench-oracle` drives the status oracle alone with synthetic requests.
//! - `recover` summarizes what recovery rebuilds from an oracle log.

pub mod bench;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use wsi_core::history::{self, History, Outcome, Replay};
use wsi_core::wal;
use wsi_core::workload::{self, Distribution, Executor, Mix, RunConfig, RunMetrics, WorkloadSpec};
use wsi_core::{Capacity, IsolationPolicy, OracleConfig};

pub use bench::{bench_oracle, BenchConfig, BenchResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "wsi",
    version,
    about = "Snapshot and write-snapshot isolation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a generated workload and print its metrics as CSV.
    Run(RunArgs),
    /// Judge each history of a file: SI, WSI and serializability.
    Check(CheckArgs),
    /// Replay each history of a file and print every transaction's fate.
    Replay(ReplayArgs),
    /// Measure status-oracle decision throughput and latency.
    BenchOracle(BenchArgs),
    /// Rebuild oracle state from a log and summarize it.
    Recover(RecoverArgs),
}

/// `off` or a log file path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalTarget {
    Off,
    Path(PathBuf),
}

impl WalTarget {
    pub fn path(&self) -> Option<PathBuf> {
        match self {
            WalTarget::Off => None,
            WalTarget::Path(p) => Some(p.clone()),
        }
    }
}

impl FromStr for WalTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" => Err("empty log path".into()),
            "off" => Ok(WalTarget::Off),
            p => Ok(WalTarget::Path(PathBuf::from(p))),
        }
    }
}

pub fn parse_capacity(s: &str) -> Result<Capacity, String> {
    if s == "unbounded" {
        return Ok(Capacity::Unbounded);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("capacity must be at least 1".into()),
        Ok(n) => Ok(Capacity::bounded(n)),
        Err(_) => Err(format!("expected a row count or \"unbounded\", got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub policy: IsolationPolicy,
    /// key = value workload file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dist: Option<Distribution>,
    #[arg(long)]
    pub mix: Option<Mix>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub txns: Option<u64>,
    #[arg(long)]
    pub keys: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub zipf_constant: Option<f64>,
    #[arg(long, default_value = "off")]
    pub wal: WalTarget,
    #[arg(long, default_value = "unbounded", value_parser = parse_capacity)]
    pub capacity: Capacity,
    /// `threads` runs one OS thread per client; `interleaved` schedules all
    /// clients on one thread with a seeded scheduler.
    #[arg(long, default_value = "threads")]
    pub executor: Executor,
    #[arg(long)]
    pub no_header: bool,
}

impl RunArgs {
    pub fn spec(&self) -> Result<WorkloadSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                WorkloadSpec::load(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => WorkloadSpec::default(),
        };
        if let Some(v) = self.dist {
            spec.distribution = v;
        }
        if let Some(v) = self.mix {
            spec.mix = v;
        }
        if let Some(v) = self.clients {
            spec.client_count = v;
        }
        if let Some(v) = self.txns {
            spec.txn_count = v;
        }
        if let Some(v) = self.keys {
            spec.key_space = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.zipf_constant {
            spec.zipf_constant = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub policy: IsolationPolicy,
    /// With a bounded table, transactions whose fate differs from the
    /// unbounded oracle are listed.
    #[arg(long, default_value = "unbounded", value_parser = parse_capacity)]
    pub capacity: Capacity,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub policy: IsolationPolicy,
    #[arg(long, default_value_t = 1)]
    pub clients: usize,
    #[arg(long, default_value_t = 100_000)]
    pub requests: u64,
    #[arg(long, default_value_t = 4)]
    pub rows_per_txn: usize,
    #[arg(long, default_value = "unbounded", value_parser = parse_capacity)]
    pub capacity: Capacity,
    #[arg(long, default_value_t = 1_000_000)]
    pub keys: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub outstanding: usize,
    #[arg(long, default_value = "off")]
    pub wal: WalTarget,
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    pub path: PathBuf,
    #[arg(long, default_value = "unbounded", value_parser = parse_capacity)]
    pub capacity: Capacity,
}

/// Parses `args` (program name first) and runs the verb, returning the
/// process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Check(a) => cmd_check(&a.path, out, err),
        Command::Replay(a) => cmd_replay(&a, out, err),
        Command::BenchOracle(a) => cmd_bench_oracle(&a, out, err),
        Command::Recover(a) => cmd_recover(&a, out),
    }
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let spec = match a.spec() {
        Ok(s) => s,
        Err(e) => {
            writeln!(err, "error: {e:#}")?;
            return Ok(EXIT_USAGE);
        }
    };
    let config = RunConfig {
        capacity: a.capacity,
        wal: a.wal.path(),
        executor: a.executor,
        ..RunConfig::new(a.policy)
    };
    let metrics = workload::run(&spec, &config)?;
    if !a.no_header {
        writeln!(out, "{}", RunMetrics::CSV_HEADER)?;
    }
    writeln!(out, "{}", metrics.csv_row())?;
    if let Some(f) = &metrics.failure {
        writeln!(err, "error: run stopped early: {f}")?;
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

/// Non-blank lines of a history file that are not `#` comments, with their
/// 1-based line numbers.
fn history_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

fn load_histories(path: &Path, err: &mut dyn Write) -> Result<Option<Vec<History>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (line, body) in history_lines(&text) {
        match History::parse(body) {
            Ok(h) => out.push(h),
            Err(e) => {
                writeln!(
                    err,
                    "{}: line {line}, column {}: {}",
                    path.display(),
                    e.column,
                    e.reason
                )?;
                return Ok(None);
            }
        }
    }
    Ok(Some(out))
}

pub fn cmd_check(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let Some(histories) = load_histories(path, err)? else {
        return Ok(EXIT_FAILURE);
    };
    for h in &histories {
        writeln!(out, "{}", history::report(h)?)?;
    }
    Ok(EXIT_OK)
}

fn outcome_word(o: Outcome) -> String {
    match o {
        Outcome::Committed(c) => format!("committed@{c}"),
        Outcome::Rejected => "aborted".into(),
        Outcome::ClientAborted => "client-aborted".into(),
        Outcome::Unfinished => "unfinished".into(),
    }
}

fn format_replay(r: &Replay) -> String {
    let mut s = String::new();
    for (txn, o) in &r.outcomes {
        let _ = write!(s, "txn{txn}:{} ", outcome_word(*o));
    }
    let _ = write!(
        s,
        "admissible={}",
        if r.admissible() { "yes" } else { "no" }
    );
    s
}

pub fn cmd_replay(a: &ReplayArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let Some(histories) = load_histories(&a.path, err)? else {
        return Ok(EXIT_FAILURE);
    };
    for h in &histories {
        let replay =
            history::replay_with(h, OracleConfig::new(a.policy).with_capacity(a.capacity))?;
        let mut line = format_replay(&replay);
        if a.capacity != Capacity::Unbounded {
            let full = history::replay_policy(h, a.policy)?;
            let differs: Vec<String> = replay
                .outcomes
                .iter()
                .filter(|(t, o)| {
                    let committed = |o: &Outcome| matches!(o, Outcome::Committed(_));
                    committed(o) != full.outcomes.get(t).is_some_and(committed)
                })
                .map(|(t, _)| format!("txn{t}"))
                .collect();
            if !differs.is_empty() {
                let _ = write!(line, " differs-from-unbounded={}", differs.join(","));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_bench_oracle(a: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if a.clients == 0 {
        writeln!(err, "error: --clients must be at least 1")?;
        return Ok(EXIT_USAGE);
    }
    if !a.no_header {
        writeln!(out, "{}", BenchResult::CSV_HEADER)?;
    }
    if a.requests == 0 {
        return Ok(EXIT_OK);
    }
    let cfg = BenchConfig {
        policy: a.policy,
        clients: a.clients,
        requests: a.requests,
        rows_per_txn: a.rows_per_txn,
        capacity: a.capacity,
        key_space: a.keys,
        seed: a.seed,
        outstanding: a.outstanding,
        wal: a.wal.path(),
    };
    let r = bench_oracle(&cfg)?;
    writeln!(out, "{}", r.csv_row())?;
    writeln!(
        err,
        "commits={} aborts={} pessimistic_aborts={}",
        r.commits, r.aborts, r.pessimistic_aborts
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_recover(a: &RecoverArgs, out: &mut dyn Write) -> Result<i32> {
    let rec = wal::recover(&a.path, a.capacity)
        .with_context(|| format!("recovering {}", a.path.display()))?;
    let t = &rec.table;
    writeln!(out, "records={}", rec.records)?;
    writeln!(out, "valid_bytes={}", rec.valid_len)?;
    writeln!(out, "torn_tail={}", rec.torn_tail)?;
    writeln!(out, "commits={}", t.commit_records().len())?;
    writeln!(out, "aborts={}", t.aborted().len())?;
    writeln!(out, "tracked_rows={}", t.tracked_rows())?;
    writeln!(out, "t_max={}", t.t_max())?;
    writeln!(out, "reserved_up_to={}", rec.reserved_up_to)?;
    writeln!(out, "resume_after={}", rec.resume_after())?;
    Ok(EXIT_OK)
}
