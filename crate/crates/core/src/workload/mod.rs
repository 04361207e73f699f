//! YCSB-style transactional workloads and their metrics.
//!
//! A run executes `txn_count` generated scripts across `client_count`
//! clients. Aborted transactions are never retried. Script `i` is generated
//! from its own RNG stream, so the scripts of a run do not depend on which
//! client executes them or in which order.

mod keys;

pub use keys::{fnv1a64, zeta, Distribution, KeyChooser, Zipf};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::history::{History, HistoryEvent, TxnId};
use crate::oracle::{Capacity, CommitDecision, IsolationPolicy, RowId};
use crate::txn::{Database, DatabaseConfig, OpenError, Transaction, TxnError};
use crate::wal::BatchPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mix {
    /// Every transaction is complex: half reads, half writes.
    Complex,
    /// Half read-only transactions, half complex.
    Mixed,
}

impl Mix {
    pub fn as_str(self) -> &'static str {
        match self {
            Mix::Complex => "complex",
            Mix::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complex" => Ok(Mix::Complex),
            "mixed" => Ok(Mix::Mixed),
            other => Err(format!("unknown mix {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid workload: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub key_space: u64,
    pub mix: Mix,
    pub distribution: Distribution,
    pub zipf_constant: f64,
    pub ops_per_txn_max: u32,
    /// Share of reads in complex transactions.
    pub read_fraction: f64,
    pub seed: u64,
    pub txn_count: u64,
    pub client_count: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            key_space: 100_000,
            mix: Mix::Mixed,
            distribution: Distribution::Uniform,
            zipf_constant: 0.99,
            ops_per_txn_max: 20,
            read_fraction: 0.5,
            seed: 0,
            txn_count: 10_000,
            client_count: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::Invalid(m.to_string()));
        if self.key_space == 0 {
            return bad("key space must be at least 1");
        }
        if self.client_count == 0 {
            return bad("client count must be at least 1");
        }
        if !(self.zipf_constant > 0.0 && self.zipf_constant < 1.0) {
            return bad("zipf constant must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("read fraction must lie in [0, 1]");
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped; keys not listed here are errors.
    pub fn from_config(text: &str) -> Result<Self, SpecError> {
        let mut spec = WorkloadSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SpecError::Config {
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str) -> Result<T, String> {
                v.replace('_', "")
                    .parse()
                    .map_err(|_| format!("bad number {v:?}"))
            }
            match key {
                "key_space" | "keys" => spec.key_space = num(value).map_err(err)?,
                "mix" => spec.mix = value.parse().map_err(err)?,
                "distribution" | "dist" => spec.distribution = value.parse().map_err(err)?,
                "zipf_constant" => spec.zipf_constant = num(value).map_err(err)?,
                "ops_per_txn_max" => spec.ops_per_txn_max = num(value).map_err(err)?,
                "read_fraction" => spec.read_fraction = num(value).map_err(err)?,
                "seed" => spec.seed = num(value).map_err(err)?,
                "txn_count" | "txns" => spec.txn_count = num(value).map_err(err)?,
                "client_count" | "clients" => spec.client_count = num(value).map_err(err)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_config(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read(u64),
    Write(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnKind {
    ReadOnly,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnScript {
    pub kind: TxnKind,
    pub ops: Vec<Op>,
}

impl TxnScript {
    pub fn writes(&self) -> bool {
        self.ops.iter().any(|o| matches!(o, Op::Write(_)))
    }
}

/// Draws one script: `n` uniform in `0..=ops_per_txn_max` operations with
/// rows drawn with replacement.
pub fn generate_txn(spec: &WorkloadSpec, keys: &KeyChooser, rng: &mut impl Rng) -> TxnScript {
    let n = rng.gen_range(0..=spec.ops_per_txn_max);
    let kind = match spec.mix {
        Mix::Mixed if rng.gen_bool(0.5) => TxnKind::ReadOnly,
        _ => TxnKind::Complex,
    };
    let ops = (0..n)
        .map(|_| {
            let key = keys.next(rng);
            match kind {
                TxnKind::ReadOnly => Op::Read(key),
                TxnKind::Complex if rng.gen_bool(spec.read_fraction) => Op::Read(key),
                TxnKind::Complex => Op::Write(key),
            }
        })
        .collect();
    TxnScript { kind, ops }
}

/// Deterministic script source: script `i` depends only on the spec and `i`.
#[derive(Debug, Clone)]
pub struct ScriptSource {
    spec: WorkloadSpec,
    keys: KeyChooser,
}

impl ScriptSource {
    pub fn new(spec: &WorkloadSpec) -> Self {
        Self {
            keys: KeyChooser::new(spec.distribution, spec.key_space, spec.zipf_constant),
            spec: spec.clone(),
        }
    }

    pub fn script(&self, index: u64) -> TxnScript {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index);
        generate_txn(&self.spec, &self.keys, &mut rng)
    }
}

pub fn row_for(key: u64) -> RowId {
    RowId::from(format!("user{key}"))
}

/// Power-of-two latency buckets in nanoseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyHistogram {
    buckets: [u64; 64],
    count: u64,
    total_ns: u128,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self {
            buckets: [0; 64],
            count: 0,
            total_ns: 0,
        }
    }
}

impl LatencyHistogram {
    pub fn record(&mut self, d: Duration) {
        let ns = d.as_nanos().min(u64::MAX as u128) as u64;
        self.buckets[(64 - ns.leading_zeros()).min(63) as usize] += 1;
        self.count += 1;
        self.total_ns += ns as u128;
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.buckets.iter_mut().zip(other.buckets.iter()) {
            *a += b;
        }
        self.count += other.count;
        self.total_ns += other.total_ns;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            return Duration::ZERO;
        }
        Duration::from_nanos((self.total_ns / self.count as u128) as u64)
    }

    /// Upper bound of the bucket holding quantile `q`.
    pub fn quantile(&self, q: f64) -> Duration {
        if self.count == 0 {
            return Duration::ZERO;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= rank {
                return Duration::from_nanos(if i == 0 { 0 } else { (1u64 << i) - 1 });
            }
        }
        Duration::from_nanos(u64::MAX)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpLatencies {
    pub read: LatencyHistogram,
    pub write: LatencyHistogram,
    pub commit: LatencyHistogram,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    committed: u64,
    aborted: u64,
    read_only_commits: u64,
    read_only_aborted: u64,
    latency: OpLatencies,
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        self.committed += o.committed;
        self.aborted += o.aborted;
        self.read_only_commits += o.read_only_commits;
        self.read_only_aborted += o.read_only_aborted;
        self.latency.read.merge(&o.latency.read);
        self.latency.write.merge(&o.latency.write);
        self.latency.commit.merge(&o.latency.commit);
    }

    fn finish(&mut self, read_only: bool, decision: CommitDecision) {
        match (decision.is_committed(), read_only) {
            (true, true) => {
                self.committed += 1;
                self.read_only_commits += 1;
            }
            (true, false) => self.committed += 1,
            (false, true) => {
                self.aborted += 1;
                self.read_only_aborted += 1;
            }
            (false, false) => self.aborted += 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub policy: IsolationPolicy,
    pub distribution: Distribution,
    pub mix: Mix,
    pub clients: usize,
    pub committed: u64,
    pub aborted: u64,
    /// Committed transactions with an empty write set.
    pub read_only_commits: u64,
    /// Aborted transactions with an empty write set; zero in a correct run.
    pub read_only_aborted: u64,
    /// Aborts caused by the bounded table's watermark.
    pub pessimistic_aborts: u64,
    pub elapsed: Duration,
    pub latency: OpLatencies,
    /// Set when an infrastructure failure cut the run short; the counts then
    /// cover only the transactions finished before it.
    pub failure: Option<String>,
    /// Event trace, when requested and the executor is interleaved.
    pub trace: Option<History>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str =
        "policy,distribution,mix,clients,committed,aborted,abort_rate,pessimistic_aborts,throughput";

    pub fn valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn abort_rate(&self) -> f64 {
        let total = self.committed + self.aborted;
        if total == 0 {
            0.0
        } else {
            self.aborted as f64 / total as f64
        }
    }

    /// Committed transactions per wall-clock second.
    pub fn throughput(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.committed as f64 / secs
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{},{:.1}",
            self.policy,
            self.distribution,
            self.mix,
            self.clients,
            self.committed,
            self.aborted,
            self.abort_rate(),
            self.pessimistic_aborts,
            self.throughput()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    /// One OS thread per client.
    Threads,
    /// All clients on the calling thread; a seeded scheduler picks which
    /// client performs the next operation. Deterministic for a given seed.
    Interleaved,
}

impl FromStr for Executor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threads" => Ok(Executor::Threads),
            "interleaved" => Ok(Executor::Interleaved),
            other => Err(format!("unknown executor {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub policy: IsolationPolicy,
    pub capacity: Capacity,
    pub wal: Option<PathBuf>,
    pub batch: BatchPolicy,
    pub executor: Executor,
    /// Record the executed operations as a history (interleaved only).
    pub trace: bool,
    /// Collect garbage after this many finished transactions; 0 disables.
    pub gc_every: u64,
}

impl RunConfig {
    pub fn new(policy: IsolationPolicy) -> Self {
        Self {
            policy,
            capacity: Capacity::Unbounded,
            wal: None,
            batch: BatchPolicy::default(),
            executor: Executor::Threads,
            trace: false,
            gc_every: 1000,
        }
    }

    pub fn executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("could not open the database: {0}")]
    Open(#[from] OpenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Executes the workload. Setup problems are errors; a failure during the
/// run is reported through [`RunMetrics::failure`].
pub fn run(spec: &WorkloadSpec, config: &RunConfig) -> Result<RunMetrics, RunError> {
    spec.validate()?;
    let mut db_config = DatabaseConfig::new(config.policy)
        .capacity(config.capacity)
        .batch(config.batch);
    db_config.wal = config.wal.clone();
    let db = Database::open(db_config)?;
    let source = ScriptSource::new(spec);
    let started = Instant::now();
    let (tally, failure, trace) = match config.executor {
        Executor::Threads => {
            let (t, f) = run_threads(&db, &source, spec, config);
            (t, f, None)
        }
        Executor::Interleaved => run_interleaved(&db, &source, spec, config),
    };
    let elapsed = started.elapsed();
    Ok(RunMetrics {
        policy: config.policy,
        distribution: spec.distribution,
        mix: spec.mix,
        clients: spec.client_count,
        committed: tally.committed,
        aborted: tally.aborted,
        read_only_commits: tally.read_only_commits,
        read_only_aborted: tally.read_only_aborted,
        pessimistic_aborts: db.oracle().metrics().pessimistic_aborts,
        elapsed,
        latency: tally.latency,
        failure,
        trace,
    })
}

fn value_for(index: u64) -> Bytes {
    Bytes::copy_from_slice(&index.to_le_bytes())
}

fn apply(
    txn: &mut Transaction,
    op: Op,
    index: u64,
    latency: &mut OpLatencies,
) -> Result<(), TxnError> {
    let t = Instant::now();
    match op {
        Op::Read(k) => {
            txn.read(&row_for(k))?;
            latency.read.record(t.elapsed());
        }
        Op::Write(k) => {
            txn.write(row_for(k), value_for(index))?;
            latency.write.record(t.elapsed());
        }
    }
    Ok(())
}

fn commit(txn: &mut Transaction, tally: &mut Tally) -> Result<CommitDecision, TxnError> {
    let read_only = txn.is_read_only();
    let t = Instant::now();
    let decision = txn.commit()?;
    tally.latency.commit.record(t.elapsed());
    tally.finish(read_only, decision);
    Ok(decision)
}

fn maybe_gc(db: &Database, finished: u64, every: u64) {
    if every > 0 && finished.is_multiple_of(every) {
        let dropped = db.collect_garbage();
        log::debug!("gc after {finished} transactions dropped {dropped} versions");
    }
}

fn run_threads(
    db: &Database,
    source: &ScriptSource,
    spec: &WorkloadSpec,
    config: &RunConfig,
) -> (Tally, Option<String>) {
    let next = AtomicU64::new(0);
    let finished = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let failure = Mutex::new(None);
    let total = Mutex::new(Tally::default());
    std::thread::scope(|s| {
        for _ in 0..spec.client_count {
            s.spawn(|| {
                let mut tally = Tally::default();
                let result = (|| -> Result<(), TxnError> {
                    while !stop.load(Ordering::Relaxed) {
                        let index = next.fetch_add(1, Ordering::Relaxed);
                        if index >= spec.txn_count {
                            break;
                        }
                        let script = source.script(index);
                        let mut txn = db.begin()?;
                        for op in &script.ops {
                            apply(&mut txn, *op, index, &mut tally.latency)?;
                        }
                        commit(&mut txn, &mut tally)?;
                        let done = finished.fetch_add(1, Ordering::Relaxed) + 1;
                        maybe_gc(db, done, config.gc_every);
                    }
                    Ok(())
                })();
                if let Err(e) = result {
                    stop.store(true, Ordering::Relaxed);
                    failure.lock().get_or_insert(e.to_string());
                }
                total.lock().merge(&tally);
            });
        }
    });
    (total.into_inner(), failure.into_inner())
}

struct Client {
    index: u64,
    script: TxnScript,
    pos: usize,
    txn: Option<Transaction>,
}

fn trace_id(index: u64) -> TxnId {
    (index + 1) as TxnId
}

fn run_interleaved(
    db: &Database,
    source: &ScriptSource,
    spec: &WorkloadSpec,
    config: &RunConfig,
) -> (Tally, Option<String>, Option<History>) {
    let mut sched = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c11e_a75c_4ed0);
    let mut tally = Tally::default();
    let mut events: Option<Vec<HistoryEvent>> = config.trace.then(Vec::new);
    let mut clients: Vec<Option<Client>> = (0..spec.client_count).map(|_| None).collect();
    let mut live: Vec<usize> = (0..spec.client_count).collect();
    let mut next_index = 0u64;
    let mut finished = 0u64;

    let mut step = |slot: &mut Option<Client>| -> Result<bool, TxnError> {
        if slot.is_none() {
            if next_index >= spec.txn_count {
                return Ok(false);
            }
            *slot = Some(Client {
                index: next_index,
                script: source.script(next_index),
                pos: 0,
                txn: None,
            });
            next_index += 1;
        }
        let c = slot.as_mut().expect("filled above");
        // The transaction begins with its first action so that a traced
        // history's start coincides with its first event.
        if c.txn.is_none() {
            c.txn = Some(db.begin()?);
        }
        let txn = c.txn.as_mut().expect("begun above");
        if let Some(op) = c.script.ops.get(c.pos).copied() {
            apply(txn, op, c.index, &mut tally.latency)?;
            if let Some(ev) = events.as_mut() {
                let id = trace_id(c.index);
                ev.push(match op {
                    Op::Read(k) => HistoryEvent::read(id, k.to_string()),
                    Op::Write(k) => HistoryEvent::write(id, k.to_string()),
                });
            }
            c.pos += 1;
            return Ok(true);
        }
        let decision = commit(txn, &mut tally)?;
        if let Some(ev) = events.as_mut() {
            let txn = trace_id(c.index);
            ev.push(match decision {
                CommitDecision::Committed(_) => HistoryEvent::Commit { txn },
                CommitDecision::Aborted => HistoryEvent::Abort { txn },
            });
        }
        *slot = None;
        finished += 1;
        maybe_gc(db, finished, config.gc_every);
        Ok(true)
    };

    let mut failure = None;
    while !live.is_empty() {
        let pick = sched.gen_range(0..live.len());
        match step(&mut clients[live[pick]]) {
            Ok(true) => {}
            Ok(false) => {
                live.swap_remove(pick);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let trace = events.map(|e| History::new(e).expect("trace events are well formed"));
    (tally, failure, trace)
}
