//! Synthetic load straight against the status oracle, bypassing the store.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsi_core::wal::{BatchPolicy, Wal};
use wsi_core::{
    Capacity, IsolationPolicy, OracleConfig, RowId, RowSet, StatusOracle, Timestamp,
    TimestampOracle,
};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub policy: IsolationPolicy,
    pub clients: usize,
    pub requests: u64,
    /// Size of both the read set and the write set of every request.
    pub rows_per_txn: usize,
    pub capacity: Capacity,
    /// Rows are drawn uniformly from this many ids.
    pub key_space: u64,
    pub seed: u64,
    /// Transactions each client keeps begun but undecided.
    pub outstanding: usize,
    pub wal: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(policy: IsolationPolicy) -> Self {
        Self {
            policy,
            clients: 1,
            requests: 100_000,
            rows_per_txn: 4,
            capacity: Capacity::Unbounded,
            key_space: 1_000_000,
            seed: 0,
            outstanding: 100,
            wal: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub policy: IsolationPolicy,
    pub clients: usize,
    pub decisions: u64,
    pub elapsed: Duration,
    pub p50: Duration,
    pub p99: Duration,
    pub commits: u64,
    pub aborts: u64,
    pub pessimistic_aborts: u64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "policy,clients,decisions_per_sec,p50_us,p99_us";

    pub fn decisions_per_sec(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.decisions as f64 / secs
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.1},{:.2},{:.2}",
            self.policy,
            self.clients,
            self.decisions_per_sec(),
            self.p50.as_secs_f64() * 1e6,
            self.p99.as_secs_f64() * 1e6
        )
    }
}

fn percentile(sorted: &[u64], q: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Duration::from_nanos(sorted[rank - 1])
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, key_space: u64) -> RowSet {
    (0..n)
        .map(|_| RowId::from(format!("row{}", rng.gen_range(0..key_space))))
        .collect()
}

pub fn bench_oracle(cfg: &BenchConfig) -> Result<BenchResult> {
    anyhow::ensure!(cfg.clients > 0, "need at least one client");
    anyhow::ensure!(cfg.key_space > 0, "key space must be non-empty");
    let oracle_cfg = OracleConfig::new(cfg.policy).with_capacity(cfg.capacity);
    let oracle = match &cfg.wal {
        None => StatusOracle::new(oracle_cfg),
        Some(path) => {
            let log = Arc::new(Wal::create(path, BatchPolicy::default())?);
            let ts = Arc::new(TimestampOracle::with_log(
                Arc::clone(&log),
                wsi_core::timestamp::DEFAULT_BLOCK_SIZE,
                Timestamp::ZERO,
            ));
            StatusOracle::with_parts(oracle_cfg, ts, Some(log), None)
        }
    };
    let outstanding = cfg.outstanding.max(1);
    let started = Instant::now();
    let per_client: Vec<Result<Vec<u64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.clients)
            .map(|client| {
                let oracle = &oracle;
                let quota = cfg.requests / cfg.clients as u64
                    + u64::from((client as u64) < cfg.requests % cfg.clients as u64);
                s.spawn(move || -> Result<Vec<u64>> {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(client as u64);
                    let mut latencies = Vec::with_capacity(quota as usize);
                    let mut pending = VecDeque::with_capacity(outstanding);
                    let mut to_begin = quota;
                    while to_begin > 0 && pending.len() < outstanding {
                        pending.push_back(oracle.timestamps().next()?);
                        to_begin -= 1;
                    }
                    while let Some(start) = pending.pop_front() {
                        let writes = random_rows(&mut rng, cfg.rows_per_txn, cfg.key_space);
                        let reads = random_rows(&mut rng, cfg.rows_per_txn, cfg.key_space);
                        let t = Instant::now();
                        oracle.commit_bounded(start, &writes, &reads)?;
                        latencies.push(t.elapsed().as_nanos() as u64);
                        if to_begin > 0 {
                            pending.push_back(oracle.timestamps().next()?);
                            to_begin -= 1;
                        }
                    }
                    Ok(latencies)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench client panicked"))
            .collect()
    });
    let elapsed = started.elapsed();
    let mut all = Vec::with_capacity(cfg.requests as usize);
    for lat in per_client {
        all.extend(lat?);
    }
    all.sort_unstable();
    let m = oracle.metrics();
    Ok(BenchResult {
        policy: cfg.policy,
        clients: cfg.clients,
        decisions: all.len() as u64,
        elapsed,
        p50: percentile(&all, 0.50),
        p99: percentile(&all, 0.99),
        commits: m.commits,
        aborts: m.aborts(),
        pessimistic_aborts: m.pessimistic_aborts,
    })
}
