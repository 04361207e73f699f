//! The status oracle.
//!
//! Clients submit commit requests carrying their start timestamp and the
//! identifiers of the rows they wrote (and, under write-snapshot isolation,
//! read). The oracle decides commit or abort in one critical section,
//! assigns commit timestamps, and answers status queries used by snapshot
//! reads.
//!
//! | policy | rows checked       | rows updated |
//! |--------|--------------------|--------------|
//! | SI     | write set          | write set    |
//! | WSI    | read set           | write set    |
//!
//! A check fails when the last commit of a checked row is later than the
//! requester's start timestamp. Under WSI a request with an empty write set
//! is read-only and commits without any check.
//!
//! When a log is attached, every decision is appended before the decision
//! is returned and [`StatusOracle::query_status`] does not report a decision
//! until its record is durable. Decisions made while waiting for a flush
//! share the batch.

mod table;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;
use thiserror::Error;

pub use table::{Capacity, CommitTable};

use crate::timestamp::{Timestamp, TimestampError, TimestampOracle};
use crate::wal::{Lsn, Wal, WalError, WalRecord};

/// Opaque row identifier; conflicts are detected at row granularity.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(Bytes);

impl RowId {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Bytes> for RowId {
    fn from(b: Bytes) -> Self {
        RowId(b)
    }
}

impl From<Vec<u8>> for RowId {
    fn from(v: Vec<u8>) -> Self {
        RowId(Bytes::from(v))
    }
}

impl From<&str> for RowId {
    fn from(s: &str) -> Self {
        RowId(Bytes::copy_from_slice(s.as_bytes()))
    }
}

impl From<String> for RowId {
    fn from(s: String) -> Self {
        RowId(Bytes::from(s))
    }
}

impl fmt::Debug for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "RowId({s:?})"),
            Err(_) => write!(f, "RowId(0x{})", hex::encode(&self.0)),
        }
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

pub type RowSet = BTreeSet<RowId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IsolationPolicy {
    /// Snapshot isolation: write-write conflicts.
    Si,
    /// Write-snapshot isolation: read-write conflicts.
    Wsi,
}

impl IsolationPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            IsolationPolicy::Si => "si",
            IsolationPolicy::Wsi => "wsi",
        }
    }
}

impl fmt::Display for IsolationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IsolationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "si" => Ok(IsolationPolicy::Si),
            "wsi" => Ok(IsolationPolicy::Wsi),
            other => Err(format!(
                "unknown isolation policy {other:?} (expected si or wsi)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommitDecision {
    Committed(Timestamp),
    Aborted,
}

impl CommitDecision {
    pub fn is_committed(self) -> bool {
        matches!(self, CommitDecision::Committed(_))
    }

    pub fn commit_ts(self) -> Option<Timestamp> {
        match self {
            CommitDecision::Committed(t) => Some(t),
            CommitDecision::Aborted => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxnStatus {
    Committed(Timestamp),
    Aborted,
    InFlight,
}

/// Why a request was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortCause {
    /// A checked row was committed after the requester started.
    Conflict,
    /// A checked row is no longer tracked and `T_max` is later than the
    /// requester's start.
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub policy: IsolationPolicy,
    pub capacity: Capacity,
}

impl OracleConfig {
    pub fn new(policy: IsolationPolicy) -> Self {
        Self {
            policy,
            capacity: Capacity::Unbounded,
        }
    }

    pub fn with_capacity(mut self, capacity: Capacity) -> Self {
        self.capacity = capacity;
        self
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("transaction {0} already has a decision")]
    Duplicate(Timestamp),
    #[error("transaction {0} is committed and cannot be aborted")]
    AlreadyCommitted(Timestamp),
    #[error("{op} is not available on a {policy} oracle with {capacity:?} capacity")]
    PolicyMismatch {
        op: &'static str,
        policy: IsolationPolicy,
        capacity: Capacity,
    },
    #[error(transparent)]
    Timestamp(#[from] TimestampError),
    #[error("decision could not be logged: {0}")]
    Log(#[from] WalError),
}

#[derive(Debug, Default)]
struct Counters {
    commits: AtomicU64,
    read_only_commits: AtomicU64,
    conflict_aborts: AtomicU64,
    pessimistic_aborts: AtomicU64,
    client_aborts: AtomicU64,
    rows_checked: AtomicU64,
    protocol_deviations: AtomicU64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OracleMetrics {
    pub commits: u64,
    /// Subset of `commits` with an empty write set.
    pub read_only_commits: u64,
    pub conflict_aborts: u64,
    pub pessimistic_aborts: u64,
    pub client_aborts: u64,
    /// Row lookups performed by conflict checks.
    pub rows_checked: u64,
    /// Read-only WSI requests that arrived with a non-empty read set.
    pub protocol_deviations: u64,
}

impl OracleMetrics {
    pub fn aborts(&self) -> u64 {
        self.conflict_aborts + self.pessimistic_aborts
    }
}

struct State {
    table: CommitTable,
    /// Decisions whose log record may not be durable yet.
    unacked: HashMap<Timestamp, Lsn>,
}

#[derive(Clone, Copy)]
enum Check {
    Si,
    Wsi,
    Bounded,
}

pub struct StatusOracle {
    config: OracleConfig,
    timestamps: Arc<TimestampOracle>,
    log: Option<Arc<Wal>>,
    state: Mutex<State>,
    counters: Counters,
}

impl StatusOracle {
    /// In-memory oracle with its own timestamp source.
    pub fn new(config: OracleConfig) -> Self {
        Self::with_parts(config, Arc::new(TimestampOracle::new()), None, None)
    }

    /// Assembles an oracle from a timestamp source, an optional log and an
    /// optional recovered table. The table's capacity wins over
    /// `config.capacity` if they differ.
    pub fn with_parts(
        mut config: OracleConfig,
        timestamps: Arc<TimestampOracle>,
        log: Option<Arc<Wal>>,
        table: Option<CommitTable>,
    ) -> Self {
        let table = table.unwrap_or_else(|| CommitTable::new(config.capacity));
        config.capacity = table.capacity();
        Self {
            config,
            timestamps,
            log,
            state: Mutex::new(State {
                table,
                unacked: HashMap::new(),
            }),
            counters: Counters::default(),
        }
    }

    pub fn config(&self) -> OracleConfig {
        self.config
    }

    pub fn policy(&self) -> IsolationPolicy {
        self.config.policy
    }

    pub fn timestamps(&self) -> &Arc<TimestampOracle> {
        &self.timestamps
    }

    pub fn log(&self) -> Option<&Arc<Wal>> {
        self.log.as_ref()
    }

    /// Snapshot-isolation commit against the full table.
    pub fn commit_si(
        &self,
        start: Timestamp,
        writes: &RowSet,
    ) -> Result<CommitDecision, OracleError> {
        self.require(
            "commit_si",
            self.config.policy == IsolationPolicy::Si
                && self.config.capacity == Capacity::Unbounded,
        )?;
        self.decide(start, writes, &RowSet::new(), Check::Si)
    }

    /// Write-snapshot-isolation commit against the full table.
    pub fn commit_wsi(
        &self,
        start: Timestamp,
        writes: &RowSet,
        reads: &RowSet,
    ) -> Result<CommitDecision, OracleError> {
        self.require(
            "commit_wsi",
            self.config.policy == IsolationPolicy::Wsi
                && self.config.capacity == Capacity::Unbounded,
        )?;
        self.decide(start, writes, reads, Check::Wsi)
    }

    /// Commit against the capacity-bounded table using the `T_max`
    /// watermark for untracked rows. Checks the policy's row set. With an
    /// unbounded table the watermark stays at zero and decisions match
    /// [`commit_si`](Self::commit_si) / [`commit_wsi`](Self::commit_wsi).
    pub fn commit_bounded(
        &self,
        start: Timestamp,
        writes: &RowSet,
        reads: &RowSet,
    ) -> Result<CommitDecision, OracleError> {
        self.decide(start, writes, reads, Check::Bounded)
    }

    /// Routes to the commit operation matching this oracle's configuration.
    pub fn commit(
        &self,
        start: Timestamp,
        writes: &RowSet,
        reads: &RowSet,
    ) -> Result<CommitDecision, OracleError> {
        match (self.config.capacity, self.config.policy) {
            (Capacity::Bounded(_), _) => self.commit_bounded(start, writes, reads),
            (Capacity::Unbounded, IsolationPolicy::Si) => self.commit_si(start, writes),
            (Capacity::Unbounded, IsolationPolicy::Wsi) => self.commit_wsi(start, writes, reads),
        }
    }

    fn require(&self, op: &'static str, ok: bool) -> Result<(), OracleError> {
        if ok {
            Ok(())
        } else {
            Err(OracleError::PolicyMismatch {
                op,
                policy: self.config.policy,
                capacity: self.config.capacity,
            })
        }
    }

    fn decide(
        &self,
        start: Timestamp,
        writes: &RowSet,
        reads: &RowSet,
        check: Check,
    ) -> Result<CommitDecision, OracleError> {
        let policy = self.config.policy;
        let read_only = writes.is_empty();
        if read_only && policy == IsolationPolicy::Wsi && !reads.is_empty() {
            log::warn!(
                "read-only request {start} carried {} read rows; treating as read-only",
                reads.len()
            );
            self.counters
                .protocol_deviations
                .fetch_add(1, Ordering::Relaxed);
        }
        let checked = match policy {
            IsolationPolicy::Si => writes,
            IsolationPolicy::Wsi => reads,
        };

        let mut st = self.state.lock();
        if st.table.is_decided(start) {
            return Err(OracleError::Duplicate(start));
        }

        let cause = if read_only {
            // Nothing to check: SI has an empty write set to compare, and WSI
            // exempts read-only transactions outright.
            None
        } else {
            self.counters
                .rows_checked
                .fetch_add(checked.len() as u64, Ordering::Relaxed);
            match check {
                Check::Si | Check::Wsi => st
                    .table
                    .conflicts(start, checked)
                    .then_some(AbortCause::Conflict),
                Check::Bounded => st.table.check_bounded(start, checked),
            }
        };

        if let Some(cause) = cause {
            let lsn = self.log_record(&WalRecord::Abort { start })?;
            st.table.record_abort(start);
            if let Some(lsn) = lsn {
                st.unacked.insert(start, lsn);
            }
            drop(st);
            match cause {
                AbortCause::Conflict => &self.counters.conflict_aborts,
                AbortCause::Pessimistic => &self.counters.pessimistic_aborts,
            }
            .fetch_add(1, Ordering::Relaxed);
            self.await_durable(start, lsn)?;
            return Ok(CommitDecision::Aborted);
        }

        let commit = self.timestamps.next()?;
        let lsn = self.log_record(&WalRecord::Commit {
            start,
            commit,
            rows: writes.iter().cloned().collect(),
        })?;
        st.table.record_commit(start, commit, writes);
        if let Some(lsn) = lsn {
            st.unacked.insert(start, lsn);
        }
        drop(st);
        self.counters.commits.fetch_add(1, Ordering::Relaxed);
        if read_only {
            self.counters
                .read_only_commits
                .fetch_add(1, Ordering::Relaxed);
        }
        self.await_durable(start, lsn)?;
        Ok(CommitDecision::Committed(commit))
    }

    fn log_record(&self, rec: &WalRecord) -> Result<Option<Lsn>, OracleError> {
        match &self.log {
            Some(log) => Ok(Some(log.append_async(rec)?)),
            None => Ok(None),
        }
    }

    fn await_durable(&self, start: Timestamp, lsn: Option<Lsn>) -> Result<(), OracleError> {
        let (Some(log), Some(lsn)) = (&self.log, lsn) else {
            return Ok(());
        };
        log.wait_durable(lsn)?;
        let mut st = self.state.lock();
        if st.unacked.get(&start) == Some(&lsn) {
            st.unacked.remove(&start);
        }
        Ok(())
    }

    /// Current status of a transaction. A decision whose log record is not
    /// yet durable is waited for; if the log fails meanwhile the transaction
    /// is reported as in flight, since the decision may not survive a crash.
    pub fn query_status(&self, start: Timestamp) -> TxnStatus {
        let (status, pending) = {
            let st = self.state.lock();
            (st.table.status(start), st.unacked.get(&start).copied())
        };
        match (pending, &self.log) {
            (Some(lsn), Some(log)) => match log.wait_durable(lsn) {
                Ok(()) => status,
                Err(_) => TxnStatus::InFlight,
            },
            _ => status,
        }
    }

    /// Marks a transaction aborted so readers skip its tentative writes.
    /// Idempotent; fails if the transaction already committed.
    pub fn report_abort(&self, start: Timestamp) -> Result<(), OracleError> {
        let mut st = self.state.lock();
        match st.table.status(start) {
            TxnStatus::Committed(_) => return Err(OracleError::AlreadyCommitted(start)),
            TxnStatus::Aborted => {
                let pending = st.unacked.get(&start).copied();
                drop(st);
                return self.await_durable(start, pending);
            }
            TxnStatus::InFlight => {}
        }
        let lsn = self.log_record(&WalRecord::Abort { start })?;
        st.table.record_abort(start);
        if let Some(lsn) = lsn {
            st.unacked.insert(start, lsn);
        }
        drop(st);
        self.counters.client_aborts.fetch_add(1, Ordering::Relaxed);
        self.await_durable(start, lsn)
    }

    pub fn metrics(&self) -> OracleMetrics {
        let c = &self.counters;
        OracleMetrics {
            commits: c.commits.load(Ordering::Relaxed),
            read_only_commits: c.read_only_commits.load(Ordering::Relaxed),
            conflict_aborts: c.conflict_aborts.load(Ordering::Relaxed),
            pessimistic_aborts: c.pessimistic_aborts.load(Ordering::Relaxed),
            client_aborts: c.client_aborts.load(Ordering::Relaxed),
            rows_checked: c.rows_checked.load(Ordering::Relaxed),
            protocol_deviations: c.protocol_deviations.load(Ordering::Relaxed),
        }
    }

    /// Copy of the in-memory table.
    pub fn table(&self) -> CommitTable {
        self.state.lock().table.clone()
    }

    /// Runs `f` against the table under the oracle's lock.
    pub fn with_table<R>(&self, f: impl FnOnce(&CommitTable) -> R) -> R {
        f(&self.state.lock().table)
    }
}

impl fmt::Debug for StatusOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StatusOracle")
            .field("config", &self.config)
            .field("metrics", &self.metrics())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: u64) -> Timestamp {
        Timestamp::new(v)
    }

    fn rows(items: &[&str]) -> RowSet {
        items.iter().map(|s| RowId::from(*s)).collect()
    }

    fn oracle(policy: IsolationPolicy) -> StatusOracle {
        StatusOracle::new(OracleConfig::new(policy))
    }

    /// Draws `n` start timestamps so the oracle's counter matches a history.
    fn begin(o: &StatusOracle, n: usize) -> Vec<Timestamp> {
        (0..n).map(|_| o.timestamps().next().unwrap()).collect()
    }

    #[test]
    fn si_disjoint_writes_both_commit() {
        let o = oracle(IsolationPolicy::Si);
        begin(&o, 2);
        assert_eq!(
            o.commit_si(ts(1), &rows(&["y"])).unwrap(),
            CommitDecision::Committed(ts(3))
        );
        assert_eq!(
            o.commit_si(ts(2), &rows(&["x"])).unwrap(),
            CommitDecision::Committed(ts(4))
        );
    }

    #[test]
    fn si_first_committer_wins() {
        let o = oracle(IsolationPolicy::Si);
        begin(&o, 2);
        assert_eq!(
            o.commit_si(ts(2), &rows(&["x"])).unwrap(),
            CommitDecision::Committed(ts(3))
        );
        assert_eq!(
            o.commit_si(ts(1), &rows(&["x"])).unwrap(),
            CommitDecision::Aborted
        );
        assert_eq!(o.query_status(ts(1)), TxnStatus::Aborted);
        assert_eq!(o.metrics().conflict_aborts, 1);
    }

    #[test]
    fn si_empty_write_set_always_commits() {
        let o = oracle(IsolationPolicy::Si);
        begin(&o, 5);
        o.commit_si(ts(1), &rows(&["x"])).unwrap();
        assert!(o.commit_si(ts(5), &RowSet::new()).unwrap().is_committed());
    }

    #[test]
    fn wsi_write_skew_aborts_second() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 2);
        let rs = rows(&["x", "y"]);
        assert_eq!(
            o.commit_wsi(ts(1), &rows(&["x"]), &rs).unwrap(),
            CommitDecision::Committed(ts(3))
        );
        assert_eq!(
            o.commit_wsi(ts(2), &rows(&["y"]), &rs).unwrap(),
            CommitDecision::Aborted
        );
    }

    #[test]
    fn wsi_blind_write_commits() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 2);
        assert_eq!(
            o.commit_wsi(ts(1), &rows(&["x"]), &rows(&["x"])).unwrap(),
            CommitDecision::Committed(ts(3))
        );
        assert_eq!(
            o.commit_wsi(ts(2), &rows(&["x"]), &RowSet::new()).unwrap(),
            CommitDecision::Committed(ts(4))
        );
    }

    #[test]
    fn wsi_write_write_without_read_is_fine() {
        // txn_c writes r' and commits inside txn_n, which read only r.
        let o = oracle(IsolationPolicy::Wsi);
        let [n, c]: [Timestamp; 2] = begin(&o, 2).try_into().unwrap();
        assert!(o
            .commit_wsi(c, &rows(&["r'"]), &RowSet::new())
            .unwrap()
            .is_committed());
        assert!(o
            .commit_wsi(n, &rows(&["r'"]), &rows(&["r"]))
            .unwrap()
            .is_committed());
    }

    #[test]
    fn wsi_read_only_skips_checks() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 7);
        o.commit_wsi(ts(1), &rows(&["a"]), &rows(&["a", "b"]))
            .unwrap();
        let before = o.metrics().rows_checked;
        assert!(o
            .commit_wsi(ts(7), &RowSet::new(), &RowSet::new())
            .unwrap()
            .is_committed());
        assert_eq!(o.metrics().rows_checked, before);
        assert_eq!(o.metrics().read_only_commits, 1);
        assert_eq!(o.metrics().protocol_deviations, 0);
    }

    #[test]
    fn wsi_read_only_with_reads_is_a_deviation_but_commits() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 2);
        o.commit_wsi(ts(2), &rows(&["x"]), &RowSet::new()).unwrap();
        assert!(o
            .commit_wsi(ts(1), &RowSet::new(), &rows(&["x"]))
            .unwrap()
            .is_committed());
        assert_eq!(o.metrics().protocol_deviations, 1);
    }

    #[test]
    fn overlapping_read_and_write_sets() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 2);
        o.commit_wsi(ts(1), &rows(&["x"]), &rows(&["x"])).unwrap();
        assert_eq!(
            o.commit_wsi(ts(2), &rows(&["x"]), &rows(&["x"])).unwrap(),
            CommitDecision::Aborted
        );
    }

    #[test]
    fn duplicate_requests_are_rejected() {
        let o = oracle(IsolationPolicy::Si);
        begin(&o, 1);
        o.commit_si(ts(1), &rows(&["x"])).unwrap();
        assert!(matches!(
            o.commit_si(ts(1), &rows(&["x"])),
            Err(OracleError::Duplicate(_))
        ));
        o.report_abort(ts(9)).unwrap();
        assert!(matches!(
            o.commit_si(ts(9), &rows(&["y"])),
            Err(OracleError::Duplicate(_))
        ));
    }

    #[test]
    fn wrong_entry_point_is_rejected() {
        let o = oracle(IsolationPolicy::Si);
        assert!(matches!(
            o.commit_wsi(ts(1), &RowSet::new(), &RowSet::new()),
            Err(OracleError::PolicyMismatch { .. })
        ));
        let b = StatusOracle::new(
            OracleConfig::new(IsolationPolicy::Wsi).with_capacity(Capacity::bounded(4)),
        );
        assert!(matches!(
            b.commit_wsi(ts(1), &RowSet::new(), &RowSet::new()),
            Err(OracleError::PolicyMismatch { .. })
        ));
    }

    #[test]
    fn report_abort_semantics() {
        let o = oracle(IsolationPolicy::Wsi);
        begin(&o, 4);
        o.report_abort(ts(3)).unwrap();
        o.report_abort(ts(3)).unwrap();
        assert_eq!(o.query_status(ts(3)), TxnStatus::Aborted);
        assert_eq!(o.metrics().client_aborts, 1);
        o.commit_wsi(ts(1), &rows(&["x"]), &rows(&["x"])).unwrap();
        assert!(matches!(
            o.report_abort(ts(1)),
            Err(OracleError::AlreadyCommitted(_))
        ));
        assert_eq!(o.query_status(ts(999)), TxnStatus::InFlight);
    }

    #[test]
    fn bounded_watermark_examples() {
        let o = StatusOracle::new(
            OracleConfig::new(IsolationPolicy::Wsi).with_capacity(Capacity::bounded(2)),
        );
        let table = {
            let mut t = CommitTable::new(Capacity::bounded(2));
            t.record_commit(ts(90), ts(4), [&RowId::from("c")]);
            t.record_commit(ts(91), ts(5), [&RowId::from("a")]);
            t.record_commit(ts(92), ts(6), [&RowId::from("b")]);
            t
        };
        let o2 = StatusOracle::with_parts(
            o.config(),
            Arc::new(TimestampOracle::with_block_size(10)),
            None,
            Some(table.clone()),
        );
        assert_eq!(o2.with_table(|t| t.t_max()), ts(4));
        assert_eq!(
            o2.commit_bounded(ts(3), &rows(&["d"]), &rows(&["c"]))
                .unwrap(),
            CommitDecision::Aborted
        );
        assert_eq!(o2.metrics().pessimistic_aborts, 1);
        let o3 = StatusOracle::with_parts(
            o.config(),
            Arc::new(TimestampOracle::with_block_size(10)),
            None,
            Some(table),
        );
        assert!(o3
            .commit_bounded(ts(5), &rows(&["d"]), &rows(&["c"]))
            .unwrap()
            .is_committed());
    }

    #[test]
    fn commit_timestamps_increase_in_decision_order() {
        let o = Arc::new(oracle(IsolationPolicy::Wsi));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let o = Arc::clone(&o);
                std::thread::spawn(move || {
                    let mut out = Vec::new();
                    for i in 0..200 {
                        let start = o.timestamps().next().unwrap();
                        let w = rows(&[&format!("{}", (t * 7 + i) % 13)]);
                        if let CommitDecision::Committed(c) = o.commit_wsi(start, &w, &w).unwrap() {
                            assert!(c > start);
                            out.push(c);
                        }
                    }
                    out
                })
            })
            .collect();
        for h in handles {
            let cs = h.join().unwrap();
            assert!(cs.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
