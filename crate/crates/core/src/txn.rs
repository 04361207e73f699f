//! Client-side transactions.
//!
//! A [`Transaction`] reads from the snapshot of its start timestamp, writes
//! tentative versions straight into the store, and tracks the identifiers of
//! the rows it read and wrote. On commit those sets are sent to the status
//! oracle. Under write-snapshot isolation a transaction that wrote nothing
//! sends two empty sets, so the oracle has no checking to do.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;
use thiserror::Error;

use crate::mvstore::{Store, VisibleVersion};
use crate::oracle::{
    Capacity, CommitDecision, IsolationPolicy, OracleConfig, OracleError, RowId, RowSet,
    StatusOracle,
};
use crate::timestamp::{Timestamp, TimestampError, TimestampOracle, DEFAULT_BLOCK_SIZE};
use crate::wal::{self, BatchPolicy, Wal, WalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed(Timestamp),
    Aborted,
}

#[derive(Debug, Error)]
pub enum TxnError {
    #[error("transaction {start} is {state:?}, not active")]
    NotActive { start: Timestamp, state: TxnState },
    #[error("could not obtain a start timestamp: {0}")]
    Begin(#[source] TimestampError),
    #[error("commit failed; transaction left active: {0}")]
    Commit(#[source] OracleError),
    #[error("abort failed: {0}")]
    Abort(#[source] OracleError),
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error(transparent)]
    Log(#[from] WalError),
}

#[derive(Debug, Clone)]
pub struct DatabaseConfig {
    pub policy: IsolationPolicy,
    pub capacity: Capacity,
    /// Oracle log file; `None` keeps everything in memory.
    pub wal: Option<PathBuf>,
    pub batch: BatchPolicy,
    pub timestamp_block: u64,
}

impl DatabaseConfig {
    pub fn new(policy: IsolationPolicy) -> Self {
        Self {
            policy,
            capacity: Capacity::Unbounded,
            wal: None,
            batch: BatchPolicy::default(),
            timestamp_block: DEFAULT_BLOCK_SIZE,
        }
    }

    pub fn capacity(mut self, capacity: Capacity) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn wal(mut self, path: impl Into<PathBuf>) -> Self {
        self.wal = Some(path.into());
        self
    }

    pub fn batch(mut self, batch: BatchPolicy) -> Self {
        self.batch = batch;
        self
    }
}

struct Shared {
    timestamps: Arc<TimestampOracle>,
    oracle: Arc<StatusOracle>,
    store: Arc<Store>,
    /// Start timestamps of active transactions, with multiplicity.
    active: Mutex<BTreeMap<Timestamp, usize>>,
}

impl Shared {
    fn deregister(&self, start: Timestamp) {
        let mut active = self.active.lock();
        if let Some(n) = active.get_mut(&start) {
            *n -= 1;
            if *n == 0 {
                active.remove(&start);
            }
        }
    }
}

/// Timestamp oracle, status oracle and store wired together.
#[derive(Clone)]
pub struct Database {
    shared: Arc<Shared>,
}

impl Database {
    pub fn in_memory(policy: IsolationPolicy) -> Self {
        Self::from_oracle(StatusOracle::new(OracleConfig::new(policy)))
    }

    pub fn from_oracle(oracle: StatusOracle) -> Self {
        let oracle = Arc::new(oracle);
        Self {
            shared: Arc::new(Shared {
                timestamps: Arc::clone(oracle.timestamps()),
                oracle,
                store: Arc::new(Store::new()),
                active: Mutex::new(BTreeMap::new()),
            }),
        }
    }

    /// Opens a database. With a log path, an existing log is recovered
    /// (the store itself is not persistent and starts empty) and a missing
    /// one is created.
    pub fn open(config: DatabaseConfig) -> Result<Self, OpenError> {
        let oracle_config = OracleConfig::new(config.policy).with_capacity(config.capacity);
        let Some(path) = &config.wal else {
            let ts = Arc::new(TimestampOracle::with_block_size(config.timestamp_block));
            return Ok(Self::from_oracle(StatusOracle::with_parts(
                oracle_config,
                ts,
                None,
                None,
            )));
        };
        let (log, table, resume) = if path.exists() {
            let rec = wal::recover(path, config.capacity)?;
            let log = Wal::open_append(path, rec.valid_len, config.batch)?;
            let resume = rec.resume_after();
            (log, Some(rec.table), resume)
        } else {
            (Wal::create(path, config.batch)?, None, Timestamp::ZERO)
        };
        let log = Arc::new(log);
        let ts = Arc::new(TimestampOracle::with_log(
            Arc::clone(&log),
            config.timestamp_block,
            resume,
        ));
        Ok(Self::from_oracle(StatusOracle::with_parts(
            oracle_config,
            ts,
            Some(log),
            table,
        )))
    }

    pub fn policy(&self) -> IsolationPolicy {
        self.shared.oracle.policy()
    }

    pub fn oracle(&self) -> &Arc<StatusOracle> {
        &self.shared.oracle
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.shared.store
    }

    pub fn timestamps(&self) -> &Arc<TimestampOracle> {
        &self.shared.timestamps
    }

    pub fn begin(&self) -> Result<Transaction, TxnError> {
        let start = {
            // Registering under the same lock as the draw keeps the
            // watermark from overtaking a transaction that is just starting.
            let mut active = self.shared.active.lock();
            let start = self.shared.timestamps.next().map_err(TxnError::Begin)?;
            *active.entry(start).or_default() += 1;
            start
        };
        Ok(Transaction {
            shared: Arc::clone(&self.shared),
            start,
            read_set: RowSet::new(),
            write_set: RowSet::new(),
            state: TxnState::Active,
        })
    }

    /// Every active transaction started at or after this timestamp.
    pub fn low_watermark(&self) -> Timestamp {
        let active = self.shared.active.lock();
        match active.keys().next() {
            Some(ts) => *ts,
            None => self.shared.timestamps.peek(),
        }
    }

    pub fn active_transactions(&self) -> usize {
        self.shared.active.lock().values().sum()
    }

    /// Drops versions invisible to every active and future transaction.
    pub fn collect_garbage(&self) -> usize {
        let watermark = self.low_watermark();
        self.shared
            .store
            .collect_garbage(watermark, self.shared.oracle.as_ref())
    }
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database")
            .field("oracle", &self.shared.oracle)
            .field("active", &self.active_transactions())
            .finish()
    }
}

pub struct Transaction {
    shared: Arc<Shared>,
    start: Timestamp,
    read_set: RowSet,
    write_set: RowSet,
    state: TxnState,
}

impl Transaction {
    pub fn start_ts(&self) -> Timestamp {
        self.start
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn read_set(&self) -> &RowSet {
        &self.read_set
    }

    pub fn write_set(&self) -> &RowSet {
        &self.write_set
    }

    pub fn is_read_only(&self) -> bool {
        self.write_set.is_empty()
    }

    fn ensure_active(&self) -> Result<(), TxnError> {
        match self.state {
            TxnState::Active => Ok(()),
            state => Err(TxnError::NotActive {
                start: self.start,
                state,
            }),
        }
    }

    /// Reads `row` from this transaction's snapshot. The row joins the read
    /// set even when nothing is visible.
    pub fn read(&mut self, row: &RowId) -> Result<Option<Bytes>, TxnError> {
        Ok(self.read_version(row)?.map(|v| v.value))
    }

    pub fn read_version(&mut self, row: &RowId) -> Result<Option<VisibleVersion>, TxnError> {
        self.ensure_active()?;
        let found = self
            .shared
            .store
            .read_version(row, self.start, self.shared.oracle.as_ref());
        self.read_set.insert(row.clone());
        Ok(found)
    }

    pub fn write(&mut self, row: RowId, value: impl Into<Bytes>) -> Result<(), TxnError> {
        self.ensure_active()?;
        self.shared
            .store
            .put_tentative(row.clone(), self.start, value);
        self.write_set.insert(row);
        Ok(())
    }

    /// Submits the commit request. An infrastructure failure leaves the
    /// transaction active so the caller can retry or abort.
    pub fn commit(&mut self) -> Result<CommitDecision, TxnError> {
        self.ensure_active()?;
        let oracle = &self.shared.oracle;
        let empty = RowSet::new();
        let reads = match oracle.policy() {
            IsolationPolicy::Wsi if self.write_set.is_empty() => &empty,
            IsolationPolicy::Wsi => &self.read_set,
            IsolationPolicy::Si => &empty,
        };
        let decision = oracle
            .commit(self.start, &self.write_set, reads)
            .map_err(TxnError::Commit)?;
        match decision {
            CommitDecision::Committed(c) => self.state = TxnState::Committed(c),
            CommitDecision::Aborted => {
                self.purge_writes();
                self.state = TxnState::Aborted;
            }
        }
        self.shared.deregister(self.start);
        Ok(decision)
    }

    pub fn abort(&mut self) -> Result<(), TxnError> {
        self.ensure_active()?;
        if !self.write_set.is_empty() {
            self.shared
                .oracle
                .report_abort(self.start)
                .map_err(TxnError::Abort)?;
            self.purge_writes();
        }
        self.state = TxnState::Aborted;
        self.shared.deregister(self.start);
        Ok(())
    }

    fn purge_writes(&self) {
        for row in &self.write_set {
            if let Err(e) =
                self.shared
                    .store
                    .purge_aborted(row, self.start, self.shared.oracle.as_ref())
            {
                log::warn!("purge of {row:?} by {} failed: {e}", self.start);
            }
        }
    }
}

impl Drop for Transaction {
    fn drop(&mut self) {
        if self.state == TxnState::Active {
            if let Err(e) = self.abort() {
                log::warn!("implicit abort of {} failed: {e}", self.start);
                self.shared.deregister(self.start);
            }
        }
    }
}

impl std::fmt::Debug for Transaction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transaction")
            .field("start", &self.start)
            .field("state", &self.state)
            .field("read_set", &self.read_set)
            .field("write_set", &self.write_set)
            .finish()
    }
}
