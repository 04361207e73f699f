//! Lock-free transactional support over a multi-version key-value store.
//!
//! Transactions read from a snapshot fixed by their start timestamp and
//! submit the identifiers of the rows they touched to a centralized status
//! oracle, which decides commit or abort. Two commit policies are provided:
//!
//! * **Snapshot isolation (SI)**: a transaction aborts if a concurrent,
//!   already committed transaction wrote one of the rows it writes
//!   (write-write conflict).
//! * **Write-snapshot isolation (WSI)**: a transaction aborts if a
//!   transaction that committed during its lifetime wrote one of the rows it
//!   read (read-write conflict). Read-only transactions are never checked.
//!   WSI histories are serializable; SI histories are not in general.
//!
//! The crate is organised bottom-up:
//!
//! * [`timestamp`]: the timestamp oracle (start and commit timestamps).
//! * [`wal`]: the oracle's write-ahead log with size/time batching and recovery.
//! * [`oracle`]: the status oracle and its commit table, optionally bounded
//!   with a `T_max` watermark for evicted rows.
//! * [`mvstore`]: the multi-version store and the snapshot-read rule.
//! * [`txn`]: the client transaction API tying everything together.
//! * [`history`]: history notation, policy replay and a brute-force
//!   serializability checker.
//! * [`workload`]: YCSB-style transactional workloads and run metrics.

pub mod history;
pub mod mvstore;
pub mod oracle;
pub mod timestamp;
pub mod txn;
pub mod wal;
pub mod workload;

pub use oracle::{
    AbortCause, Capacity, CommitDecision, CommitTable, IsolationPolicy, OracleConfig, RowId,
    RowSet, StatusOracle, TxnStatus,
};
pub use timestamp::{Timestamp, TimestampOracle};
pub use txn::{Database, DatabaseConfig, Transaction};
