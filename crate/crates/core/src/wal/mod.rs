//! Durable write-ahead log for status-oracle state.
//!
//! Records are buffered and flushed in batches by a background thread. A
//! batch is written (and synced) once it reaches [`BatchPolicy::max_bytes`]
//! or once its oldest record has waited [`BatchPolicy::max_delay`],
//! whichever comes first. [`Wal::append`] returns only after the record's
//! batch is durable; [`Wal::append_async`] hands back a log sequence number
//! that can be waited on later with [`Wal::wait_durable`], which lets
//! several decisions share one flush.

mod record;
mod recovery;

use std::fs::{File, OpenOptions};
use std::io::{self, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, MutexGuard};
use thiserror::Error;

pub use record::{WalRecord, FRAME_HEADER, MAGIC};
pub use recovery::{read_log, recover, rewrite, LogContents, Recovered};

/// Log sequence number of an appended record, starting at 1.
pub type Lsn = u64;

#[derive(Debug, Error)]
pub enum WalError {
    #[error("log I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("log is closed")]
    Closed,
    #[error("log failed earlier and refuses further appends: {0}")]
    Failed(String),
    #[error("row identifier of {0} bytes exceeds the u16 length prefix")]
    RowTooLong(usize),
    #[error("record exceeds the u32 length prefix")]
    RecordTooLarge,
    #[error("bad log header: expected magic {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("corrupt record at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

/// Batching triggers for group commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPolicy {
    pub max_bytes: usize,
    pub max_delay: Duration,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            max_bytes: 1024,
            max_delay: Duration::from_millis(5),
        }
    }
}

/// Destination of flushed batches. `write_batch` must not return until the
/// bytes are durable.
pub trait LogSink: Send + 'static {
    fn write_batch(&mut self, bytes: &[u8]) -> io::Result<()>;
}

impl LogSink for File {
    fn write_batch(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.write_all(bytes)?;
        self.sync_data()
    }
}

/// In-memory sink, mostly for tests. Clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    bytes: Arc<Mutex<Vec<u8>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.bytes.lock().clone()
    }
}

impl LogSink for MemorySink {
    fn write_batch(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.bytes.lock().extend_from_slice(bytes);
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct WalStats {
    pub records: u64,
    pub flushes: u64,
    pub bytes_flushed: u64,
}

struct State {
    buf: Vec<u8>,
    batch_started: Option<Instant>,
    next_lsn: Lsn,
    durable_lsn: Lsn,
    closed: bool,
    failed: Option<String>,
}

struct Shared {
    state: Mutex<State>,
    /// Wakes the flusher.
    appended: Condvar,
    /// Wakes threads waiting for durability.
    flushed: Condvar,
    policy: BatchPolicy,
    records: AtomicU64,
    flushes: AtomicU64,
    bytes_flushed: AtomicU64,
}

pub struct Wal {
    shared: Arc<Shared>,
    flusher: Mutex<Option<JoinHandle<()>>>,
}

impl Wal {
    /// Creates (or truncates) a log file and writes the header.
    pub fn create(path: impl AsRef<Path>, policy: BatchPolicy) -> Result<Self, WalError> {
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        file.write_all(MAGIC)?;
        file.sync_all()?;
        Ok(Self::with_sink(file, policy))
    }

    /// Opens an existing log for appending after recovery. Bytes past
    /// `valid_len` (a torn tail) are cut off first.
    pub fn open_append(
        path: impl AsRef<Path>,
        valid_len: u64,
        policy: BatchPolicy,
    ) -> Result<Self, WalError> {
        let mut file = OpenOptions::new().write(true).open(path)?;
        if valid_len < MAGIC.len() as u64 {
            file.set_len(0)?;
            file.write_all(MAGIC)?;
        } else {
            file.set_len(valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        file.sync_all()?;
        Ok(Self::with_sink(file, policy))
    }

    /// Starts a log over an arbitrary sink. The caller is responsible for
    /// any header the sink needs.
    pub fn with_sink(sink: impl LogSink, policy: BatchPolicy) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                buf: Vec::with_capacity(policy.max_bytes * 2),
                batch_started: None,
                next_lsn: 1,
                durable_lsn: 0,
                closed: false,
                failed: None,
            }),
            appended: Condvar::new(),
            flushed: Condvar::new(),
            policy,
            records: AtomicU64::new(0),
            flushes: AtomicU64::new(0),
            bytes_flushed: AtomicU64::new(0),
        });
        let worker = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("wal-flusher".into())
            .spawn(move || flush_loop(worker, Box::new(sink)))
            .expect("spawn wal flusher");
        Self {
            shared,
            flusher: Mutex::new(Some(handle)),
        }
    }

    pub fn policy(&self) -> BatchPolicy {
        self.shared.policy
    }

    /// Buffers a record and returns its sequence number without waiting for
    /// durability. Fails immediately if the log is closed or has failed, in
    /// which case nothing was buffered.
    pub fn append_async(&self, rec: &WalRecord) -> Result<Lsn, WalError> {
        let bytes = rec.encode()?;
        let mut st = self.shared.state.lock();
        if st.closed {
            return Err(WalError::Closed);
        }
        if let Some(msg) = &st.failed {
            return Err(WalError::Failed(msg.clone()));
        }
        if st.buf.is_empty() {
            st.batch_started = Some(Instant::now());
        }
        st.buf.extend_from_slice(&bytes);
        let lsn = st.next_lsn;
        st.next_lsn += 1;
        self.shared.records.fetch_add(1, Ordering::Relaxed);
        self.shared.appended.notify_one();
        Ok(lsn)
    }

    /// Blocks until every record up to and including `lsn` is durable.
    pub fn wait_durable(&self, lsn: Lsn) -> Result<(), WalError> {
        let mut st = self.shared.state.lock();
        loop {
            if st.durable_lsn >= lsn {
                return Ok(());
            }
            if let Some(msg) = &st.failed {
                return Err(WalError::Failed(msg.clone()));
            }
            if lsn >= st.next_lsn {
                // Never appended; with the log closed it never will be.
                if st.closed {
                    return Err(WalError::Closed);
                }
            }
            self.shared.flushed.wait(&mut st);
        }
    }

    /// Appends a record and waits until it is durable.
    pub fn append(&self, rec: &WalRecord) -> Result<Lsn, WalError> {
        let lsn = self.append_async(rec)?;
        self.wait_durable(lsn)?;
        Ok(lsn)
    }

    pub fn durable_lsn(&self) -> Lsn {
        self.shared.state.lock().durable_lsn
    }

    pub fn stats(&self) -> WalStats {
        WalStats {
            records: self.shared.records.load(Ordering::Relaxed),
            flushes: self.shared.flushes.load(Ordering::Relaxed),
            bytes_flushed: self.shared.bytes_flushed.load(Ordering::Relaxed),
        }
    }

    /// Flushes whatever is buffered and stops the flusher. Later appends fail.
    pub fn close(&self) {
        {
            let mut st = self.shared.state.lock();
            st.closed = true;
            self.shared.appended.notify_all();
        }
        if let Some(handle) = self.flusher.lock().take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Wal {
    fn drop(&mut self) {
        self.close();
    }
}

impl std::fmt::Debug for Wal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Wal")
            .field("policy", &self.shared.policy)
            .field("stats", &self.stats())
            .finish()
    }
}

fn flush_loop(shared: Arc<Shared>, mut sink: Box<dyn LogSink>) {
    let policy = shared.policy;
    let mut st = shared.state.lock();
    loop {
        if st.failed.is_some() {
            // Nothing buffered after a failure can ever become durable.
            st.buf.clear();
            if st.closed {
                break;
            }
            shared.appended.wait(&mut st);
            continue;
        }
        if st.buf.is_empty() {
            if st.closed {
                break;
            }
            shared.appended.wait(&mut st);
            continue;
        }
        let started = st.batch_started.unwrap_or_else(Instant::now);
        let due =
            st.closed || st.buf.len() >= policy.max_bytes || started.elapsed() >= policy.max_delay;
        if !due {
            shared
                .appended
                .wait_until(&mut st, started + policy.max_delay);
            continue;
        }
        let batch = std::mem::take(&mut st.buf);
        let upto = st.next_lsn - 1;
        st.batch_started = None;
        let result = MutexGuard::unlocked(&mut st, || sink.write_batch(&batch));
        match result {
            Ok(()) => {
                st.durable_lsn = upto;
                shared.flushes.fetch_add(1, Ordering::Relaxed);
                shared
                    .bytes_flushed
                    .fetch_add(batch.len() as u64, Ordering::Relaxed);
            }
            Err(e) => {
                log::error!("wal flush failed: {e}");
                st.failed = Some(e.to_string());
            }
        }
        // Hand the allocation back if nothing new arrived meanwhile.
        if st.buf.is_empty() {
            let mut batch = batch;
            batch.clear();
            st.buf = batch;
        }
        shared.flushed.notify_all();
    }
    shared.flushed.notify_all();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::RowId;
    use crate::timestamp::Timestamp;

    /// A commit record with one single-byte row frames to exactly 32 bytes.
    fn rec32(i: u64) -> WalRecord {
        WalRecord::Commit {
            start: Timestamp::new(i),
            commit: Timestamp::new(i + 1),
            rows: vec![RowId::from(vec![b'r'])],
        }
    }

    struct FailingSink;

    impl LogSink for FailingSink {
        fn write_batch(&mut self, _: &[u8]) -> io::Result<()> {
            Err(io::Error::other("disk on fire"))
        }
    }

    #[test]
    fn rec32_is_32_bytes() {
        assert_eq!(rec32(1).encode().unwrap().len(), 32);
    }

    #[test]
    fn size_trigger_flushes_once_at_one_kilobyte() {
        let sink = MemorySink::new();
        let policy = BatchPolicy {
            max_bytes: 1024,
            max_delay: Duration::from_secs(3600),
        };
        let wal = Wal::with_sink(sink.clone(), policy);
        let mut last = 0;
        for i in 0..31 {
            last = wal.append_async(&rec32(i)).unwrap();
        }
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(wal.stats().flushes, 0);
        assert_eq!(wal.durable_lsn(), 0);
        let lsn = wal.append_async(&rec32(31)).unwrap();
        assert_eq!(lsn, last + 1);
        wal.wait_durable(lsn).unwrap();
        assert_eq!(wal.stats().flushes, 1);
        assert_eq!(wal.stats().bytes_flushed, 1024);
        assert_eq!(sink.contents().len(), 1024);
    }

    #[test]
    fn time_trigger_makes_a_lone_record_durable() {
        let wal = Wal::with_sink(MemorySink::new(), BatchPolicy::default());
        let begin = Instant::now();
        wal.append(&WalRecord::Abort {
            start: Timestamp::new(1),
        })
        .unwrap();
        let waited = begin.elapsed();
        assert!(
            waited >= Duration::from_millis(5),
            "flushed early: {waited:?}"
        );
        // Scheduling slack on a loaded machine; the trigger itself is 5 ms.
        assert!(
            waited < Duration::from_millis(250),
            "flushed late: {waited:?}"
        );
        assert_eq!(wal.stats().flushes, 1);
    }

    #[test]
    fn append_after_close_fails() {
        let wal = Wal::with_sink(MemorySink::new(), BatchPolicy::default());
        wal.close();
        assert!(matches!(
            wal.append(&WalRecord::Abort {
                start: Timestamp::new(1)
            }),
            Err(WalError::Closed)
        ));
    }

    #[test]
    fn close_drains_buffer() {
        let sink = MemorySink::new();
        let policy = BatchPolicy {
            max_bytes: 1 << 20,
            max_delay: Duration::from_secs(3600),
        };
        let wal = Wal::with_sink(sink.clone(), policy);
        wal.append_async(&rec32(1)).unwrap();
        wal.close();
        assert_eq!(sink.contents().len(), 32);
    }

    #[test]
    fn flush_failure_surfaces_and_poisons() {
        let wal = Wal::with_sink(FailingSink, BatchPolicy::default());
        let err = wal
            .append(&WalRecord::Abort {
                start: Timestamp::new(1),
            })
            .unwrap_err();
        assert!(matches!(err, WalError::Failed(_)));
        assert!(matches!(
            wal.append_async(&rec32(2)),
            Err(WalError::Failed(_))
        ));
    }

    #[test]
    fn acknowledgements_follow_append_order() {
        let sink = MemorySink::new();
        let wal = Arc::new(Wal::with_sink(sink.clone(), BatchPolicy::default()));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let wal = Arc::clone(&wal);
                std::thread::spawn(move || {
                    for i in 0..50 {
                        let lsn = wal.append(&rec32(t * 1000 + i)).unwrap();
                        assert!(wal.durable_lsn() >= lsn);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(wal.stats().records, 200);
        assert_eq!(sink.contents().len(), 200 * 32);
    }
}
