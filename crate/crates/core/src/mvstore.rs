//! Multi-version row store.
//!
//! Every write is stored as a version keyed by the writer's start
//! timestamp. Commit timestamps are not written back; a reader resolves
//! visibility by asking a [`StatusSource`] (normally the status oracle) for
//! the status of each candidate writer. The reader skips versions whose
//! writer is in flight, aborted, or committed at or after the reader's start,
//! and returns the surviving version with the highest commit timestamp. The
//! reader's own tentative write always wins.

use std::io::{self, BufRead, Write};

use bytes::Bytes;
use dashmap::DashMap;
use thiserror::Error;

use crate::oracle::{RowId, StatusOracle, TxnStatus};
use crate::timestamp::Timestamp;

/// Answers "what happened to the transaction that started at `start`?".
pub trait StatusSource {
    fn status(&self, start: Timestamp) -> TxnStatus;
}

impl StatusSource for StatusOracle {
    fn status(&self, start: Timestamp) -> TxnStatus {
        self.query_status(start)
    }
}

impl<S: StatusSource + ?Sized> StatusSource for &S {
    fn status(&self, start: Timestamp) -> TxnStatus {
        (**self).status(start)
    }
}

impl StatusSource for std::collections::HashMap<Timestamp, TxnStatus> {
    fn status(&self, start: Timestamp) -> TxnStatus {
        self.get(&start).copied().unwrap_or(TxnStatus::InFlight)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellVersion {
    pub writer: Timestamp,
    pub value: Bytes,
}

/// A version chosen by a snapshot read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibleVersion {
    pub writer: Timestamp,
    /// `None` when the reader saw its own tentative write.
    pub commit: Option<Timestamp>,
    pub value: Bytes,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("writer {writer} of row {row} is {status:?}, not aborted")]
    NotAborted {
        row: RowId,
        writer: Timestamp,
        status: TxnStatus,
    },
    #[error("row {0:?} cannot be dumped: rows must be UTF-8 without tabs or newlines")]
    UndumpableRow(RowId),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Versions per row, sorted by descending writer start timestamp.
#[derive(Debug, Default)]
pub struct Store {
    cells: DashMap<RowId, Vec<CellVersion>>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites the version `(row, writer)`.
    pub fn put_tentative(&self, row: RowId, writer: Timestamp, value: impl Into<Bytes>) {
        let value = value.into();
        let mut versions = self.cells.entry(row).or_default();
        match versions.binary_search_by(|v| writer.cmp(&v.writer)) {
            Ok(i) => versions[i].value = value,
            Err(i) => versions.insert(i, CellVersion { writer, value }),
        }
    }

    pub fn snapshot_read(
        &self,
        row: &RowId,
        reader: Timestamp,
        status: &(impl StatusSource + ?Sized),
    ) -> Option<Bytes> {
        self.read_version(row, reader, status).map(|v| v.value)
    }

    /// Like [`snapshot_read`](Self::snapshot_read) but also reports which
    /// writer produced the value.
    pub fn read_version(
        &self,
        row: &RowId,
        reader: Timestamp,
        status: &(impl StatusSource + ?Sized),
    ) -> Option<VisibleVersion> {
        let versions = self.cells.get(row)?;
        let mut best: Option<(Timestamp, &CellVersion)> = None;
        for v in versions.iter() {
            if v.writer == reader {
                return Some(VisibleVersion {
                    writer: reader,
                    commit: None,
                    value: v.value.clone(),
                });
            }
            // A writer that started after the reader commits after it too.
            if v.writer > reader {
                continue;
            }
            if let TxnStatus::Committed(c) = status.status(v.writer) {
                if c < reader && best.is_none_or(|(b, _)| c > b) {
                    best = Some((c, v));
                }
            }
        }
        best.map(|(c, v)| VisibleVersion {
            writer: v.writer,
            commit: Some(c),
            value: v.value.clone(),
        })
    }

    /// Removes the version written by an aborted transaction. A missing
    /// version is not an error.
    pub fn purge_aborted(
        &self,
        row: &RowId,
        writer: Timestamp,
        status: &(impl StatusSource + ?Sized),
    ) -> Result<(), StoreError> {
        let st = status.status(writer);
        if st != TxnStatus::Aborted {
            return Err(StoreError::NotAborted {
                row: row.clone(),
                writer,
                status: st,
            });
        }
        self.remove_version(row, writer);
        Ok(())
    }

    fn remove_version(&self, row: &RowId, writer: Timestamp) {
        if let Some(mut versions) = self.cells.get_mut(row) {
            if let Ok(i) = versions.binary_search_by(|v| writer.cmp(&v.writer)) {
                versions.remove(i);
            }
        }
    }

    /// Drops versions no current or future reader can see, given that every
    /// active transaction started at or after `low_watermark`: aborted
    /// versions, and committed versions shadowed by a later commit that is
    /// itself below the watermark. Returns the number of versions removed.
    pub fn collect_garbage(
        &self,
        low_watermark: Timestamp,
        status: &(impl StatusSource + ?Sized),
    ) -> usize {
        let mut removed = 0;
        for mut entry in self.cells.iter_mut() {
            let versions = entry.value_mut();
            if versions.len() < 2 && versions.iter().all(|v| v.writer >= low_watermark) {
                continue;
            }
            let statuses: Vec<TxnStatus> =
                versions.iter().map(|v| status.status(v.writer)).collect();
            let newest_below = statuses
                .iter()
                .filter_map(|s| match s {
                    TxnStatus::Committed(c) if *c < low_watermark => Some(*c),
                    _ => None,
                })
                .max();
            let before = versions.len();
            let mut idx = 0;
            versions.retain(|_| {
                let keep = match statuses[idx] {
                    TxnStatus::Aborted => false,
                    TxnStatus::InFlight => true,
                    TxnStatus::Committed(c) => c >= low_watermark || Some(c) == newest_below,
                };
                idx += 1;
                keep
            });
            removed += before - versions.len();
        }
        self.cells.retain(|_, v| !v.is_empty());
        removed
    }

    pub fn versions(&self, row: &RowId) -> Vec<CellVersion> {
        self.cells.get(row).map(|v| v.clone()).unwrap_or_default()
    }

    pub fn row_count(&self) -> usize {
        self.cells.len()
    }

    pub fn version_count(&self) -> usize {
        self.cells.iter().map(|e| e.value().len()).sum()
    }

    /// Writes `row<TAB>writer<TAB>hexvalue` lines, rows in byte order.
    pub fn dump(&self, mut out: impl Write) -> Result<(), StoreError> {
        let mut rows: Vec<RowId> = self.cells.iter().map(|e| e.key().clone()).collect();
        rows.sort();
        for row in rows {
            let name = std::str::from_utf8(row.as_bytes())
                .ok()
                .filter(|s| !s.contains(['\t', '\n', '\r']))
                .ok_or_else(|| StoreError::UndumpableRow(row.clone()))?;
            for v in self.versions(&row) {
                writeln!(out, "{name}\t{}\t{}", v.writer, hex::encode(&v.value))?;
            }
        }
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<Self, StoreError> {
        let store = Store::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: &str| StoreError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(row), Some(writer), Some(value), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err("expected three tab-separated fields"));
            };
            let writer: u64 = writer
                .parse()
                .map_err(|_| parse_err("bad writer timestamp"))?;
            let value = hex::decode(value).map_err(|_| parse_err("bad hex value"))?;
            store.put_tentative(RowId::from(row), Timestamp::new(writer), value);
        }
        Ok(store)
    }
}
