use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use super::record::{WalRecord, FRAME_HEADER, MAGIC};
use super::WalError;
use crate::oracle::{Capacity, CommitTable};
use crate::timestamp::Timestamp;

/// Decoded contents of a log file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogContents {
    pub records: Vec<WalRecord>,
    /// Length of the valid prefix (header plus intact records).
    pub valid_len: u64,
    /// True if a torn final record was discarded.
    pub torn_tail: bool,
}

/// Oracle state rebuilt from the log.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub table: CommitTable,
    /// Highest persisted timestamp reservation, or zero.
    pub reserved_up_to: Timestamp,
    /// Highest timestamp mentioned by any record; never above
    /// `reserved_up_to` for logs written by the timestamp oracle.
    pub highest_seen: Timestamp,
    pub valid_len: u64,
    pub torn_tail: bool,
    pub records: usize,
}

impl Recovered {
    /// First timestamp that may be issued after recovery.
    pub fn resume_after(&self) -> Timestamp {
        self.reserved_up_to.max(self.highest_seen)
    }
}

/// Parses a log. A final record that is incomplete or fails its checksum is
/// treated as a torn write and dropped; any earlier damage is corruption.
pub fn read_log(path: impl AsRef<Path>) -> Result<LogContents, WalError> {
    let data = fs::read(path)?;
    parse_log(&data)
}

pub(crate) fn parse_log(data: &[u8]) -> Result<LogContents, WalError> {
    if data.len() < MAGIC.len() {
        // A crash while writing the header leaves a prefix of it.
        if MAGIC.starts_with(data) {
            return Ok(LogContents {
                records: Vec::new(),
                valid_len: 0,
                torn_tail: !data.is_empty(),
            });
        }
        return Err(WalError::BadMagic {
            expected: "WSIWAL01",
        });
    }
    if &data[..MAGIC.len()] != MAGIC {
        return Err(WalError::BadMagic {
            expected: "WSIWAL01",
        });
    }
    let mut records = Vec::new();
    let mut pos = MAGIC.len();
    let mut torn_tail = false;
    while pos < data.len() {
        let rest = &data[pos..];
        if rest.len() < FRAME_HEADER {
            torn_tail = true;
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if rest.len() - FRAME_HEADER < len {
            torn_tail = true;
            break;
        }
        let payload = &rest[FRAME_HEADER..FRAME_HEADER + len];
        let end = pos + FRAME_HEADER + len;
        if crc32fast::hash(payload) != crc {
            if end == data.len() {
                torn_tail = true;
                break;
            }
            return Err(WalError::Corrupt {
                offset: pos as u64,
                reason: "checksum mismatch".into(),
            });
        }
        let rec = WalRecord::decode_payload(payload).map_err(|reason| WalError::Corrupt {
            offset: pos as u64,
            reason,
        })?;
        records.push(rec);
        pos = end;
    }
    Ok(LogContents {
        records,
        valid_len: pos as u64,
        torn_tail,
    })
}

/// Rebuilds the commit table by replaying the log through a fresh table
/// with the given capacity.
pub fn recover(path: impl AsRef<Path>, capacity: Capacity) -> Result<Recovered, WalError> {
    let contents = read_log(path)?;
    Ok(replay(contents, capacity))
}

pub(crate) fn replay(contents: LogContents, capacity: Capacity) -> Recovered {
    let mut table = CommitTable::new(capacity);
    let mut reserved_up_to = Timestamp::ZERO;
    let mut highest_seen = Timestamp::ZERO;
    for rec in &contents.records {
        match rec {
            WalRecord::Commit {
                start,
                commit,
                rows,
            } => {
                table.record_commit(*start, *commit, rows.iter());
                highest_seen = highest_seen.max(*commit).max(*start);
            }
            WalRecord::Abort { start } => {
                table.record_abort(*start);
                highest_seen = highest_seen.max(*start);
            }
            WalRecord::TsReserve {
                reserved_up_to: upto,
                ..
            } => reserved_up_to = reserved_up_to.max(*upto),
        }
    }
    Recovered {
        table,
        reserved_up_to,
        highest_seen,
        valid_len: contents.valid_len,
        torn_tail: contents.torn_tail,
        records: contents.records.len(),
    }
}

/// Writes `records` to a fresh log at `path`.
pub fn rewrite(path: impl AsRef<Path>, records: &[WalRecord]) -> Result<(), WalError> {
    let mut buf = MAGIC.to_vec();
    for rec in records {
        rec.encode_into(&mut buf)?;
    }
    let mut file = File::create(path)?;
    file.write_all(&buf)?;
    file.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::RowId;

    fn ts(v: u64) -> Timestamp {
        Timestamp::new(v)
    }

    fn sample() -> Vec<WalRecord> {
        vec![
            WalRecord::TsReserve {
                start: ts(1),
                reserved_up_to: ts(1000),
            },
            WalRecord::Commit {
                start: ts(1),
                commit: ts(3),
                rows: vec![RowId::from("x")],
            },
            WalRecord::Abort { start: ts(2) },
            WalRecord::Commit {
                start: ts(4),
                commit: ts(5),
                rows: vec![RowId::from("y"), RowId::from("x")],
            },
        ]
    }

    fn encoded(records: &[WalRecord]) -> Vec<u8> {
        let mut buf = MAGIC.to_vec();
        for r in records {
            r.encode_into(&mut buf).unwrap();
        }
        buf
    }

    #[test]
    fn empty_log_recovers_to_empty_table() {
        let contents = parse_log(MAGIC).unwrap();
        let rec = replay(contents, Capacity::Unbounded);
        assert_eq!(rec.table, CommitTable::new(Capacity::Unbounded));
        assert_eq!(rec.table.t_max(), Timestamp::ZERO);
        assert_eq!(rec.reserved_up_to, Timestamp::ZERO);
    }

    #[test]
    fn replay_rebuilds_state() {
        let rec = replay(parse_log(&encoded(&sample())).unwrap(), Capacity::Unbounded);
        assert_eq!(rec.reserved_up_to, ts(1000));
        assert_eq!(rec.table.last_commit(&RowId::from("x")), Some(ts(5)));
        assert_eq!(rec.table.last_commit(&RowId::from("y")), Some(ts(5)));
        assert_eq!(
            rec.table.status(ts(1)),
            crate::oracle::TxnStatus::Committed(ts(3))
        );
        assert_eq!(rec.table.status(ts(2)), crate::oracle::TxnStatus::Aborted);
    }

    #[test]
    fn every_truncation_point_is_a_torn_tail() {
        let full = encoded(&sample());
        let mut boundaries = vec![MAGIC.len()];
        for r in sample() {
            boundaries.push(boundaries.last().unwrap() + r.encode().unwrap().len());
        }
        for cut in MAGIC.len()..full.len() {
            let contents = parse_log(&full[..cut]).unwrap();
            let whole = boundaries.iter().filter(|b| **b <= cut).count() - 1;
            assert_eq!(contents.records.len(), whole, "cut at {cut}");
            assert_eq!(contents.records[..], sample()[..whole]);
            assert_eq!(contents.torn_tail, !boundaries.contains(&cut));
        }
    }

    #[test]
    fn corrupt_final_record_is_torn() {
        let mut data = encoded(&sample());
        let last = data.len() - 1;
        data[last] ^= 0xff;
        let contents = parse_log(&data).unwrap();
        assert!(contents.torn_tail);
        assert_eq!(contents.records.len(), 3);
    }

    #[test]
    fn corrupt_middle_record_fails_loudly() {
        let mut data = encoded(&sample());
        // Flip a byte inside the second record's payload.
        let offset = MAGIC.len() + sample()[0].encode().unwrap().len() + FRAME_HEADER + 2;
        data[offset] ^= 0xff;
        assert!(matches!(parse_log(&data), Err(WalError::Corrupt { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(
            parse_log(b"NOTAWAL0"),
            Err(WalError::BadMagic { .. })
        ));
    }

    #[test]
    fn recovery_is_idempotent_through_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wal");
        let b = dir.path().join("b.wal");
        let mut data = encoded(&sample());
        data.extend_from_slice(&[7, 0, 0]); // torn tail
        fs::write(&a, &data).unwrap();
        let first = read_log(&a).unwrap();
        rewrite(&b, &first.records).unwrap();
        let second = read_log(&b).unwrap();
        assert_eq!(first.records, second.records);
        assert!(!second.torn_tail);
        let cap = Capacity::bounded(1);
        assert_eq!(
            recover(&a, cap).unwrap().table,
            recover(&b, cap).unwrap().table
        );
    }
}
