//! Binary framing of log records.
//!
//! ```text
//! file    := MAGIC record*
//! record  := len:u32 crc:u32 payload[len]
//! payload := kind:u8 start:u64 body
//! body    := commit:u64 count:u32 (rowlen:u16 row[rowlen])*   (Commit)
//!          | <empty>                                        (Abort)
//!          | reserved_up_to:u64                             (TsReserve)
//! ```
//!
//! All integers are little-endian; `crc` is the CRC-32 of `payload`.

use bytes::Bytes;

use super::WalError;
use crate::oracle::RowId;
use crate::timestamp::Timestamp;

pub const MAGIC: &[u8; 8] = b"WSIWAL01";

/// Size of the `len` + `crc` header in front of every payload.
pub const FRAME_HEADER: usize = 8;

const KIND_COMMIT: u8 = 1;
const KIND_ABORT: u8 = 2;
const KIND_TS_RESERVE: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalRecord {
    /// A committed transaction and the rows it wrote.
    Commit {
        start: Timestamp,
        commit: Timestamp,
        rows: Vec<RowId>,
    },
    /// An aborted transaction (conflict or client-initiated).
    Abort { start: Timestamp },
    /// Timestamps `start..=reserved_up_to` may be handed out without
    /// further persistence.
    TsReserve {
        start: Timestamp,
        reserved_up_to: Timestamp,
    },
}

impl WalRecord {
    pub fn start(&self) -> Timestamp {
        match self {
            WalRecord::Commit { start, .. }
            | WalRecord::Abort { start }
            | WalRecord::TsReserve { start, .. } => *start,
        }
    }

    /// Appends the framed record (header and payload) to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WalError> {
        let frame_at = out.len();
        out.extend_from_slice(&[0u8; FRAME_HEADER]);
        let payload_at = out.len();
        match self {
            WalRecord::Commit {
                start,
                commit,
                rows,
            } => {
                out.push(KIND_COMMIT);
                out.extend_from_slice(&start.get().to_le_bytes());
                out.extend_from_slice(&commit.get().to_le_bytes());
                let count = u32::try_from(rows.len()).map_err(|_| WalError::RecordTooLarge)?;
                out.extend_from_slice(&count.to_le_bytes());
                for row in rows {
                    let len =
                        u16::try_from(row.len()).map_err(|_| WalError::RowTooLong(row.len()))?;
                    out.extend_from_slice(&len.to_le_bytes());
                    out.extend_from_slice(row.as_bytes());
                }
            }
            WalRecord::Abort { start } => {
                out.push(KIND_ABORT);
                out.extend_from_slice(&start.get().to_le_bytes());
            }
            WalRecord::TsReserve {
                start,
                reserved_up_to,
            } => {
                out.push(KIND_TS_RESERVE);
                out.extend_from_slice(&start.get().to_le_bytes());
                out.extend_from_slice(&reserved_up_to.get().to_le_bytes());
            }
        }
        let payload_len =
            u32::try_from(out.len() - payload_at).map_err(|_| WalError::RecordTooLarge)?;
        let crc = crc32fast::hash(&out[payload_at..]);
        out[frame_at..frame_at + 4].copy_from_slice(&payload_len.to_le_bytes());
        out[frame_at + 4..frame_at + 8].copy_from_slice(&crc.to_le_bytes());
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WalError> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Decodes a payload whose checksum has already been verified.
    pub fn decode_payload(payload: &[u8]) -> Result<Self, String> {
        let mut cur = Cursor { buf: payload };
        let kind = cur.u8()?;
        let start = Timestamp::new(cur.u64()?);
        let rec = match kind {
            KIND_COMMIT => {
                let commit = Timestamp::new(cur.u64()?);
                let count = cur.u32()? as usize;
                let mut rows = Vec::with_capacity(count.min(4096));
                for _ in 0..count {
                    let len = cur.u16()? as usize;
                    rows.push(RowId::from(Bytes::copy_from_slice(cur.take(len)?)));
                }
                WalRecord::Commit {
                    start,
                    commit,
                    rows,
                }
            }
            KIND_ABORT => WalRecord::Abort { start },
            KIND_TS_RESERVE => WalRecord::TsReserve {
                start,
                reserved_up_to: Timestamp::new(cur.u64()?),
            },
            other => return Err(format!("unknown record kind {other}")),
        };
        if !cur.buf.is_empty() {
            return Err(format!("{} trailing payload bytes", cur.buf.len()));
        }
        Ok(rec)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err(format!(
                "payload truncated: wanted {n} bytes, have {}",
                self.buf.len()
            ));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
