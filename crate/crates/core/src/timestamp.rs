//! The timestamp oracle.
//!
//! Start and commit timestamps come from one strictly increasing sequence,
//! which makes them directly comparable. Timestamps are handed out from
//! reserved blocks: reserving a block persists its upper bound to the log
//! once, and every timestamp inside it is then served from memory. After a
//! crash the oracle resumes above the highest persisted reservation, so no
//! timestamp is ever issued twice even if most of a block was never used.

use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::wal::{Wal, WalError, WalRecord};

/// Logical time. Zero means "before all time" and is never issued.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn new(value: u64) -> Self {
        Timestamp(value)
    }

    pub const fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for Timestamp {
    fn from(v: u64) -> Self {
        Timestamp(v)
    }
}

pub const DEFAULT_BLOCK_SIZE: u64 = 1000;

#[derive(Debug, Error)]
pub enum TimestampError {
    #[error("timestamp reservation failed: {0}")]
    Reservation(#[source] WalError),
    #[error("reservation block size must be at least 1")]
    EmptyBlock,
}

#[derive(Debug)]
struct Allocator {
    /// Next value to hand out.
    next: u64,
    /// Last value covered by a persisted reservation.
    reserved_up_to: u64,
}

pub struct TimestampOracle {
    alloc: Mutex<Allocator>,
    block_size: u64,
    log: Option<Arc<Wal>>,
}

impl TimestampOracle {
    /// In-memory oracle starting at 1. Reservations are tracked but not
    /// persisted.
    pub fn new() -> Self {
        Self::build(None, DEFAULT_BLOCK_SIZE, Timestamp::ZERO)
    }

    /// Oracle persisting reservations to `log`, issuing values strictly
    /// above `resume_after` (zero for a fresh log).
    pub fn with_log(log: Arc<Wal>, block_size: u64, resume_after: Timestamp) -> Self {
        Self::build(Some(log), block_size, resume_after)
    }

    pub fn with_block_size(block_size: u64) -> Self {
        Self::build(None, block_size, Timestamp::ZERO)
    }

    fn build(log: Option<Arc<Wal>>, block_size: u64, resume_after: Timestamp) -> Self {
        Self {
            alloc: Mutex::new(Allocator {
                next: resume_after.0 + 1,
                reserved_up_to: resume_after.0,
            }),
            block_size: block_size.max(1),
            log,
        }
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    /// Issues the next timestamp, reserving a new block first if the
    /// current one is used up.
    pub fn next(&self) -> Result<Timestamp, TimestampError> {
        let mut alloc = self.alloc.lock();
        if alloc.next > alloc.reserved_up_to {
            self.reserve_locked(&mut alloc, self.block_size)?;
        }
        let ts = alloc.next;
        alloc.next += 1;
        Ok(Timestamp(ts))
    }

    /// Persists a reservation of `count` timestamps beginning at the next
    /// unissued value and returns the first of them. The remainder of any
    /// previous block is abandoned. Nothing from a failed reservation is
    /// ever issued.
    pub fn reserve_block(&self, count: u64) -> Result<Timestamp, TimestampError> {
        if count == 0 {
            return Err(TimestampError::EmptyBlock);
        }
        let mut alloc = self.alloc.lock();
        self.reserve_locked(&mut alloc, count)?;
        Ok(Timestamp(alloc.next))
    }

    fn reserve_locked(&self, alloc: &mut Allocator, count: u64) -> Result<(), TimestampError> {
        let upto = alloc.next + count - 1;
        if let Some(log) = &self.log {
            log.append(&WalRecord::TsReserve {
                start: Timestamp(alloc.next),
                reserved_up_to: Timestamp(upto),
            })
            .map_err(TimestampError::Reservation)?;
        }
        alloc.reserved_up_to = upto;
        Ok(())
    }

    /// The value the next call to [`next`](Self::next) will return.
    pub fn peek(&self) -> Timestamp {
        Timestamp(self.alloc.lock().next)
    }

    pub fn reserved_up_to(&self) -> Timestamp {
        Timestamp(self.alloc.lock().reserved_up_to)
    }
}

impl Default for TimestampOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for TimestampOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alloc = self.alloc.lock();
        f.debug_struct("TimestampOracle")
            .field("next", &alloc.next)
            .field("reserved_up_to", &alloc.reserved_up_to)
            .field("block_size", &self.block_size)
            .finish()
    }
}
