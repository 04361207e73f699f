use std::collections::{BTreeSet, HashMap, HashSet};
use std::num::NonZeroUsize;

use super::{AbortCause, RowId, TxnStatus};
use crate::timestamp::Timestamp;

/// Maximum number of rows whose last commit timestamp is kept in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Capacity {
    Unbounded,
    Bounded(NonZeroUsize),
}

impl Capacity {
    /// Panics if `rows` is zero.
    pub fn bounded(rows: usize) -> Self {
        Capacity::Bounded(NonZeroUsize::new(rows).expect("capacity must be positive"))
    }

    pub fn limit(self) -> Option<usize> {
        match self {
            Capacity::Unbounded => None,
            Capacity::Bounded(n) => Some(n.get()),
        }
    }
}

/// In-memory state of the status oracle.
///
/// `last_commit` maps each tracked row to the commit timestamp of the last
/// transaction that wrote it. With a bounded capacity the entries with the
/// smallest commit timestamps are evicted first and `t_max` records the
/// largest evicted value: any untracked row was last written no later than
/// `t_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitTable {
    capacity: Capacity,
    last_commit: HashMap<RowId, Timestamp>,
    /// Eviction order; maintained only when bounded.
    by_commit: BTreeSet<(Timestamp, RowId)>,
    t_max: Timestamp,
    commits: HashMap<Timestamp, Timestamp>,
    aborted: HashSet<Timestamp>,
    evictions: u64,
}

impl CommitTable {
    pub fn new(capacity: Capacity) -> Self {
        Self {
            capacity,
            last_commit: HashMap::new(),
            by_commit: BTreeSet::new(),
            t_max: Timestamp::ZERO,
            commits: HashMap::new(),
            aborted: HashSet::new(),
            evictions: 0,
        }
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn t_max(&self) -> Timestamp {
        self.t_max
    }

    pub fn last_commit(&self, row: &RowId) -> Option<Timestamp> {
        self.last_commit.get(row).copied()
    }

    pub fn tracked_rows(&self) -> usize {
        self.last_commit.len()
    }

    pub fn last_commits(&self) -> impl Iterator<Item = (&RowId, Timestamp)> {
        self.last_commit.iter().map(|(r, t)| (r, *t))
    }

    pub fn commit_records(&self) -> &HashMap<Timestamp, Timestamp> {
        &self.commits
    }

    pub fn aborted(&self) -> &HashSet<Timestamp> {
        &self.aborted
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn status(&self, start: Timestamp) -> TxnStatus {
        if let Some(commit) = self.commits.get(&start) {
            TxnStatus::Committed(*commit)
        } else if self.aborted.contains(&start) {
            TxnStatus::Aborted
        } else {
            TxnStatus::InFlight
        }
    }

    pub fn is_decided(&self, start: Timestamp) -> bool {
        self.commits.contains_key(&start) || self.aborted.contains(&start)
    }

    /// Full-knowledge check: true if any row was last committed after
    /// `start`. Only looks at the latest writer of each row, which is enough
    /// because commit timestamps are handed out in decision order.
    pub fn conflicts<'a>(
        &self,
        start: Timestamp,
        rows: impl IntoIterator<Item = &'a RowId>,
    ) -> bool {
        rows.into_iter()
            .any(|r| matches!(self.last_commit.get(r), Some(t) if *t > start))
    }

    /// Check against a possibly truncated table. A tracked row aborts on a
    /// later commit; an untracked row aborts whenever `t_max` is later than
    /// `start`, since the evicted entry might have been such a commit.
    ///
    /// All rows are examined for a real conflict before falling back to the
    /// watermark, so `Pessimistic` is reported only when the full table
    /// would have accepted the same request.
    pub fn check_bounded<'a, I>(&self, start: Timestamp, rows: I) -> Option<AbortCause>
    where
        I: IntoIterator<Item = &'a RowId>,
    {
        let mut untracked = false;
        for r in rows {
            match self.last_commit.get(r) {
                Some(t) if *t > start => return Some(AbortCause::Conflict),
                Some(_) => {}
                None => untracked = true,
            }
        }
        (untracked && self.t_max > start).then_some(AbortCause::Pessimistic)
    }

    /// Records a commit and sets `last_commit` for every written row,
    /// evicting the oldest entries if over capacity.
    pub fn record_commit<'a>(
        &mut self,
        start: Timestamp,
        commit: Timestamp,
        writes: impl IntoIterator<Item = &'a RowId>,
    ) {
        self.aborted.remove(&start);
        self.commits.insert(start, commit);
        let bounded = self.capacity.limit().is_some();
        for row in writes {
            let old = self.last_commit.insert(row.clone(), commit);
            if bounded {
                if let Some(old) = old {
                    self.by_commit.remove(&(old, row.clone()));
                }
                self.by_commit.insert((commit, row.clone()));
            }
        }
        if let Some(limit) = self.capacity.limit() {
            while self.last_commit.len() > limit {
                let (ts, row) = self
                    .by_commit
                    .pop_first()
                    .expect("eviction index tracks every entry");
                self.last_commit.remove(&row);
                self.t_max = self.t_max.max(ts);
                self.evictions += 1;
            }
        }
    }

    pub fn record_abort(&mut self, start: Timestamp) {
        if !self.commits.contains_key(&start) {
            self.aborted.insert(start);
        }
    }
}
