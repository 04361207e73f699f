//! Transaction histories in `r1[x] w2[y] c1 a2` notation: parsing, replay
//! against the engine under either policy, and a brute-force serializability
//! check.
//!
//! Reads are compared by the identity of the writer they observed (a
//! committed transaction, or the implicit initial version of the item), so
//! histories without data values are still decidable.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use itertools::Itertools;
use rand::Rng;
use thiserror::Error;

use crate::oracle::{CommitDecision, IsolationPolicy, OracleConfig, RowId, StatusOracle};
use crate::timestamp::Timestamp;
use crate::txn::{Database, Transaction, TxnError};

pub type TxnId = u32;

/// Largest number of committed transactions [`is_serializable`] will permute.
pub const MAX_SERIAL_TXNS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HistoryEvent {
    Read {
        txn: TxnId,
        item: String,
    },
    Write {
        txn: TxnId,
        item: String,
        value: Option<String>,
    },
    Commit {
        txn: TxnId,
    },
    Abort {
        txn: TxnId,
    },
}

impl HistoryEvent {
    pub fn txn(&self) -> TxnId {
        match self {
            HistoryEvent::Read { txn, .. }
            | HistoryEvent::Write { txn, .. }
            | HistoryEvent::Commit { txn }
            | HistoryEvent::Abort { txn } => *txn,
        }
    }

    pub fn item(&self) -> Option<&str> {
        match self {
            HistoryEvent::Read { item, .. } | HistoryEvent::Write { item, .. } => Some(item),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            HistoryEvent::Commit { .. } | HistoryEvent::Abort { .. }
        )
    }

    pub fn read(txn: TxnId, item: impl Into<String>) -> Self {
        HistoryEvent::Read {
            txn,
            item: item.into(),
        }
    }

    pub fn write(txn: TxnId, item: impl Into<String>) -> Self {
        HistoryEvent::Write {
            txn,
            item: item.into(),
            value: None,
        }
    }
}

impl fmt::Display for HistoryEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryEvent::Read { txn, item } => write!(f, "r{txn}[{item}]"),
            HistoryEvent::Write {
                txn,
                item,
                value: None,
            } => write!(f, "w{txn}[{item}]"),
            HistoryEvent::Write {
                txn,
                item,
                value: Some(v),
            } => write!(f, "w{txn}[{item}={v}]"),
            HistoryEvent::Commit { txn } => write!(f, "c{txn}"),
            HistoryEvent::Abort { txn } => write!(f, "a{txn}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("token {token} (column {column}): {reason}")]
pub struct ParseError {
    /// 1-based token index.
    pub token: usize,
    /// 1-based character column of the token.
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("event {index}: txn{txn} already {state}")]
    AfterEnd {
        index: usize,
        txn: TxnId,
        state: &'static str,
    },
    #[error("{count} committed transactions exceed the limit of {limit}")]
    TooManyTransactions { count: usize, limit: usize },
    #[error("history is not admissible under WSI; rejected: {rejected:?}")]
    NotAdmissible { rejected: Vec<TxnId> },
    #[error("witness {order:?} is not a permutation of the committed transactions")]
    BadWitness { order: Vec<TxnId> },
    #[error("engine failure during replay: {0}")]
    Engine(#[from] TxnError),
}

/// An interleaving of transaction events in real-time order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct History {
    events: Vec<HistoryEvent>,
}

impl History {
    /// Checks that no transaction has an event after its commit or abort.
    pub fn new(events: Vec<HistoryEvent>) -> Result<Self, HistoryError> {
        let mut ended: HashMap<TxnId, &'static str> = HashMap::new();
        for (index, ev) in events.iter().enumerate() {
            if let Some(state) = ended.get(&ev.txn()) {
                return Err(HistoryError::AfterEnd {
                    index,
                    txn: ev.txn(),
                    state,
                });
            }
            match ev {
                HistoryEvent::Commit { txn } => {
                    ended.insert(*txn, "committed");
                }
                HistoryEvent::Abort { txn } => {
                    ended.insert(*txn, "aborted");
                }
                _ => {}
            }
        }
        Ok(Self { events })
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut events = Vec::new();
        let mut ended: HashMap<TxnId, &'static str> = HashMap::new();
        for (i, (column, token)) in tokens(text).enumerate() {
            let err = |reason: String| ParseError {
                token: i + 1,
                column,
                reason,
            };
            let ev = parse_token(token).map_err(|r| err(format!("{r} in {token:?}")))?;
            if let Some(state) = ended.get(&ev.txn()) {
                return Err(err(format!("txn{} already {state}", ev.txn())));
            }
            match ev {
                HistoryEvent::Commit { txn } => {
                    ended.insert(txn, "committed");
                }
                HistoryEvent::Abort { txn } => {
                    ended.insert(txn, "aborted");
                }
                _ => {}
            }
            events.push(ev);
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Transaction ids in order of first appearance.
    pub fn transactions(&self) -> Vec<TxnId> {
        self.events.iter().map(HistoryEvent::txn).unique().collect()
    }

    /// Transactions with a commit event, sorted by id.
    pub fn committed(&self) -> Vec<TxnId> {
        let mut ids: Vec<TxnId> = self
            .events
            .iter()
            .filter_map(|e| match e {
                HistoryEvent::Commit { txn } => Some(*txn),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Every item named by a read or write.
    pub fn items(&self) -> BTreeSet<String> {
        self.events
            .iter()
            .filter_map(|e| e.item().map(String::from))
            .collect()
    }

    fn ops_of(&self, txn: TxnId) -> impl Iterator<Item = &HistoryEvent> {
        self.events
            .iter()
            .filter(move |e| e.txn() == txn && !e.is_terminal())
    }

    fn writes_anything(&self, txn: TxnId) -> bool {
        self.ops_of(txn)
            .any(|e| matches!(e, HistoryEvent::Write { .. }))
    }
}

fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut column = 0usize;
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (byte, ch) in text.char_indices() {
        column += 1;
        if ch.is_whitespace() {
            if let Some((col, s)) = start.take() {
                out.push((col, &text[s..byte]));
            }
        } else if start.is_none() {
            start = Some((column, byte));
        }
    }
    if let Some((col, s)) = start {
        out.push((col, &text[s..]));
    }
    out.into_iter()
}

fn valid_symbol(s: &str) -> bool {
    !s.is_empty() && !s.contains(['[', ']', '='])
}

fn parse_token(token: &str) -> Result<HistoryEvent, &'static str> {
    let mut chars = token.chars();
    let kind = chars.next().ok_or("empty token")?;
    let rest = chars.as_str();
    let digits = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    if digits == 0 {
        return Err("missing transaction id");
    }
    let txn: TxnId = rest[..digits]
        .parse()
        .map_err(|_| "transaction id out of range")?;
    let tail = &rest[digits..];
    match kind {
        'c' | 'a' => {
            if !tail.is_empty() {
                return Err("unexpected text after transaction id");
            }
            Ok(if kind == 'c' {
                HistoryEvent::Commit { txn }
            } else {
                HistoryEvent::Abort { txn }
            })
        }
        'r' | 'w' => {
            let inner = tail
                .strip_prefix('[')
                .and_then(|t| t.strip_suffix(']'))
                .ok_or("expected [item]")?;
            let (item, value) = match inner.split_once('=') {
                Some(_) if kind == 'r' => return Err("reads cannot carry a value"),
                Some((item, value)) => {
                    if !valid_symbol(value) {
                        return Err("invalid value");
                    }
                    (item, Some(value.to_string()))
                }
                None => (inner, None),
            };
            if !valid_symbol(item) {
                return Err("invalid item name");
            }
            let item = item.to_string();
            Ok(if kind == 'r' {
                HistoryEvent::Read { txn, item }
            } else {
                HistoryEvent::Write { txn, item, value }
            })
        }
        _ => Err("unknown operation"),
    }
}

impl FromStr for History {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        History::parse(s)
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.events.iter().format(" "))
    }
}

/// Who produced the version a read observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Writer {
    Initial,
    Txn(TxnId),
}

/// What a set of committed transactions observed and left behind.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outputs {
    /// Reads of each committed transaction, in operation order.
    pub reads: BTreeMap<TxnId, Vec<(String, Writer)>>,
    /// Last writer of every item the history names.
    pub final_state: BTreeMap<String, Writer>,
}

/// Outputs of `h` read with snapshot semantics: a transaction starts at its
/// first event and sees its own writes plus those of transactions that
/// committed before it started. Among several such writers the one that
/// committed last wins. Transactions without a commit event are excluded.
pub fn observed_outputs(h: &History) -> Outputs {
    let mut start_pos: HashMap<TxnId, usize> = HashMap::new();
    let mut commit_pos: HashMap<TxnId, usize> = HashMap::new();
    let mut writes: HashMap<TxnId, HashSet<&str>> = HashMap::new();
    for (i, ev) in h.events.iter().enumerate() {
        start_pos.entry(ev.txn()).or_insert(i);
        match ev {
            HistoryEvent::Commit { txn } => {
                commit_pos.insert(*txn, i);
            }
            HistoryEvent::Write { txn, item, .. } => {
                writes.entry(*txn).or_default().insert(item);
            }
            _ => {}
        }
    }
    let latest_before = |item: &str, pos: usize| -> Writer {
        commit_pos
            .iter()
            .filter(|(t, c)| **c < pos && writes.get(t).is_some_and(|w| w.contains(item)))
            .max_by_key(|(_, c)| **c)
            .map_or(Writer::Initial, |(t, _)| Writer::Txn(*t))
    };

    let mut out = Outputs::default();
    let mut own: HashSet<(TxnId, &str)> = HashSet::new();
    for ev in &h.events {
        match ev {
            HistoryEvent::Write { txn, item, .. } => {
                own.insert((*txn, item));
            }
            HistoryEvent::Read { txn, item } if commit_pos.contains_key(txn) => {
                let w = if own.contains(&(*txn, item.as_str())) {
                    Writer::Txn(*txn)
                } else {
                    latest_before(item, start_pos[txn])
                };
                out.reads.entry(*txn).or_default().push((item.clone(), w));
            }
            _ => {}
        }
    }
    for txn in commit_pos.keys() {
        out.reads.entry(*txn).or_default();
    }
    for item in h.items() {
        let w = latest_before(&item, usize::MAX);
        out.final_state.insert(item, w);
    }
    out
}

/// Outputs of running the given transactions of `h` one after another,
/// each operation in its original order.
pub fn serial_outputs(h: &History, order: &[TxnId]) -> Outputs {
    let mut state: BTreeMap<String, Writer> = h
        .items()
        .into_iter()
        .map(|i| (i, Writer::Initial))
        .collect();
    let mut out = Outputs::default();
    for &txn in order {
        let reads = out.reads.entry(txn).or_default();
        for ev in h.ops_of(txn) {
            match ev {
                HistoryEvent::Read { item, .. } => reads.push((item.clone(), state[item])),
                HistoryEvent::Write { item, .. } => {
                    state.insert(item.clone(), Writer::Txn(txn));
                }
                _ => {}
            }
        }
    }
    out.final_state = state;
    out
}

/// True if running the committed transactions of `h` serially in `order`
/// yields the same reads and final state as `h` itself.
pub fn check_witness(h: &History, order: &[TxnId]) -> Result<bool, HistoryError> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != h.committed() {
        return Err(HistoryError::BadWitness {
            order: order.to_vec(),
        });
    }
    Ok(serial_outputs(h, order) == observed_outputs(h))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializabilityVerdict {
    pub serializable: bool,
    pub witness: Option<Vec<TxnId>>,
}

impl fmt::Display for SerializabilityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.witness {
            Some(order) => write!(f, "SERIALIZABLE witness=({})", order.iter().format(",")),
            None => f.write_str("NOT-SERIALIZABLE"),
        }
    }
}

/// Tries every order of the committed transactions, lexicographically by
/// id, and returns the first one equivalent to `h`.
pub fn is_serializable(h: &History) -> Result<SerializabilityVerdict, HistoryError> {
    let committed = h.committed();
    if committed.len() > MAX_SERIAL_TXNS {
        return Err(HistoryError::TooManyTransactions {
            count: committed.len(),
            limit: MAX_SERIAL_TXNS,
        });
    }
    let target = observed_outputs(h);
    let witness = committed
        .iter()
        .copied()
        .permutations(committed.len())
        .find(|order| serial_outputs(h, order) == target);
    Ok(SerializabilityVerdict {
        serializable: witness.is_some(),
        witness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Committed(Timestamp),
    /// The commit request was refused by the oracle.
    Rejected,
    /// The history itself aborts the transaction.
    ClientAborted,
    /// No commit or abort event.
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedRead {
    pub txn: TxnId,
    pub item: String,
    pub writer: Writer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub policy: IsolationPolicy,
    pub outcomes: BTreeMap<TxnId, Outcome>,
    /// Every read the engine served, including reads of transactions that
    /// later aborted.
    pub reads: Vec<ObservedRead>,
}

impl Replay {
    /// Every commit event was accepted.
    pub fn admissible(&self) -> bool {
        self.rejected().is_empty()
    }

    pub fn rejected(&self) -> Vec<TxnId> {
        self.outcomes
            .iter()
            .filter(|(_, o)| **o == Outcome::Rejected)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Decisions for transactions that ended with a commit or abort event.
    pub fn decisions(&self) -> BTreeMap<TxnId, CommitDecision> {
        self.outcomes
            .iter()
            .filter_map(|(t, o)| match o {
                Outcome::Committed(c) => Some((*t, CommitDecision::Committed(*c))),
                Outcome::Rejected | Outcome::ClientAborted => Some((*t, CommitDecision::Aborted)),
                Outcome::Unfinished => None,
            })
            .collect()
    }
}

fn auto_value(txn: TxnId, seq: usize) -> Bytes {
    Bytes::from(format!("v{txn}.{seq}"))
}

/// Runs `h` against a fresh in-memory engine. Each transaction begins at its
/// first event and every operation executes in history order.
pub fn replay_policy(h: &History, policy: IsolationPolicy) -> Result<Replay, HistoryError> {
    replay_with(h, OracleConfig::new(policy))
}

/// [`replay_policy`] with an explicit oracle configuration, e.g. a bounded
/// commit table.
pub fn replay_with(h: &History, config: OracleConfig) -> Result<Replay, HistoryError> {
    let policy = config.policy;
    let db = Database::from_oracle(StatusOracle::new(config));
    let mut open: HashMap<TxnId, Transaction> = HashMap::new();
    let mut owner: HashMap<Timestamp, TxnId> = HashMap::new();
    let mut outcomes = BTreeMap::new();
    let mut reads = Vec::new();
    for (seq, ev) in h.events.iter().enumerate() {
        let txn = ev.txn();
        let t = match open.entry(txn) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let t = db.begin()?;
                owner.insert(t.start_ts(), txn);
                e.insert(t)
            }
        };
        match ev {
            HistoryEvent::Read { item, .. } => {
                let writer = t
                    .read_version(&RowId::from(item.as_str()))?
                    .map_or(Writer::Initial, |v| Writer::Txn(owner[&v.writer]));
                reads.push(ObservedRead {
                    txn,
                    item: item.clone(),
                    writer,
                });
            }
            HistoryEvent::Write { item, value, .. } => {
                let value = match value {
                    Some(v) => Bytes::from(v.clone()),
                    None => auto_value(txn, seq),
                };
                t.write(RowId::from(item.as_str()), value)?;
            }
            HistoryEvent::Commit { .. } => {
                let mut t = open.remove(&txn).expect("open");
                let outcome = match t.commit()? {
                    CommitDecision::Committed(c) => Outcome::Committed(c),
                    CommitDecision::Aborted => Outcome::Rejected,
                };
                outcomes.insert(txn, outcome);
            }
            HistoryEvent::Abort { .. } => {
                open.remove(&txn).expect("open").abort()?;
                outcomes.insert(txn, Outcome::ClientAborted);
            }
        }
    }
    for (txn, mut t) in open {
        t.abort()?;
        outcomes.insert(txn, Outcome::Unfinished);
    }
    Ok(Replay {
        policy,
        outcomes,
        reads,
    })
}

pub fn is_admissible(h: &History, policy: IsolationPolicy) -> Result<bool, HistoryError> {
    Ok(replay_policy(h, policy)?.admissible())
}

/// Builds the serial history equivalent to a WSI-admissible `h`: aborted and
/// unfinished transactions are dropped, a read-only transaction runs at its
/// first event and a writing transaction runs at its commit.
pub fn construct_serial(h: &History) -> Result<History, HistoryError> {
    let replay = replay_policy(h, IsolationPolicy::Wsi)?;
    if !replay.admissible() {
        return Err(HistoryError::NotAdmissible {
            rejected: replay.rejected(),
        });
    }
    let mut anchors: Vec<(usize, TxnId)> = Vec::new();
    let mut first: HashMap<TxnId, usize> = HashMap::new();
    for (i, ev) in h.events.iter().enumerate() {
        first.entry(ev.txn()).or_insert(i);
        if let HistoryEvent::Commit { txn } = ev {
            let at = if h.writes_anything(*txn) {
                i
            } else {
                first[txn]
            };
            anchors.push((at, *txn));
        }
    }
    anchors.sort_unstable();
    let mut events = Vec::with_capacity(h.len());
    for (_, txn) in anchors {
        events.extend(h.ops_of(txn).cloned());
        events.push(HistoryEvent::Commit { txn });
    }
    Ok(History { events })
}

/// Transaction order of a serial history.
pub fn serial_order(h: &History) -> Vec<TxnId> {
    h.events
        .iter()
        .filter_map(|e| match e {
            HistoryEvent::Commit { txn } => Some(*txn),
            _ => None,
        })
        .collect()
}

/// Verdict line for one history: admissibility under each policy plus
/// serializability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub si_rejected: Vec<TxnId>,
    pub wsi_rejected: Vec<TxnId>,
    pub verdict: Option<SerializabilityVerdict>,
}

pub fn report(h: &History) -> Result<Report, HistoryError> {
    let verdict = match is_serializable(h) {
        Ok(v) => Some(v),
        Err(HistoryError::TooManyTransactions { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Report {
        si_rejected: replay_policy(h, IsolationPolicy::Si)?.rejected(),
        wsi_rejected: replay_policy(h, IsolationPolicy::Wsi)?.rejected(),
        verdict,
    })
}

fn fmt_admission(f: &mut fmt::Formatter<'_>, rejected: &[TxnId]) -> fmt::Result {
    if rejected.is_empty() {
        f.write_str("admissible")
    } else {
        write!(
            f,
            "{}-aborted",
            rejected.iter().map(|t| format!("txn{t}")).format(",")
        )
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SI:")?;
        fmt_admission(f, &self.si_rejected)?;
        f.write_str(" WSI:")?;
        fmt_admission(f, &self.wsi_rejected)?;
        match &self.verdict {
            Some(SerializabilityVerdict {
                witness: Some(w), ..
            }) => {
                write!(f, " SER:yes witness=({})", w.iter().format(","))
            }
            Some(_) => f.write_str(" SER:no"),
            None => write!(f, " SER:too-many-txns"),
        }
    }
}

/// Shape of randomly generated histories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub max_txns: usize,
    pub items: usize,
    pub max_ops: usize,
    /// Chance that a transaction ends with an abort instead of a commit.
    pub abort_probability: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_txns: 6,
            items: 4,
            max_ops: 3,
            abort_probability: 0.1,
        }
    }
}

const ITEM_NAMES: [&str; 8] = ["x", "y", "z", "u", "v", "p", "q", "s"];

/// A random interleaving of 1..=max_txns transactions, each with
/// 1..=max_ops reads or writes followed by a commit or abort.
pub fn random_history(rng: &mut impl Rng, cfg: &GeneratorConfig) -> History {
    let txns = rng.gen_range(1..=cfg.max_txns.max(1));
    let items = cfg.items.clamp(1, ITEM_NAMES.len());
    let mut scripts: Vec<Vec<HistoryEvent>> = (1..=txns as TxnId)
        .map(|txn| {
            let ops = rng.gen_range(1..=cfg.max_ops.max(1));
            let mut s: Vec<HistoryEvent> = (0..ops)
                .map(|_| {
                    let item = ITEM_NAMES[rng.gen_range(0..items)];
                    if rng.gen_bool(0.5) {
                        HistoryEvent::read(txn, item)
                    } else {
                        HistoryEvent::write(txn, item)
                    }
                })
                .collect();
            s.push(if rng.gen_bool(cfg.abort_probability) {
                HistoryEvent::Abort { txn }
            } else {
                HistoryEvent::Commit { txn }
            });
            s.reverse();
            s
        })
        .collect();
    let mut events = Vec::new();
    loop {
        let live: Vec<usize> = (0..scripts.len())
            .filter(|i| !scripts[*i].is_empty())
            .collect();
        if live.is_empty() {
            break;
        }
        let pick = live[rng.gen_range(0..live.len())];
        events.push(scripts[pick].pop().expect("live"));
    }
    History { events }
}
