//! Session event logs, the indexed corpus and session-parallel mini-batches.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Column names and delimiter of a session log.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Schema {
    pub session_col: String,
    pub item_col: String,
    pub time_col: String,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            session_col: "SessionId".into(),
            item_col: "ItemId".into(),
            time_col: "Time".into(),
            delimiter: '\t',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub min_session_len: usize,
    pub min_item_support: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_session_len: 2,
            min_item_support: 1,
        }
    }
}

/// One session of the raw log, events keyed by external item id.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub key: String,
    pub items: Vec<String>,
    pub times: Vec<f64>,
}

/// Parsed but unindexed event log. Sessions appear in order of their first
/// event time; events inside a session are time-sorted, ties in input order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub sessions: Vec<RawSession>,
}

impl EventLog {
    /// Groups `(session, item, time)` triples into sessions.
    pub fn from_events<I, S, T>(events: I) -> Self
    where
        I: IntoIterator<Item = (S, T, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut by_key: HashMap<String, usize> = HashMap::new();
        let mut sessions: Vec<RawSession> = Vec::new();
        for (session, item, time) in events {
            let session = session.into();
            let slot = match by_key.get(&session) {
                Some(&slot) => slot,
                None => {
                    by_key.insert(session.clone(), sessions.len());
                    sessions.push(RawSession {
                        key: session,
                        items: Vec::new(),
                        times: Vec::new(),
                    });
                    sessions.len() - 1
                }
            };
            sessions[slot].items.push(item.into());
            sessions[slot].times.push(time);
        }
        for s in &mut sessions {
            let mut order: Vec<usize> = (0..s.items.len()).collect();
            order.sort_by(|&a, &b| s.times[a].total_cmp(&s.times[b]));
            s.items = order.iter().map(|&i| s.items[i].clone()).collect();
            s.times = order.iter().map(|&i| s.times[i]).collect();
        }
        // stable: equal start times keep first-appearance order
        sessions.sort_by(|a, b| a.times[0].total_cmp(&b.times[0]));
        EventLog { sessions }
    }

    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((_, l)) => break l,
                None => return Err(Error::EmptyCorpus),
            }
        };
        let cols: Vec<&str> = header.split(schema.delimiter).map(str::trim).collect();
        let find = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (si, ii, ti) = (
            find(&schema.session_col)?,
            find(&schema.item_col)?,
            find(&schema.time_col)?,
        );
        let width = cols.len();
        let mut events = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(schema.delimiter).collect();
            if fields.len() < width {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {width} fields, found {}", fields.len()),
                });
            }
            let time: f64 = fields[ti].trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("invalid time `{}`", fields[ti].trim()),
            })?;
            if !time.is_finite() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("non-finite time `{}`", fields[ti].trim()),
                });
            }
            events.push((fields[si].trim(), fields[ii].trim(), time));
        }
        Ok(EventLog::from_events(events))
    }

    pub fn read(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EventLog::parse(&text, schema)
    }
}

/// Bijection between external item keys and dense indices `0..N`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemIndex {
    keys: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl ItemIndex {
    pub fn from_keys(keys: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if lookup.insert(k.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate item key `{k}`")));
            }
        }
        Ok(ItemIndex { keys, lookup })
    }

    /// Keys `"0".."n-1"`, for synthetic corpora.
    pub fn numeric(n: usize) -> Self {
        let keys: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        ItemIndex::from_keys(keys).expect("numeric keys are unique")
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// SHA-256 over the ordered keys, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for k in &self.keys {
            h.update(k.as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub key: String,
    pub items: Vec<usize>,
    pub times: Vec<f64>,
}

impl Session {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }
}

/// Indexed event log: dense item ids, time-ordered sessions, per-item support.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionCorpus {
    items: ItemIndex,
    sessions: Vec<Session>,
    supports: Vec<u64>,
    n_events: usize,
    options: LoadOptions,
}

impl SessionCorpus {
    /// Reads and indexes a delimited session log.
    pub fn load(path: impl AsRef<Path>, schema: &Schema, options: LoadOptions) -> Result<Self> {
        SessionCorpus::build(&EventLog::read(path, schema)?, options)
    }

    /// Drops items below the minimum support and sessions below the minimum
    /// length, repeated until neither removes anything, then indexes items in
    /// order of first appearance.
    pub fn build(log: &EventLog, options: LoadOptions) -> Result<Self> {
        let mut sessions: Vec<RawSession> = log.sessions.clone();
        loop {
            let mut support: HashMap<&str, u64> = HashMap::new();
            for s in &sessions {
                for it in &s.items {
                    *support.entry(it.as_str()).or_default() += 1;
                }
            }
            let mut changed = false;
            let mut kept = Vec::with_capacity(sessions.len());
            for s in &sessions {
                let keep: Vec<usize> = (0..s.items.len())
                    .filter(|&i| support[s.items[i].as_str()] >= options.min_item_support)
                    .collect();
                changed |= keep.len() != s.items.len();
                if keep.len() < options.min_session_len.max(1) {
                    changed = true;
                    continue;
                }
                kept.push(RawSession {
                    key: s.key.clone(),
                    items: keep.iter().map(|&i| s.items[i].clone()).collect(),
                    times: keep.iter().map(|&i| s.times[i]).collect(),
                });
            }
            sessions = kept;
            if !changed {
                break;
            }
        }
        if sessions.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        // re-sort: dropping leading events can move a session's start time
        sessions.sort_by(|a, b| a.times[0].total_cmp(&b.times[0]));
        let mut keys = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        for s in &sessions {
            for it in &s.items {
                if !lookup.contains_key(it) {
                    lookup.insert(it.clone(), keys.len());
                    keys.push(it.clone());
                }
            }
        }
        let index = ItemIndex { keys, lookup };
        Ok(SessionCorpus::assemble(index, &sessions, options))
    }

    /// Indexes a log against an existing item index. Events with unknown items
    /// are dropped, then sessions shorter than `min_session_len` are dropped.
    pub fn build_with_index(log: &EventLog, index: &ItemIndex, options: LoadOptions) -> Result<Self> {
        let mut sessions = Vec::new();
        for s in &log.sessions {
            let keep: Vec<usize> = (0..s.items.len())
                .filter(|&i| index.get(&s.items[i]).is_some())
                .collect();
            if keep.len() < options.min_session_len.max(1) {
                continue;
            }
            sessions.push(RawSession {
                key: s.key.clone(),
                items: keep.iter().map(|&i| s.items[i].clone()).collect(),
                times: keep.iter().map(|&i| s.times[i]).collect(),
            });
        }
        if sessions.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        sessions.sort_by(|a, b| a.times[0].total_cmp(&b.times[0]));
        Ok(SessionCorpus::assemble(index.clone(), &sessions, options))
    }

    fn assemble(items: ItemIndex, raw: &[RawSession], options: LoadOptions) -> Self {
        let mut supports = vec![0u64; items.len()];
        let mut n_events = 0;
        let sessions = raw
            .iter()
            .map(|s| {
                let idx: Vec<usize> = s.items.iter().map(|k| items.lookup[k]).collect();
                for &i in &idx {
                    supports[i] += 1;
                }
                n_events += idx.len();
                Session {
                    key: s.key.clone(),
                    items: idx,
                    times: s.times.clone(),
                }
            })
            .collect();
        SessionCorpus {
            items,
            sessions,
            supports,
            n_events,
            options,
        }
    }

    /// Corpus over items `0..n_items` from already indexed sessions; session
    /// `k` gets key `k` and unit-spaced times starting at `k`.
    pub fn from_sessions(n_items: usize, sessions: Vec<Vec<usize>>) -> Result<Self> {
        let index = ItemIndex::numeric(n_items);
        let mut supports = vec![0u64; n_items];
        let mut n_events = 0;
        let mut out = Vec::with_capacity(sessions.len());
        for (k, items) in sessions.into_iter().enumerate() {
            if items.len() < 2 {
                continue;
            }
            for &i in &items {
                if i >= n_items {
                    return Err(Error::IndexOutOfRange { index: i, n_items });
                }
                supports[i] += 1;
            }
            n_events += items.len();
            out.push(Session {
                key: k.to_string(),
                times: (0..items.len()).map(|t| (k + t) as f64).collect(),
                items,
            });
        }
        if out.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(SessionCorpus {
            items: index,
            sessions: out,
            supports,
            n_events,
            options: LoadOptions::default(),
        })
    }

    /// Splits by the time of each session's first event: earlier than
    /// `boundary` goes to train. Train is re-indexed over its own items; test
    /// uses the train index, loses events of unseen items and is re-filtered
    /// by length.
    pub fn time_split(&self, boundary: f64) -> Result<(SessionCorpus, SessionCorpus)> {
        let (train, test): (Vec<&Session>, Vec<&Session>) =
            self.sessions.iter().partition(|s| s.start_time() < boundary);
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let to_raw = |s: &&Session| RawSession {
            key: s.key.clone(),
            items: s.items.iter().map(|&i| self.items.key(i).to_string()).collect(),
            times: s.times.clone(),
        };
        let train_log = EventLog {
            sessions: train.iter().map(to_raw).collect(),
        };
        let test_log = EventLog {
            sessions: test.iter().map(to_raw).collect(),
        };
        let no_filter = LoadOptions {
            min_item_support: 1,
            ..self.options
        };
        let train = SessionCorpus::build(&train_log, no_filter)?;
        let test = SessionCorpus::build_with_index(&test_log, &train.items, no_filter)
            .map_err(|_| Error::EmptySplit("test"))?;
        Ok((
            SessionCorpus {
                options: self.options,
                ..train
            },
            SessionCorpus {
                options: self.options,
                ..test
            },
        ))
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Number of (event, next event) pairs.
    pub fn n_pairs(&self) -> usize {
        self.sessions.iter().map(|s| s.items.len() - 1).sum()
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn supports(&self) -> &[u64] {
        &self.supports
    }

    pub fn item_index(&self) -> &ItemIndex {
        &self.items
    }

    pub fn options(&self) -> LoadOptions {
        self.options
    }

    /// One line per item: dense index, external key, support.
    pub fn stats_dump(&self) -> String {
        let mut out = String::new();
        for (i, k) in self.items.keys().iter().enumerate() {
            let _ = writeln!(out, "{i}\t{k}\t{}", self.supports[i]);
        }
        out
    }

    /// Parses [`SessionCorpus::stats_dump`] output back into an index and supports.
    pub fn parse_stats(text: &str) -> Result<(ItemIndex, Vec<u64>)> {
        let mut keys = Vec::new();
        let mut supports = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            if f.len() != 3 {
                return Err(bad("expected `index<TAB>key<TAB>support`"));
            }
            let idx: usize = f[0].parse().map_err(|_| bad("invalid index"))?;
            if idx != keys.len() {
                return Err(bad("indices must be dense and ascending"));
            }
            keys.push(f[1].to_string());
            supports.push(f[2].parse().map_err(|_| bad("invalid support"))?);
        }
        Ok((ItemIndex::from_keys(keys)?, supports))
    }

    /// Fingerprint of the indexed content (item keys, sessions, supports).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.items.fingerprint().as_bytes());
        for s in &self.sessions {
            for &i in &s.items {
                h.update((i as u64).to_le_bytes());
            }
            h.update([0xff]);
        }
        hex(&h.finalize())
    }

    pub fn batches(&self, batch_size: usize) -> BatchIter<'_> {
        BatchIter {
            corpus: self,
            state: MiniBatchState::new(batch_size),
        }
    }
}

/// One session-parallel step. Row `k` belongs to slot `slots[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub slots: Vec<usize>,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub reset: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cursor {
    session: usize,
    position: usize,
}

/// Cursor state for session-parallel iteration. Sessions are handed to slots
/// in corpus order; once fewer unfinished sessions than slots remain, batches
/// shrink instead of being padded.
#[derive(Clone, Debug)]
pub struct MiniBatchState {
    slots: Vec<Option<Cursor>>,
    reset_mask: Vec<bool>,
    next_session: usize,
    started: bool,
    exhausted: bool,
}

impl MiniBatchState {
    pub fn new(batch_size: usize) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        MiniBatchState {
            slots: vec![None; batch_size],
            reset_mask: vec![true; batch_size],
            next_session: 0,
            started: false,
            exhausted: false,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.slots.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    fn assign(&mut self, slot: usize, corpus: &SessionCorpus) {
        if self.next_session < corpus.sessions.len() {
            self.slots[slot] = Some(Cursor {
                session: self.next_session,
                position: 0,
            });
            self.reset_mask[slot] = true;
            self.next_session += 1;
        } else {
            self.slots[slot] = None;
        }
    }

    /// Emits the next (input, target) pair of every active slot, or `None`
    /// once every session is consumed.
    pub fn next_batch(&mut self, corpus: &SessionCorpus) -> Option<Batch> {
        if self.exhausted {
            return None;
        }
        if !self.started {
            self.started = true;
            for slot in 0..self.slots.len() {
                self.assign(slot, corpus);
            }
        }
        let mut batch = Batch {
            slots: Vec::new(),
            inputs: Vec::new(),
            targets: Vec::new(),
            reset: Vec::new(),
        };
        for slot in 0..self.slots.len() {
            let Some(cur) = self.slots[slot] else { continue };
            let items = &corpus.sessions[cur.session].items;
            batch.slots.push(slot);
            batch.inputs.push(items[cur.position]);
            batch.targets.push(items[cur.position + 1]);
            batch.reset.push(self.reset_mask[slot]);
            self.reset_mask[slot] = false;
            if cur.position + 2 < items.len() {
                self.slots[slot] = Some(Cursor {
                    position: cur.position + 1,
                    ..cur
                });
            } else {
                self.assign(slot, corpus);
            }
        }
        if batch.is_empty() {
            self.exhausted = true;
            return None;
        }
        Some(batch)
    }
}

pub struct BatchIter<'a> {
    corpus: &'a SessionCorpus,
    state: MiniBatchState,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.state.next_batch(self.corpus)
    }
}
