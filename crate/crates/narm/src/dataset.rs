//! Click-log ingestion and the preprocessing pipeline: load raw click rows,
//! group them into time-ordered sessions, filter rare items and short
//! sessions, split train/test by session start time, and expand sessions
//! into (prefix, label) training examples over a dense item index.
//!
//! Index 0 is reserved for padding everywhere; real items are 1..=m in
//! first-appearance order over the training corpus.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

/// One row of a click log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickEvent {
    pub session_id: String,
    pub timestamp: i64,
    pub item_id: String,
}

/// A session: clicks by one visitor, ordered by time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub start_time: i64,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<Session>,
}

impl SessionCorpus {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn total_clicks(&self) -> usize {
        self.sessions.iter().map(|s| s.items.len()).sum()
    }
}

/// How to read a click log: column positions, delimiter, and how tolerant to
/// be of rows that do not parse.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub delimiter: u8,
    pub has_header: bool,
    pub session_col: usize,
    pub time_col: usize,
    pub item_col: usize,
    /// Abort when more than this fraction of rows is malformed. The default
    /// of 1.0 never aborts; set 0.0 to reject any malformed row.
    pub max_malformed_fraction: f64,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            delimiter: b',',
            has_header: false,
            session_col: 0,
            time_col: 1,
            item_col: 2,
            max_malformed_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub total_rows: usize,
    pub events: usize,
    pub malformed: usize,
}

/// Accepts unix seconds, RFC 3339, `YYYY-MM-DD[T ]HH:MM:SS[.frac]`, or a
/// fractional epoch. Sub-second precision is truncated; ties keep file order.
fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Some(v.floor() as i64);
        }
    }
    None
}

/// Read a click log. Malformed rows (missing columns, empty fields,
/// unparseable timestamps) are counted and skipped; the load fails only if
/// their fraction exceeds `schema.max_malformed_fraction`.
pub fn load_clicks(path: &Path, schema: &ColumnSchema) -> Result<(Vec<ClickEvent>, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .from_path(path)?;

    let needed = schema.session_col.max(schema.time_col).max(schema.item_col) + 1;
    let mut events = Vec::new();
    let mut report = LoadReport::default();

    for record in reader.records() {
        report.total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                report.malformed += 1;
                continue;
            }
        };
        if record.len() < needed {
            report.malformed += 1;
            continue;
        }
        let session = record[schema.session_col].trim();
        let item = record[schema.item_col].trim();
        let ts = parse_timestamp(&record[schema.time_col]);
        match (session.is_empty(), item.is_empty(), ts) {
            (false, false, Some(timestamp)) => {
                events.push(ClickEvent {
                    session_id: session.to_string(),
                    timestamp,
                    item_id: item.to_string(),
                });
                report.events += 1;
            }
            _ => report.malformed += 1,
        }
    }

    if report.total_rows > 0 {
        let frac = report.malformed as f64 / report.total_rows as f64;
        if frac > schema.max_malformed_fraction {
            return Err(Error::Format(format!(
                "{} of {} rows malformed (fraction {:.4} exceeds limit {})",
                report.malformed, report.total_rows, frac, schema.max_malformed_fraction
            )));
        }
    }
    Ok((events, report))
}

/// Group events by session id and order each session's clicks by timestamp
/// (stable, so equal timestamps keep file order). Sessions are ordered by
/// (start time, id) so the corpus is reproducible regardless of input order.
pub fn build_sessions(events: &[ClickEvent]) -> SessionCorpus {
    let mut groups: HashMap<&str, Vec<(i64, &str)>> = HashMap::new();
    for ev in events {
        groups.entry(&ev.session_id).or_default().push((ev.timestamp, &ev.item_id));
    }
    let mut sessions: Vec<Session> = groups
        .into_iter()
        .map(|(id, mut clicks)| {
            clicks.sort_by_key(|&(ts, _)| ts);
            Session {
                id: id.to_string(),
                start_time: clicks[0].0,
                items: clicks.into_iter().map(|(_, item)| item.to_string()).collect(),
            }
        })
        .collect();
    sessions.sort_by(|a, b| (a.start_time, &a.id).cmp(&(b.start_time, &b.id)));
    SessionCorpus { sessions }
}

/// Drop items clicked fewer than `min_item_support` times across the corpus,
/// then drop sessions shorter than `min_session_len`. One pass by default;
/// with `fixpoint` the two steps repeat until nothing changes (dropping a
/// short session can push an item below the support threshold again).
pub fn filter_corpus(
    corpus: &SessionCorpus,
    min_item_support: usize,
    min_session_len: usize,
    fixpoint: bool,
) -> Result<SessionCorpus> {
    let mut current = corpus.clone();
    loop {
        let mut support: HashMap<&str, usize> = HashMap::new();
        for s in &current.sessions {
            for item in &s.items {
                *support.entry(item).or_insert(0) += 1;
            }
        }
        let next: Vec<Session> = current
            .sessions
            .iter()
            .filter_map(|s| {
                let items: Vec<String> = s
                    .items
                    .iter()
                    .filter(|it| support[it.as_str()] >= min_item_support)
                    .cloned()
                    .collect();
                (items.len() >= min_session_len).then(|| Session {
                    id: s.id.clone(),
                    start_time: s.start_time,
                    items,
                })
            })
            .collect();
        let changed = next.len() != current.sessions.len()
            || next
                .iter()
                .zip(&current.sessions)
                .any(|(a, b)| a.items.len() != b.items.len());
        current = SessionCorpus { sessions: next };
        if !fixpoint || !changed {
            break;
        }
    }
    if current.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(current)
}

/// Split by session start time: sessions starting within the final
/// `holdout_seconds` of the corpus time span go to test, the rest to train.
/// A session starting exactly at the threshold lands in train.
pub fn temporal_split(
    corpus: &SessionCorpus,
    holdout_seconds: i64,
) -> Result<(SessionCorpus, SessionCorpus)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let t_max = corpus.sessions.iter().map(|s| s.start_time).max().unwrap();
    let threshold = t_max - holdout_seconds;
    let (test, train): (Vec<Session>, Vec<Session>) = corpus
        .sessions
        .iter()
        .cloned()
        .partition(|s| s.start_time > threshold);
    if train.is_empty() {
        return Err(Error::DegenerateSplit("no sessions before the holdout window".into()));
    }
    if test.is_empty() {
        return Err(Error::DegenerateSplit("no sessions inside the holdout window".into()));
    }
    Ok((SessionCorpus { sessions: train }, SessionCorpus { sessions: test }))
}

/// Remove from `test` any item that never occurs in `train`, then drop test
/// sessions left with fewer than two clicks.
pub fn filter_test_items(test: &SessionCorpus, train: &SessionCorpus) -> Result<SessionCorpus> {
    let known: HashSet<&str> =
        train.sessions.iter().flat_map(|s| s.items.iter().map(String::as_str)).collect();
    let sessions: Vec<Session> = test
        .sessions
        .iter()
        .filter_map(|s| {
            let items: Vec<String> =
                s.items.iter().filter(|it| known.contains(it.as_str())).cloned().collect();
            (items.len() >= 2).then(|| Session {
                id: s.id.clone(),
                start_time: s.start_time,
                items,
            })
        })
        .collect();
    if sessions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(SessionCorpus { sessions })
}

/// Keep the `ceil(fraction * n)` most recent sessions by start time (ties
/// broken by id, later id wins). `fraction` must lie in (0, 1].
pub fn take_recent_fraction(corpus: &SessionCorpus, fraction: f64) -> Result<SessionCorpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = corpus.sessions.clone();
    sorted.sort_by(|a, b| (a.start_time, &a.id).cmp(&(b.start_time, &b.id)));
    let kept = sorted.split_off(n - keep);
    Ok(SessionCorpus { sessions: kept })
}

/// Dense item index. 0 is the padding index and never maps to an item; real
/// items get 1..=m in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemVocab {
    forward: HashMap<String, u32>,
    reverse: Vec<String>, // reverse[0] unused
}

impl ItemVocab {
    pub fn build(corpus: &SessionCorpus) -> Self {
        let mut vocab = ItemVocab { forward: HashMap::new(), reverse: vec![String::new()] };
        for s in &corpus.sessions {
            for item in &s.items {
                if !vocab.forward.contains_key(item) {
                    let idx = vocab.reverse.len() as u32;
                    vocab.forward.insert(item.clone(), idx);
                    vocab.reverse.push(item.clone());
                }
            }
        }
        vocab
    }

    /// Number of real items (padding excluded).
    pub fn len(&self) -> usize {
        self.reverse.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, item: &str) -> Option<u32> {
        self.forward.get(item).copied()
    }

    /// Item string for an index; `None` for 0 and out-of-range.
    pub fn item(&self, index: u32) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.reverse.get(index as usize).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (idx, item) in self.reverse.iter().enumerate().skip(1) {
            let _ = writeln!(out, "{item}\t{idx}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (item, idx) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("vocab line {}: expected item<TAB>index", lineno + 1))
            })?;
            let idx: u32 = idx
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad index", lineno + 1)))?;
            entries.push((idx, item.to_string()));
        }
        entries.sort_by_key(|&(idx, _)| idx);
        let mut vocab = ItemVocab { forward: HashMap::new(), reverse: vec![String::new()] };
        for (pos, (idx, item)) in entries.into_iter().enumerate() {
            if idx as usize != pos + 1 {
                return Err(Error::Format(format!(
                    "vocab indices must be contiguous from 1, found {idx} at position {}",
                    pos + 1
                )));
            }
            vocab.forward.insert(item.clone(), idx);
            vocab.reverse.push(item);
        }
        Ok(vocab)
    }
}

/// A session with items mapped through the vocab.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSession {
    pub id: String,
    pub start_time: i64,
    pub items: Vec<u32>,
}

/// Map every item of every session through the vocab. Fails on unknown
/// items; run `filter_test_items` first for held-out data.
pub fn index_corpus(corpus: &SessionCorpus, vocab: &ItemVocab) -> Result<Vec<IndexedSession>> {
    corpus
        .sessions
        .iter()
        .map(|s| {
            let items = s
                .items
                .iter()
                .map(|it| vocab.index_of(it).ok_or_else(|| Error::UnknownItem(it.clone())))
                .collect::<Result<Vec<u32>>>()?;
            Ok(IndexedSession { id: s.id.clone(), start_time: s.start_time, items })
        })
        .collect()
}

/// One supervised case: a click prefix and the next click.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub prefix: Vec<u32>,
    pub label: u32,
}

pub type ExampleSet = Vec<Example>;

/// Expand each session `[x1..xn]` into the n−1 examples
/// `([x1..xk], x_{k+1})` for k = 1..n−1, keeping only the last `truncation`
/// prefix items.
pub fn split_sequences(sessions: &[IndexedSession], truncation: usize) -> Result<ExampleSet> {
    if truncation == 0 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    let mut examples = Vec::new();
    for s in sessions {
        for k in 1..s.items.len() {
            let lo = k.saturating_sub(truncation);
            examples.push(Example { prefix: s.items[lo..k].to_vec(), label: s.items[k] });
        }
    }
    Ok(examples)
}

pub fn examples_to_text(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let prefix: Vec<String> = ex.prefix.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}\t{}", prefix.join(" "), ex.label);
    }
    out
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    fs::write(path, examples_to_text(examples))?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<ExampleSet> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (prefix_part, label_part) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("examples line {}: expected prefix<TAB>label", lineno + 1))
        })?;
        let prefix = prefix_part
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<u32>, _>>()
            .map_err(|_| Error::Format(format!("examples line {}: bad prefix", lineno + 1)))?;
        if prefix.is_empty() {
            return Err(Error::Format(format!("examples line {}: empty prefix", lineno + 1)));
        }
        let label = label_part
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::Format(format!("examples line {}: bad label", lineno + 1)))?;
        examples.push(Example { prefix, label });
    }
    Ok(examples)
}

pub fn sessions_to_text(corpus: &SessionCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.sessions {
        let _ = writeln!(out, "{}\t{}\t{}", s.id, s.start_time, s.items.join(" "));
    }
    out
}

pub fn write_sessions(path: &Path, corpus: &SessionCorpus) -> Result<()> {
    fs::write(path, sessions_to_text(corpus))?;
    Ok(())
}

pub fn read_sessions(path: &Path) -> Result<SessionCorpus> {
    let text = fs::read_to_string(path)?;
    let mut sessions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (id, ts, items) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Format(format!(
                    "sessions line {}: expected id<TAB>start<TAB>items",
                    lineno + 1
                )))
            }
        };
        let start_time = ts.trim().parse::<i64>().map_err(|_| {
            Error::Format(format!("sessions line {}: bad start time", lineno + 1))
        })?;
        let items: Vec<String> = items.split_whitespace().map(str::to_string).collect();
        if items.is_empty() {
            return Err(Error::Format(format!("sessions line {}: empty session", lineno + 1)));
        }
        sessions.push(Session { id: id.to_string(), start_time, items });
    }
    Ok(SessionCorpus { sessions })
}

/// Corpus summary in the shape usually reported for session datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub clicks: usize,
    pub sessions: usize,
    pub items: usize,
    pub avg_length: f64,
}

pub fn corpus_stats(corpus: &SessionCorpus) -> CorpusStats {
    let clicks = corpus.total_clicks();
    let sessions = corpus.len();
    let items: HashSet<&str> =
        corpus.sessions.iter().flat_map(|s| s.items.iter().map(String::as_str)).collect();
    CorpusStats {
        clicks,
        sessions,
        items: items.len(),
        avg_length: if sessions == 0 { 0.0 } else { clicks as f64 / sessions as f64 },
    }
}
