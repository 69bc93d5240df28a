//! Non-neural reference scorers sharing the evaluation interface: global
//! popularity (POP), session popularity with a global tie-break (S-POP), and
//! last-click item-to-item nearest neighbours with damped cosine similarity
//! (Item-KNN).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::IndexedSession;
use crate::error::{Error, Result};
use crate::evaluation::Scorer;

/// Global click counts per item index (index k holds item k+1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopModel {
    pub counts: Vec<u64>,
    pub total: u64,
}

pub fn pop_train(sessions: &[IndexedSession], vocab_size: usize) -> PopModel {
    let mut counts = vec![0u64; vocab_size];
    let mut total = 0u64;
    for s in sessions {
        for &item in &s.items {
            counts[item as usize - 1] += 1;
            total += 1;
        }
    }
    PopModel { counts, total }
}

/// score[i] = global count of item i; the prefix is ignored.
pub fn pop_scores(model: &PopModel, _prefix: &[u32]) -> Vec<f64> {
    model.counts.iter().map(|&c| c as f64).collect()
}

/// Lexicographic (count within the session, global count) ranking, encoded
/// as within × 1e6 + global/total: within-counts differ by whole units while
/// the normalized global term stays below 1, so the encoding preserves the
/// lexicographic order.
pub fn spop_scores(model: &PopModel, prefix: &[u32]) -> Vec<f64> {
    let mut within: HashMap<u32, u64> = HashMap::new();
    for &item in prefix {
        *within.entry(item).or_insert(0) += 1;
    }
    let total = model.total.max(1) as f64;
    model
        .counts
        .iter()
        .enumerate()
        .map(|(k, &global)| {
            let w = within.get(&(k as u32 + 1)).copied().unwrap_or(0);
            w as f64 * 1e6 + global as f64 / total
        })
        .collect()
}

pub struct PopScorer<'a>(pub &'a PopModel);

impl Scorer for PopScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.0.counts.len()
    }
    fn score(&self, prefix: &[u32]) -> Vec<f64> {
        pop_scores(self.0, prefix)
    }
}

pub struct SpopScorer<'a>(pub &'a PopModel);

impl Scorer for SpopScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.0.counts.len()
    }
    fn score(&self, prefix: &[u32]) -> Vec<f64> {
        spop_scores(self.0, prefix)
    }
}

/// Session-level co-occurrence statistics. `supports[k]` is the number of
/// sessions containing item k+1; `co` holds unordered pairs keyed
/// (smaller, larger), counting sessions containing both.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnnModel {
    pub supports: Vec<u32>,
    pub co: HashMap<(u32, u32), u32>,
    pub lambda: f64,
    /// Give the just-clicked item itself a minus-infinity score.
    pub exclude_current: bool,
}

pub fn itemknn_train(sessions: &[IndexedSession], vocab_size: usize, lambda: f64) -> ItemKnnModel {
    let mut supports = vec![0u32; vocab_size];
    let mut co: HashMap<(u32, u32), u32> = HashMap::new();
    for s in sessions {
        let mut present: Vec<u32> = {
            let set: HashSet<u32> = s.items.iter().copied().collect();
            set.into_iter().collect()
        };
        present.sort_unstable();
        for &i in &present {
            supports[i as usize - 1] += 1;
        }
        for a in 0..present.len() {
            for b in a + 1..present.len() {
                *co.entry((present[a], present[b])).or_insert(0) += 1;
            }
        }
    }
    ItemKnnModel { supports, co, lambda, exclude_current: true }
}

impl ItemKnnModel {
    /// co(i, j), reading the unordered pair store; the diagonal is the
    /// session support itself (a session containing i contains "both").
    pub fn co_count(&self, i: u32, j: u32) -> u32 {
        if i == j {
            return self.supports[i as usize - 1];
        }
        let key = (i.min(j), i.max(j));
        self.co.get(&key).copied().unwrap_or(0)
    }

    /// sim(i, j) = co(i, j) / (√(supp(i)·supp(j)) + λ); zero whenever the
    /// pair never co-occurs, which also keeps λ = 0 free of 0/0.
    pub fn similarity(&self, i: u32, j: u32) -> f64 {
        let co = self.co_count(i, j);
        if co == 0 {
            return 0.0;
        }
        let si = self.supports[i as usize - 1] as f64;
        let sj = self.supports[j as usize - 1] as f64;
        co as f64 / ((si * sj).sqrt() + self.lambda)
    }
}

/// score[j] = sim(last click of the prefix, item j+1).
pub fn itemknn_scores(model: &ItemKnnModel, prefix: &[u32]) -> Vec<f64> {
    let last = *prefix.last().expect("non-empty prefix");
    (1..=model.supports.len() as u32)
        .map(|j| {
            if model.exclude_current && j == last {
                f64::NEG_INFINITY
            } else {
                model.similarity(last, j)
            }
        })
        .collect()
}

impl Scorer for ItemKnnModel {
    fn vocab_size(&self) -> usize {
        self.supports.len()
    }
    fn score(&self, prefix: &[u32]) -> Vec<f64> {
        itemknn_scores(self, prefix)
    }
}

pub fn pop_to_text(model: &PopModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "items\t{}", model.counts.len());
    let _ = writeln!(out, "total\t{}", model.total);
    for (k, &c) in model.counts.iter().enumerate() {
        if c > 0 {
            let _ = writeln!(out, "count\t{}\t{}", k + 1, c);
        }
    }
    out
}

pub fn save_pop(path: &Path, model: &PopModel) -> Result<()> {
    fs::write(path, pop_to_text(model))?;
    Ok(())
}

pub fn load_pop(path: &Path) -> Result<PopModel> {
    let text = fs::read_to_string(path)?;
    let mut counts: Option<Vec<u64>> = None;
    let mut total = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let bad = || Error::Format(format!("popularity model line {}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["items", m] => {
                let m: usize = m.parse().map_err(|_| bad())?;
                counts = Some(vec![0; m]);
            }
            ["total", t] => total = t.parse().map_err(|_| bad())?,
            ["count", i, c] => {
                let i: usize = i.parse().map_err(|_| bad())?;
                let c: u64 = c.parse().map_err(|_| bad())?;
                let counts = counts.as_mut().ok_or_else(bad)?;
                if i == 0 || i > counts.len() {
                    return Err(Error::IndexOutOfRange(i as u32, counts.len()));
                }
                counts[i - 1] = c;
            }
            _ => return Err(bad()),
        }
    }
    let counts = counts.ok_or_else(|| Error::Format("popularity model missing items line".into()))?;
    Ok(PopModel { counts, total })
}

pub fn itemknn_to_text(model: &ItemKnnModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "items\t{}", model.supports.len());
    let _ = writeln!(out, "lambda\t{}", model.lambda);
    let _ = writeln!(out, "exclude_current\t{}", model.exclude_current as u8);
    for (k, &s) in model.supports.iter().enumerate() {
        if s > 0 {
            let _ = writeln!(out, "supp\t{}\t{}", k + 1, s);
        }
    }
    let mut pairs: Vec<(&(u32, u32), &u32)> = model.co.iter().collect();
    pairs.sort_by_key(|(&pair, _)| pair);
    for (&(i, j), &c) in pairs {
        let _ = writeln!(out, "co\t{i}\t{j}\t{c}");
    }
    out
}

pub fn save_itemknn(path: &Path, model: &ItemKnnModel) -> Result<()> {
    fs::write(path, itemknn_to_text(model))?;
    Ok(())
}

pub fn load_itemknn(path: &Path) -> Result<ItemKnnModel> {
    let text = fs::read_to_string(path)?;
    let mut supports: Option<Vec<u32>> = None;
    let mut co = HashMap::new();
    let mut lambda = 0.0;
    let mut exclude_current = true;
    for (lineno, line) in text.lines().enumerate() {
        let bad = || Error::Format(format!("item-knn model line {}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["items", m] => supports = Some(vec![0; m.parse().map_err(|_| bad())?]),
            ["lambda", l] => lambda = l.parse().map_err(|_| bad())?,
            ["exclude_current", e] => exclude_current = *e != "0",
            ["supp", i, s] => {
                let i: usize = i.parse().map_err(|_| bad())?;
                let supports = supports.as_mut().ok_or_else(bad)?;
                if i == 0 || i > supports.len() {
                    return Err(Error::IndexOutOfRange(i as u32, supports.len()));
                }
                supports[i - 1] = s.parse().map_err(|_| bad())?;
            }
            ["co", i, j, c] => {
                let i: u32 = i.parse().map_err(|_| bad())?;
                let j: u32 = j.parse().map_err(|_| bad())?;
                if i >= j {
                    return Err(bad());
                }
                co.insert((i, j), c.parse().map_err(|_| bad())?);
            }
            _ => return Err(bad()),
        }
    }
    let supports =
        supports.ok_or_else(|| Error::Format("item-knn model missing items line".into()))?;
    Ok(ItemKnnModel { supports, co, lambda, exclude_current })
}
