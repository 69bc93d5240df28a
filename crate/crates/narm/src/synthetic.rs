//! Synthetic click-log generators with known structure, plus the exact
//! Bayes scorer for them. Used to calibrate models and tests against ground
//! truth: if the generating process is a first-order Markov chain, the best
//! possible next-click predictor is the transition row of the last click.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{ItemVocab, Session, SessionCorpus};
use crate::error::{Error, Result};
use crate::evaluation::Scorer;
use crate::numerics::RngState;

/// Row-stochastic transition matrix over states 0..n−1. State k is item
/// id `i{k}` in generated logs.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub n_states: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn sample_next(&self, state: usize, rng: &mut RngState) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (j, &p) in self.rows[state].iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.n_states - 1
    }
}

/// Chain where state k hands most of its mass to its `neighbors` successors
/// k+1..k+neighbors (mod n) and spreads the rest uniformly. Strong local
/// structure that popularity alone cannot capture.
pub fn neighbor_chain(n_states: usize, neighbors: usize, neighbor_mass: f64) -> MarkovChain {
    assert!(n_states > neighbors && neighbors > 0);
    assert!((0.0..=1.0).contains(&neighbor_mass));
    let base = (1.0 - neighbor_mass) / n_states as f64;
    let boost = neighbor_mass / neighbors as f64;
    let rows = (0..n_states)
        .map(|k| {
            let mut row = vec![base; n_states];
            for step in 1..=neighbors {
                row[(k + step) % n_states] += boost;
            }
            row
        })
        .collect();
    MarkovChain { n_states, rows }
}

fn session_shell(n: usize, states: &[usize]) -> Session {
    let start = n as i64 * 1000;
    Session {
        id: format!("s{n}"),
        start_time: start,
        items: states.iter().map(|&k| format!("i{k}")).collect(),
    }
}

/// Sessions of length `min_len..=max_len`: uniform first click, then a
/// chain walk. Session n starts at time n×1000, so a time-based split
/// cleanly peels off the most recent fraction.
pub fn markov_corpus(
    chain: &MarkovChain,
    n_sessions: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> SessionCorpus {
    assert!(min_len >= 2 && min_len <= max_len);
    let mut rng = RngState::new(seed);
    let mut sessions = Vec::with_capacity(n_sessions);
    for n in 0..n_sessions {
        let len = min_len + rng.below((max_len - min_len + 1) as u64) as usize;
        let mut states = Vec::with_capacity(len);
        let mut state = rng.below(chain.n_states as u64) as usize;
        states.push(state);
        for _ in 1..len {
            state = chain.sample_next(state, &mut rng);
            states.push(state);
        }
        sessions.push(session_shell(n, &states));
    }
    SessionCorpus { sessions }
}

/// Like `markov_corpus`, except the final click of each session is drawn
/// from the transition row of a uniformly chosen *earlier* click rather
/// than the last one. Predicting session ends well requires looking back
/// past the most recent click — attention has something to find.
pub fn purpose_corpus(
    chain: &MarkovChain,
    n_sessions: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> SessionCorpus {
    assert!(min_len >= 3 && min_len <= max_len);
    let mut rng = RngState::new(seed);
    let mut sessions = Vec::with_capacity(n_sessions);
    for n in 0..n_sessions {
        let len = min_len + rng.below((max_len - min_len + 1) as u64) as usize;
        let mut states = Vec::with_capacity(len);
        let mut state = rng.below(chain.n_states as u64) as usize;
        states.push(state);
        for _ in 1..len - 1 {
            state = chain.sample_next(state, &mut rng);
            states.push(state);
        }
        let anchor = states[rng.below(states.len() as u64) as usize];
        states.push(chain.sample_next(anchor, &mut rng));
        sessions.push(session_shell(n, &states));
    }
    SessionCorpus { sessions }
}

/// The exact posterior next-click scorer for chain-generated logs:
/// score = transition row of the last click, mapped through the vocab.
pub struct BayesScorer<'a> {
    chain: &'a MarkovChain,
    /// vocab index − 1 → chain state
    states: Vec<usize>,
}

impl<'a> BayesScorer<'a> {
    pub fn new(chain: &'a MarkovChain, vocab: &ItemVocab) -> Result<Self> {
        let states = (1..=vocab.len() as u32)
            .map(|idx| {
                let id = vocab.item(idx).expect("in-range index");
                id.strip_prefix('i')
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k < chain.n_states)
                    .ok_or_else(|| Error::Format(format!("item id {id} is not a chain state")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(BayesScorer { chain, states })
    }
}

impl Scorer for BayesScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.states.len()
    }

    fn score(&self, prefix: &[u32]) -> Vec<f64> {
        let last = *prefix.last().expect("non-empty prefix") as usize;
        let row = &self.chain.rows[self.states[last - 1]];
        self.states.iter().map(|&k| row[k]).collect()
    }
}

/// Write a corpus as a raw click log (`session,timestamp,item` CSV, one row
/// per click) readable with the default column schema.
pub fn write_clicks(path: &Path, corpus: &SessionCorpus) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sessions {
        for (j, item) in s.items.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", s.id, s.start_time + j as i64, item);
        }
    }
    fs::write(path, out)?;
    Ok(())
}
