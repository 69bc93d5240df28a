//! Fixture builders shared by the benchmarks.

use narm::dataset::{index_corpus, IndexedSession, ItemVocab};
use narm::synthetic::{markov_corpus, neighbor_chain};

/// A deterministic indexed corpus plus its vocabulary size.
pub fn indexed_corpus(n_sessions: usize, n_items: usize, seed: u64) -> (Vec<IndexedSession>, usize) {
    let chain = neighbor_chain(n_items, 4, 0.85);
    let corpus = markov_corpus(&chain, n_sessions, 3, 10, seed);
    let vocab = ItemVocab::build(&corpus);
    let sessions = index_corpus(&corpus, &vocab).expect("corpus indexes against own vocab");
    (sessions, vocab.len())
}
