//! Ranking evaluation. Hits are counted as integers and reciprocal-rank
//! sums as exact rationals, so reports merge associatively and two runs over
//! the same predictions agree to the last bit; floats only appear when a
//! report is formatted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, IndexedSession, ItemVocab};
use crate::error::{Error, Result};
use crate::model::{forward_eval, NarmConfig, NarmParams};

/// Anything that can score the full catalogue against a session prefix.
/// `score(prefix)[k]` is the score of item index k+1 (index 0 is padding and
/// is never scored).
pub trait Scorer {
    fn vocab_size(&self) -> usize;
    fn score(&self, prefix: &[u32]) -> Vec<f64>;
}

/// 1-based rank of the label item. Ties are broken by item index: an item
/// with equal score and a smaller index ranks ahead of the label.
pub fn rank_of(scores: &[f64], label: u32) -> usize {
    let li = label as usize - 1;
    let s = scores[li];
    let mut rank = 1;
    for (k, &v) in scores.iter().enumerate() {
        if v > s || (v == s && k < li) {
            rank += 1;
        }
    }
    rank
}

/// Item indices (1-based) of the k best scores, best first; equal scores
/// order by smaller item index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(k);
    order.into_iter().map(|i| i as u32 + 1).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthStats {
    pub n_cases: usize,
    pub hits: usize,
    pub rr_sum: BigRational,
}

impl LengthStats {
    fn new() -> Self {
        LengthStats { n_cases: 0, hits: 0, rr_sum: BigRational::zero() }
    }
}

/// Recall@k and MRR@k over a set of cases, with a per-prefix-length
/// breakdown. A case whose label ranks below k contributes zero reciprocal
/// rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub k: usize,
    pub n_cases: usize,
    pub hits: usize,
    pub rr_sum: BigRational,
    pub per_length: BTreeMap<usize, LengthStats>,
}

impl EvalReport {
    pub fn new(k: usize) -> Self {
        EvalReport {
            k,
            n_cases: 0,
            hits: 0,
            rr_sum: BigRational::zero(),
            per_length: BTreeMap::new(),
        }
    }

    /// Record one evaluated case.
    pub fn record(&mut self, prefix_len: usize, rank: usize) {
        self.n_cases += 1;
        let stats = self.per_length.entry(prefix_len).or_insert_with(LengthStats::new);
        stats.n_cases += 1;
        if rank <= self.k {
            self.hits += 1;
            stats.hits += 1;
            let rr = BigRational::new(BigInt::from(1), BigInt::from(rank));
            self.rr_sum += rr.clone();
            stats.rr_sum += rr;
        }
    }

    /// Exact merge; both reports must use the same k.
    pub fn merge(&mut self, other: &EvalReport) {
        assert_eq!(self.k, other.k, "cannot merge reports with different k");
        self.n_cases += other.n_cases;
        self.hits += other.hits;
        self.rr_sum += other.rr_sum.clone();
        for (&len, stats) in &other.per_length {
            let entry = self.per_length.entry(len).or_insert_with(LengthStats::new);
            entry.n_cases += stats.n_cases;
            entry.hits += stats.hits;
            entry.rr_sum += stats.rr_sum.clone();
        }
    }

    pub fn recall(&self) -> f64 {
        if self.n_cases == 0 {
            return 0.0;
        }
        self.hits as f64 / self.n_cases as f64
    }

    /// Exact MRR as a rational; `None` for an empty report.
    pub fn mrr_exact(&self) -> Option<BigRational> {
        if self.n_cases == 0 {
            return None;
        }
        Some(&self.rr_sum / BigRational::from(BigInt::from(self.n_cases)))
    }

    pub fn mrr(&self) -> f64 {
        self.mrr_exact().map_or(0.0, |r| r.to_f64().unwrap_or(f64::NAN))
    }

    /// Tab-separated summary: an overall row, then one row per prefix length.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scope\tn_cases\trecall@{}\tmrr@{}", self.k, self.k);
        let _ = writeln!(
            out,
            "overall\t{}\t{:.6}\t{:.6}",
            self.n_cases,
            self.recall(),
            self.mrr()
        );
        for (len, stats) in &self.per_length {
            let recall =
                if stats.n_cases == 0 { 0.0 } else { stats.hits as f64 / stats.n_cases as f64 };
            let mrr = if stats.n_cases == 0 {
                0.0
            } else {
                (&stats.rr_sum / BigRational::from(BigInt::from(stats.n_cases)))
                    .to_f64()
                    .unwrap_or(f64::NAN)
            };
            let _ = writeln!(out, "length:{}\t{}\t{:.6}\t{:.6}", len, stats.n_cases, recall, mrr);
        }
        out
    }
}

/// Recall@k over a list of 1-based label ranks: the fraction with rank ≤ k.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Config("recall over an empty rank list".into()));
    }
    if k == 0 {
        return Err(Error::Config("evaluation cutoff k must be at least 1".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// MRR@k over a list of 1-based label ranks, computed exactly: the mean of
/// 1/rank with ranks beyond k contributing zero.
pub fn mrr_at_k_exact(ranks: &[usize], k: usize) -> Result<BigRational> {
    if ranks.is_empty() {
        return Err(Error::Config("mrr over an empty rank list".into()));
    }
    if k == 0 {
        return Err(Error::Config("evaluation cutoff k must be at least 1".into()));
    }
    let mut sum = BigRational::zero();
    for &r in ranks {
        if r <= k {
            sum += BigRational::new(BigInt::from(1), BigInt::from(r));
        }
    }
    Ok(sum / BigRational::from(BigInt::from(ranks.len())))
}

pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    Ok(mrr_at_k_exact(ranks, k)?.to_f64().unwrap_or(f64::NAN))
}

/// Score and rank every example.
pub fn evaluate(scorer: &dyn Scorer, examples: &[Example], k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::Config("evaluation cutoff k must be at least 1".into()));
    }
    let m = scorer.vocab_size();
    let mut report = EvalReport::new(k);
    for ex in examples {
        if ex.label == 0 || ex.label as usize > m {
            return Err(Error::IndexOutOfRange(ex.label, m));
        }
        let scores = scorer.score(&ex.prefix);
        debug_assert_eq!(scores.len(), m);
        report.record(ex.prefix.len(), rank_of(&scores, ex.label));
    }
    Ok(report)
}

/// One line of the attention dump: what the model looked at while predicting
/// the last click of a session from everything before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub session_id: String,
    /// Prefix item ids actually encoded (after truncation), oldest first.
    pub items: Vec<String>,
    /// Attention weight per encoded position.
    pub weights: Vec<f64>,
    /// The model's top-k item ids, best first.
    pub topk: Vec<String>,
    /// The session's true final item.
    pub label: String,
}

/// Write one JSON line per session: the prefix is everything except the last
/// click, the label is the last click. Sessions shorter than two clicks are
/// skipped. Returns the number of traces written.
pub fn export_attention<W: io::Write>(
    params: &NarmParams,
    config: &NarmConfig,
    sessions: &[IndexedSession],
    vocab: &ItemVocab,
    topk: usize,
    out: &mut W,
) -> Result<usize> {
    let item_name = |idx: u32| -> Result<String> {
        vocab
            .item(idx)
            .map(str::to_string)
            .ok_or(Error::IndexOutOfRange(idx, vocab.len()))
    };
    let mut written = 0;
    for session in sessions {
        if session.items.len() < 2 {
            continue;
        }
        let (label, prefix) = session.items.split_last().unwrap();
        let trace = forward_eval(params, config, prefix, *label)?;
        let record = AttentionTrace {
            session_id: session.id.clone(),
            items: trace.prefix.iter().map(|&i| item_name(i)).collect::<Result<_>>()?,
            weights: trace.alpha.clone(),
            topk: top_k_indices(&trace.scores, topk)
                .into_iter()
                .map(item_name)
                .collect::<Result<_>>()?,
            label: item_name(*label)?,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Format(format!("attention trace serialization: {e}")))?;
        writeln!(out, "{line}")?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_sessions, index_corpus, ClickEvent};
    use crate::model::SessionFeature;
    use crate::numerics::RngState;

    struct TableScorer {
        m: usize,
        rows: Vec<Vec<f64>>, // keyed by first prefix item
    }

    impl Scorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.m
        }
        fn score(&self, prefix: &[u32]) -> Vec<f64> {
            self.rows[prefix[0] as usize % self.rows.len()].clone()
        }
    }

    fn ex(prefix: &[u32], label: u32) -> Example {
        Example { prefix: prefix.to_vec(), label }
    }

    #[test]
    fn rank_of_handles_ties_by_index() {
        let scores = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(rank_of(&scores, 2), 1); // unique max
        assert_eq!(rank_of(&scores, 1), 2); // beaten by 0.9 only
        assert_eq!(rank_of(&scores, 3), 3); // tied with index 0, which wins
        assert_eq!(rank_of(&scores, 4), 4);
    }

    #[test]
    fn rank_of_matches_sort_oracle() {
        let mut rng = RngState::new(3);
        for _ in 0..200 {
            let m = 2 + rng.below(30) as usize;
            // coarse scores force plenty of ties
            let scores: Vec<f64> = (0..m).map(|_| rng.below(5) as f64).collect();
            let label = 1 + rng.below(m as u64) as u32;
            // oracle: stable sort of (score desc, index asc), find label
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            let want = order.iter().position(|&i| i == label as usize - 1).unwrap() + 1;
            assert_eq!(rank_of(&scores, label), want);
        }
    }

    #[test]
    fn top_k_orders_by_score_then_index() {
        let scores = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(top_k_indices(&scores, 3), vec![2, 1, 3]);
        assert_eq!(top_k_indices(&scores, 10), vec![2, 1, 3, 4]);
        assert_eq!(top_k_indices(&scores, 0), Vec::<u32>::new());
    }

    #[test]
    fn rank_list_metrics_match_hand_values() {
        // all hits at rank 1
        assert_eq!(recall_at_k(&[1, 1, 1], 20).unwrap(), 1.0);
        assert_eq!(
            mrr_at_k_exact(&[1, 1, 1], 20).unwrap(),
            BigRational::from(BigInt::from(1))
        );
        // one hit, one miss just past the cutoff
        assert_eq!(recall_at_k(&[1, 21], 20).unwrap(), 0.5);
        assert_eq!(
            mrr_at_k_exact(&[1, 21], 20).unwrap(),
            BigRational::new(BigInt::from(1), BigInt::from(2))
        );
        // a single rank-21 case at k = 20 is exactly zero, not merely small
        assert_eq!(recall_at_k(&[21], 20).unwrap(), 0.0);
        assert!(mrr_at_k_exact(&[21], 20).unwrap().is_zero());
        assert_eq!(mrr_at_k(&[21], 20).unwrap(), 0.0);
        // 1 + 1/2 + 1/4 over 3 = 7/12
        assert_eq!(
            mrr_at_k_exact(&[1, 2, 4], 20).unwrap(),
            BigRational::new(BigInt::from(7), BigInt::from(12))
        );
        assert!((mrr_at_k(&[1, 2, 4], 20).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn rank_list_metrics_reject_empty_and_zero_k() {
        assert!(recall_at_k(&[], 20).is_err());
        assert!(mrr_at_k_exact(&[], 20).is_err());
        assert!(mrr_at_k(&[], 20).is_err());
        assert!(recall_at_k(&[1], 0).is_err());
        assert!(mrr_at_k(&[1], 0).is_err());
    }

    #[test]
    fn rank_list_metrics_agree_with_report() {
        let mut rng = RngState::new(21);
        let ranks: Vec<usize> = (0..300).map(|_| 1 + rng.below(40) as usize).collect();
        let mut report = EvalReport::new(20);
        for &r in &ranks {
            report.record(1, r);
        }
        assert_eq!(recall_at_k(&ranks, 20).unwrap(), report.recall());
        assert_eq!(mrr_at_k_exact(&ranks, 20).unwrap(), report.mrr_exact().unwrap());
    }

    #[test]
    fn report_records_boundary_ranks() {
        let mut report = EvalReport::new(20);
        report.record(1, 20); // hit, exactly at the cutoff
        report.record(1, 21); // miss, contributes zero to both metrics
        assert_eq!(report.hits, 1);
        assert_eq!(report.n_cases, 2);
        assert_eq!(report.rr_sum, BigRational::new(BigInt::from(1), BigInt::from(20)));
        // the rank-21 case adds exactly nothing
        let mut only_miss = EvalReport::new(20);
        only_miss.record(1, 21);
        assert!(only_miss.rr_sum.is_zero());
        assert_eq!(only_miss.mrr(), 0.0);
        assert_eq!(only_miss.recall(), 0.0);
    }

    #[test]
    fn mrr_of_ranks_one_two_four() {
        let mut report = EvalReport::new(20);
        for rank in [1, 2, 4] {
            report.record(2, rank);
        }
        // 1 + 1/2 + 1/4 = 7/4, over 3 cases = 7/12
        assert_eq!(report.rr_sum, BigRational::new(BigInt::from(7), BigInt::from(4)));
        assert_eq!(
            report.mrr_exact().unwrap(),
            BigRational::new(BigInt::from(7), BigInt::from(12))
        );
        assert!((report.mrr() - 0.5833333333333333).abs() < 1e-15);
        assert_eq!(report.recall(), 1.0);
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let mut rng = RngState::new(8);
        let m = 15;
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..m).map(|_| rng.below(4) as f64).collect()).collect();
        let scorer = TableScorer { m, rows: rows.clone() };
        let examples: Vec<Example> = (0..100)
            .map(|_| {
                let len = 1 + rng.below(4) as usize;
                let prefix: Vec<u32> =
                    (0..len).map(|_| 1 + rng.below(m as u64) as u32).collect();
                ex(&prefix, 1 + rng.below(m as u64) as u32)
            })
            .collect();
        let k = 5;
        let report = evaluate(&scorer, &examples, k).unwrap();

        let mut hits = 0usize;
        let mut rr = BigRational::zero();
        for e in &examples {
            let scores = &rows[e.prefix[0] as usize % rows.len()];
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            let rank = order.iter().position(|&i| i == e.label as usize - 1).unwrap() + 1;
            if rank <= k {
                hits += 1;
                rr += BigRational::new(BigInt::from(1), BigInt::from(rank));
            }
        }
        assert_eq!(report.hits, hits);
        assert_eq!(report.rr_sum, rr);
        assert_eq!(report.n_cases, 100);
        let per_len_total: usize = report.per_length.values().map(|s| s.n_cases).sum();
        assert_eq!(per_len_total, 100);
    }

    #[test]
    fn uniform_random_scorer_hits_at_base_rate() {
        struct RandomScorer {
            m: usize,
        }
        impl Scorer for RandomScorer {
            fn vocab_size(&self) -> usize {
                self.m
            }
            fn score(&self, prefix: &[u32]) -> Vec<f64> {
                // fresh pseudo-random scores per case, seeded by the prefix
                let mut rng = RngState::new(prefix[0] as u64);
                (0..self.m).map(|_| rng.next_f64()).collect()
            }
        }
        let m = 1000;
        let scorer = RandomScorer { m };
        let examples: Vec<Example> =
            (0..10_000).map(|i| ex(&[i + 1], 1 + (i * 7 % m as u32))).collect();
        let report = evaluate(&scorer, &examples, 20).unwrap();
        // expected recall@20 = 20/1000 = 0.02
        assert!(
            (report.recall() - 0.02).abs() < 0.005,
            "recall {} should sit near the 0.02 base rate",
            report.recall()
        );
    }

    #[test]
    fn evaluation_invariant_under_monotone_score_maps() {
        let mut rng = RngState::new(12);
        let m = 20;
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..m).map(|_| rng.uniform(-3.0, 3.0)).collect()).collect();
        let affine: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| 2.5 * x + 7.0).collect())
            .collect();
        let examples: Vec<Example> = (0..60)
            .map(|_| ex(&[1 + rng.below(m as u64) as u32], 1 + rng.below(m as u64) as u32))
            .collect();
        let a = evaluate(&TableScorer { m, rows }, &examples, 10).unwrap();
        let b = evaluate(&TableScorer { m, rows: affine }, &examples, 10).unwrap();
        assert_eq!(a, b, "a positive affine map must not change any rank");
    }

    #[test]
    fn recall_monotone_in_k() {
        let mut rng = RngState::new(14);
        let m = 30;
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..m).map(|_| rng.next_f64()).collect()).collect();
        let scorer = TableScorer { m, rows };
        let examples: Vec<Example> = (0..80)
            .map(|_| ex(&[1 + rng.below(m as u64) as u32], 1 + rng.below(m as u64) as u32))
            .collect();
        let mut last_recall = 0.0;
        let mut last_mrr = 0.0;
        for k in [1, 5, 10, 20, 30] {
            let r = evaluate(&scorer, &examples, k).unwrap();
            assert!(r.recall() >= last_recall - 1e-15);
            assert!(r.mrr() >= last_mrr - 1e-15);
            last_recall = r.recall();
            last_mrr = r.mrr();
        }
    }

    #[test]
    fn merge_is_exact() {
        let mut rng = RngState::new(16);
        let m = 25;
        let rows: Vec<Vec<f64>> =
            (0..4).map(|_| (0..m).map(|_| rng.below(6) as f64).collect()).collect();
        let scorer = TableScorer { m, rows };
        let examples: Vec<Example> = (0..101)
            .map(|_| {
                let len = 1 + rng.below(3) as usize;
                let prefix: Vec<u32> =
                    (0..len).map(|_| 1 + rng.below(m as u64) as u32).collect();
                ex(&prefix, 1 + rng.below(m as u64) as u32)
            })
            .collect();
        let whole = evaluate(&scorer, &examples, 7).unwrap();
        let mut merged = evaluate(&scorer, &examples[..40], 7).unwrap();
        merged.merge(&evaluate(&scorer, &examples[40..], 7).unwrap());
        assert_eq!(whole, merged);
    }

    #[test]
    fn evaluate_rejects_bad_labels_and_k() {
        let scorer = TableScorer { m: 5, rows: vec![vec![0.0; 5]] };
        assert!(evaluate(&scorer, &[ex(&[1], 0)], 5).is_err());
        assert!(evaluate(&scorer, &[ex(&[1], 6)], 5).is_err());
        assert!(evaluate(&scorer, &[ex(&[1], 3)], 0).is_err());
    }

    #[test]
    fn tsv_layout_is_stable() {
        let mut report = EvalReport::new(20);
        report.record(1, 1);
        report.record(2, 30);
        let tsv = report.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "scope\tn_cases\trecall@20\tmrr@20");
        assert_eq!(lines[1], "overall\t2\t0.500000\t0.500000");
        assert_eq!(lines[2], "length:1\t1\t1.000000\t1.000000");
        assert_eq!(lines[3], "length:2\t1\t0.000000\t0.000000");
    }

    #[test]
    fn attention_trace_round_trips_through_json() {
        let trace = AttentionTrace {
            session_id: "s1".into(),
            items: vec!["a".into(), "b".into()],
            weights: vec![0.25, 0.5],
            topk: vec!["c".into()],
            label: "c".into(),
        };
        let line = serde_json::to_string(&trace).unwrap();
        let back: AttentionTrace = serde_json::from_str(&line).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn export_attention_writes_one_line_per_session() {
        let events: Vec<ClickEvent> = [
            ("s1", 1, "a"),
            ("s1", 2, "b"),
            ("s1", 3, "c"),
            ("s2", 4, "b"),
            ("s2", 5, "a"),
        ]
        .iter()
        .map(|&(s, t, i)| ClickEvent {
            session_id: s.into(),
            timestamp: t,
            item_id: i.into(),
        })
        .collect();
        let corpus = build_sessions(&events);
        let vocab = crate::dataset::ItemVocab::build(&corpus);
        let sessions = index_corpus(&corpus, &vocab).unwrap();

        let config = NarmConfig {
            vocab_size: vocab.len(),
            embedding_dim: 3,
            hidden_dim: 4,
            truncation: 19,
            feature: SessionFeature::Hybrid,
            normalize_attention: false,
            use_biases: false,
            dropout_embed: 0.0,
            dropout_repr: 0.0,
        };
        let params = NarmParams::init(&config, &mut RngState::new(5)).unwrap();

        let mut buf = Vec::new();
        let n = export_attention(&params, &config, &sessions, &vocab, 2, &mut buf).unwrap();
        assert_eq!(n, 2);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: AttentionTrace = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.session_id, "s1");
        assert_eq!(first.items, vec!["a", "b"]);
        assert_eq!(first.label, "c");
        assert_eq!(first.weights.len(), 2);
        assert_eq!(first.topk.len(), 2);
        let second: AttentionTrace = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(second.items, vec!["b"]);
        assert_eq!(second.label, "a");
    }
}
