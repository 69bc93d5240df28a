//! Mini-batch Adam training with validation-based model selection. Batches
//! are padded index matrices with true-length vectors; the per-example
//! forward only ever reads the true-length slice, so padding positions
//! contribute nothing to states, losses, or gradients. Batch gradients are
//! means (not sums) so the learning rate is comparable across batch sizes.

use std::time::Instant;

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::model::{
    backward_into, forward_eval, forward_train, NarmConfig, NarmParams, NarmScorer,
};
use crate::numerics::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of examples held out (after one shuffle) for per-epoch
    /// validation; 0 disables validation and selection keeps the last epoch.
    pub validation_fraction: f64,
    /// Optional global-norm gradient clipping.
    pub clip_norm: Option<f64>,
    /// Cutoff for the validation recall/MRR used in selection and logging.
    pub selection_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 30,
            validation_fraction: 0.10,
            clip_norm: None,
            selection_k: 20,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if self.selection_k == 0 {
            return Err(Error::Config("selection_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One batch: a 0-padded n×max_len index matrix plus per-example true
/// lengths and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub max_len: usize,
    pub prefixes: Vec<u32>,
    pub lengths: Vec<usize>,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Batch {
        let max_len = examples.iter().map(|e| e.prefix.len()).max().unwrap_or(0);
        let mut prefixes = vec![0u32; examples.len() * max_len];
        let mut lengths = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            prefixes[i * max_len..i * max_len + ex.prefix.len()].copy_from_slice(&ex.prefix);
            lengths.push(ex.prefix.len());
            labels.push(ex.label);
        }
        Batch { max_len, prefixes, lengths, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The true-length prefix of example `i` — padding excluded.
    pub fn prefix(&self, i: usize) -> &[u32] {
        &self.prefixes[i * self.max_len..i * self.max_len + self.lengths[i]]
    }

    /// The full padded row of example `i`.
    pub fn padded_row(&self, i: usize) -> &[u32] {
        &self.prefixes[i * self.max_len..(i + 1) * self.max_len]
    }
}

/// Shuffle the examples with `rng`, then cut them into consecutive padded
/// batches (the last may be short).
pub fn make_batches(
    examples: &[Example],
    batch_size: usize,
    rng: &mut RngState,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    let mut batches = Vec::with_capacity(examples.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let slice: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
        batches.push(Batch::from_examples(&slice));
    }
    Ok(batches)
}

/// Mean evaluation-mode loss over a batch.
pub fn batch_mean_loss(params: &NarmParams, config: &NarmConfig, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch.len() {
        total += forward_eval(params, config, batch.prefix(i), batch.labels[i])?.loss;
    }
    Ok(total / batch.len() as f64)
}

/// Adam first/second-moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: NarmParams,
    pub v: NarmParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &NarmParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam step with bias correction:
/// m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g², θ ← θ − lr·m̂/(√v̂ + ε).
pub fn adam_update(
    params: &mut NarmParams,
    grads: &NarmParams,
    state: &mut AdamState,
    learning_rate: f64,
) {
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let mut p_blocks = params.blocks_mut();
    let g_blocks = grads.blocks();
    let mut m_blocks = state.m.blocks_mut();
    let mut v_blocks = state.v.blocks_mut();
    for i in 0..p_blocks.len() {
        debug_assert_eq!(p_blocks[i].0, g_blocks[i].0);
        let theta = p_blocks[i].1.as_mut_slice();
        let g = g_blocks[i].1.as_slice();
        let m = m_blocks[i].1.as_mut_slice();
        let v = v_blocks[i].1.as_mut_slice();
        for k in 0..theta.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_recall: f64,
    pub val_mrr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected (best-validation-recall) epoch, or of the
    /// final epoch when validation is disabled.
    pub params: NarmParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// The held-out validation examples (empty when validation is disabled).
    pub val_examples: Vec<Example>,
}

/// Training log as tab-separated text: header, one line per epoch, then a
/// comment line recording the selection rule and chosen epoch.
pub fn train_log_to_tsv(log: &[EpochLog], selection_k: usize, best_epoch: usize) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "epoch\tmean_loss\tval_recall@{k}\tval_mrr@{k}\twall_seconds",
        k = selection_k
    );
    for e in log {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            e.epoch, e.mean_loss, e.val_recall, e.val_mrr, e.wall_seconds
        );
    }
    let _ = writeln!(out, "# selection\tbest-val-recall@{selection_k}\tbest_epoch\t{best_epoch}");
    out
}

pub fn train(
    model_config: &NarmConfig,
    train_config: &TrainConfig,
    examples: &[Example],
) -> Result<TrainOutcome> {
    train_with(model_config, train_config, examples, |_, _, _| Ok(()))
}

/// Like `train`, with a per-epoch callback receiving (epoch, params so far,
/// that epoch's log row) — used for progress output and epoch checkpoints.
pub fn train_with(
    model_config: &NarmConfig,
    train_config: &TrainConfig,
    examples: &[Example],
    mut on_epoch: impl FnMut(usize, &NarmParams, &EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut rng = RngState::new(train_config.seed);
    let mut params = NarmParams::init(model_config, &mut rng)?;
    let mut adam = AdamState::new(&params);

    // validation split: shuffle once, hold out the tail
    let n = examples.len();
    let n_val = (train_config.validation_fraction * n as f64).floor() as usize;
    if train_config.validation_fraction > 0.0 && n_val == 0 {
        return Err(Error::DegenerateSplit(format!(
            "validation fraction {} of {} examples holds out nothing",
            train_config.validation_fraction, n
        )));
    }
    if n_val == n {
        return Err(Error::DegenerateSplit("no training examples left after holdout".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let train_set: Vec<Example> =
        order[..n - n_val].iter().map(|&i| examples[i].clone()).collect();
    let val_set: Vec<Example> = order[n - n_val..].iter().map(|&i| examples[i].clone()).collect();

    let mut best: Option<(f64, usize, NarmParams)> = None;
    let mut log = Vec::with_capacity(train_config.epochs);

    for epoch in 1..=train_config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for batch in make_batches(&train_set, train_config.batch_size, &mut rng)? {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                let trace = forward_train(
                    &params,
                    model_config,
                    batch.prefix(i),
                    batch.labels[i],
                    &mut rng,
                )?;
                loss_sum += trace.loss;
                backward_into(&params, model_config, &trace, scale, &mut grads)?;
            }
            grads.validate_finite()?;
            if let Some(limit) = train_config.clip_norm {
                let norm = grads.global_norm();
                if norm > limit {
                    let shrink = limit / norm;
                    for (_, block) in grads.blocks_mut() {
                        block.scale(shrink);
                    }
                }
            }
            adam_update(&mut params, &grads, &mut adam, train_config.learning_rate);
        }
        let mean_loss = loss_sum / train_set.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite("epoch mean loss".into()));
        }

        let (val_recall, val_mrr) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let scorer = NarmScorer { params: &params, config: model_config };
            let report: EvalReport = evaluate(&scorer, &val_set, train_config.selection_k)?;
            (report.recall(), report.mrr())
        };
        let row = EpochLog {
            epoch,
            mean_loss,
            val_recall,
            val_mrr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(epoch, &params, &row)?;

        if !val_set.is_empty() {
            let improved = match &best {
                Some((best_recall, _, _)) => val_recall > *best_recall,
                None => true,
            };
            if improved {
                best = Some((val_recall, epoch, params.clone()));
            }
        }
        log.push(row);
    }

    let (best_epoch, best_params) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => (train_config.epochs, params),
    };
    Ok(TrainOutcome { params: best_params, log, best_epoch, val_examples: val_set })
}
