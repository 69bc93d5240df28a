//! The recommendation model: an embedding layer feeding a GRU over the
//! session prefix, an optional attention mechanism over the per-step hidden
//! states, and a bi-linear decoder that scores every catalogue item against
//! the session representation.
//!
//! The session representation depends on the variant:
//! * `Global` — the final hidden state h_t.
//! * `Local` — the attention-weighted sum Σ_j α_tj · h_j, where
//!   α_tj = vᵀ σ(A_s·h_t + A_i·h_j).
//! * `Hybrid` — both, concatenated.
//!
//! Attention weights are raw scores by default; `normalize_attention`
//! softmaxes them over the prefix positions instead. Item scores are
//! S_i = emb_iᵀ · B · c over a dropped-out representation c, and the loss is
//! the negative log of the softmaxed score of the clicked item.

pub mod backward;
pub mod checkpoint;
pub mod gradcheck;

pub use backward::{backward, backward_into};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, BlockCheck, GradCheckReport};

use crate::error::{Error, Result};
use crate::evaluation::Scorer;
use crate::numerics::matrix::matvec_acc;
use crate::numerics::{dot, dropout_mask, sigmoid, softmax, Matrix, RngState};

/// Which session feature(s) feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionFeature {
    Global,
    Local,
    Hybrid,
}

impl SessionFeature {
    pub fn uses_local(self) -> bool {
        !matches!(self, SessionFeature::Global)
    }

    pub fn uses_global(self) -> bool {
        !matches!(self, SessionFeature::Local)
    }

    pub fn name(self) -> &'static str {
        match self {
            SessionFeature::Global => "global",
            SessionFeature::Local => "local",
            SessionFeature::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for SessionFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SessionFeature::Global),
            "local" => Ok(SessionFeature::Local),
            "hybrid" => Ok(SessionFeature::Hybrid),
            other => Err(Error::Config(format!(
                "unknown session feature '{other}' (expected global, local or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarmConfig {
    /// Number of real items m; item indices run 1..=m, 0 is padding.
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    /// Maximum prefix length fed to the encoder; longer prefixes keep their
    /// most recent items.
    pub truncation: usize,
    pub feature: SessionFeature,
    /// Softmax the attention scores over prefix positions instead of using
    /// the raw vᵀσ(·) values.
    pub normalize_attention: bool,
    /// Add bias vectors to the three GRU pre-activations.
    pub use_biases: bool,
    /// Drop probability for embedded input entries.
    pub dropout_embed: f64,
    /// Drop probability for session representation entries.
    pub dropout_repr: f64,
}

impl NarmConfig {
    /// Defaults sized for real click logs; override fields as needed.
    pub fn new(vocab_size: usize) -> Self {
        NarmConfig {
            vocab_size,
            embedding_dim: 50,
            hidden_dim: 100,
            truncation: 19,
            feature: SessionFeature::Hybrid,
            normalize_attention: false,
            use_biases: false,
            dropout_embed: 0.25,
            dropout_repr: 0.5,
        }
    }

    /// Width of the decoder input.
    pub fn context_dim(&self) -> usize {
        match self.feature {
            SessionFeature::Hybrid => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be at least 1".into()));
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embedding_dim and hidden_dim must be at least 1".into()));
        }
        if self.truncation == 0 {
            return Err(Error::Config("truncation must be at least 1".into()));
        }
        for (name, p) in [("dropout_embed", self.dropout_embed), ("dropout_repr", self.dropout_repr)]
        {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// All trainable parameters. The same struct doubles as a gradient
/// accumulator (`zeros_like`), so optimizers can walk parameters and
/// gradients in lockstep via `blocks`/`blocks_mut`.
#[derive(Debug, Clone, PartialEq)]
pub struct NarmParams {
    /// (m+1) × D; row 0 is the padding row and stays zero.
    pub emb: Matrix,
    pub w_update: Matrix, // H × D
    pub u_update: Matrix, // H × H
    pub w_reset: Matrix,  // H × D
    pub u_reset: Matrix,  // H × H
    pub w_cand: Matrix,   // H × D
    pub u_cand: Matrix,   // H × H
    pub b_update: Option<Matrix>, // H × 1
    pub b_reset: Option<Matrix>,
    pub b_cand: Option<Matrix>,
    pub att_session: Option<Matrix>, // H × H, weighs h_t
    pub att_item: Option<Matrix>,    // H × H, weighs h_j
    pub att_v: Option<Matrix>,       // H × 1
    pub decoder: Matrix, // D × context_dim
}

pub type GradientSet = NarmParams;

impl NarmParams {
    /// Fresh parameters. Weight matrices are uniform ±1/√fan_in, embeddings
    /// uniform ±0.1, biases zero. The draw order is fixed, so a seed pins
    /// every entry.
    pub fn init(config: &NarmConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let (m, d, h) = (config.vocab_size, config.embedding_dim, config.hidden_dim);
        let ctx = config.context_dim();
        let lim_d = 1.0 / (d as f64).sqrt();
        let lim_h = 1.0 / (h as f64).sqrt();
        let lim_ctx = 1.0 / (ctx as f64).sqrt();

        let mut emb = Matrix::zeros(m + 1, d);
        for row in 1..=m {
            for col in 0..d {
                emb.set(row, col, rng.uniform(-0.1, 0.1));
            }
        }
        let w_update = Matrix::uniform(h, d, -lim_d, lim_d, rng);
        let u_update = Matrix::uniform(h, h, -lim_h, lim_h, rng);
        let w_reset = Matrix::uniform(h, d, -lim_d, lim_d, rng);
        let u_reset = Matrix::uniform(h, h, -lim_h, lim_h, rng);
        let w_cand = Matrix::uniform(h, d, -lim_d, lim_d, rng);
        let u_cand = Matrix::uniform(h, h, -lim_h, lim_h, rng);
        let bias = |on: bool| on.then(|| Matrix::zeros(h, 1));
        let (att_session, att_item, att_v) = if config.feature.uses_local() {
            (
                Some(Matrix::uniform(h, h, -lim_h, lim_h, rng)),
                Some(Matrix::uniform(h, h, -lim_h, lim_h, rng)),
                Some(Matrix::uniform(h, 1, -lim_h, lim_h, rng)),
            )
        } else {
            (None, None, None)
        };
        let decoder = Matrix::uniform(d, ctx, -lim_ctx, lim_ctx, rng);

        Ok(NarmParams {
            emb,
            w_update,
            u_update,
            w_reset,
            u_reset,
            w_cand,
            u_cand,
            b_update: bias(config.use_biases),
            b_reset: bias(config.use_biases),
            b_cand: bias(config.use_biases),
            att_session,
            att_item,
            att_v,
            decoder,
        })
    }

    /// Same shapes, all zeros — a gradient/optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, block) in out.blocks_mut() {
            block.fill(0.0);
        }
        out
    }

    /// Parameter blocks in a fixed, stable order.
    pub fn blocks(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v: Vec<(&'static str, &Matrix)> = vec![
            ("emb", &self.emb),
            ("w_update", &self.w_update),
            ("u_update", &self.u_update),
            ("w_reset", &self.w_reset),
            ("u_reset", &self.u_reset),
            ("w_cand", &self.w_cand),
            ("u_cand", &self.u_cand),
        ];
        if let Some(b) = &self.b_update {
            v.push(("b_update", b));
        }
        if let Some(b) = &self.b_reset {
            v.push(("b_reset", b));
        }
        if let Some(b) = &self.b_cand {
            v.push(("b_cand", b));
        }
        if let Some(a) = &self.att_session {
            v.push(("att_session", a));
        }
        if let Some(a) = &self.att_item {
            v.push(("att_item", a));
        }
        if let Some(a) = &self.att_v {
            v.push(("att_v", a));
        }
        v.push(("decoder", &self.decoder));
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v: Vec<(&'static str, &mut Matrix)> = vec![
            ("emb", &mut self.emb),
            ("w_update", &mut self.w_update),
            ("u_update", &mut self.u_update),
            ("w_reset", &mut self.w_reset),
            ("u_reset", &mut self.u_reset),
            ("w_cand", &mut self.w_cand),
            ("u_cand", &mut self.u_cand),
        ];
        if let Some(b) = &mut self.b_update {
            v.push(("b_update", b));
        }
        if let Some(b) = &mut self.b_reset {
            v.push(("b_reset", b));
        }
        if let Some(b) = &mut self.b_cand {
            v.push(("b_cand", b));
        }
        if let Some(a) = &mut self.att_session {
            v.push(("att_session", a));
        }
        if let Some(a) = &mut self.att_item {
            v.push(("att_item", a));
        }
        if let Some(a) = &mut self.att_v {
            v.push(("att_v", a));
        }
        v.push(("decoder", &mut self.decoder));
        v
    }

    pub fn block(&self, name: &str) -> Option<&Matrix> {
        self.blocks().into_iter().find(|(n, _)| *n == name).map(|(_, b)| b)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.blocks_mut().into_iter().find(|(n, _)| *n == name).map(|(_, b)| b)
    }

    /// √(Σ over blocks of ‖block‖²_F) — used for gradient clipping.
    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|(_, b)| {
                let f = b.frobenius_norm();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, block) in self.blocks() {
            if block.validate_finite(name).is_err() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        Ok(())
    }
}

/// Inverted-dropout masks for one forward pass: entries are 0 or 1/keep, so
/// eval-time code runs with masks of all ones and no rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// D × t, applied to the embedded prefix columns.
    pub embed: Matrix,
    /// context_dim × 1, applied to the session representation.
    pub repr: Matrix,
}

impl DropoutMasks {
    pub fn ones(config: &NarmConfig, t: usize) -> Self {
        let mut embed = Matrix::zeros(config.embedding_dim, t);
        embed.fill(1.0);
        let mut repr = Matrix::zeros(config.context_dim(), 1);
        repr.fill(1.0);
        DropoutMasks { embed, repr }
    }

    /// Draw fresh masks; draw order (embed, then repr) is part of the
    /// reproducibility contract.
    pub fn sample(config: &NarmConfig, t: usize, rng: &mut RngState) -> Self {
        let embed = dropout_mask(config.embedding_dim, t, 1.0 - config.dropout_embed, rng);
        let repr = dropout_mask(config.context_dim(), 1, 1.0 - config.dropout_repr, rng);
        DropoutMasks { embed, repr }
    }
}

/// Scores and softmax probabilities over real items; index k corresponds to
/// item index k+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Everything one forward pass computed, kept for backprop and inspection.
/// `prefix` holds the indices actually encoded (after truncation).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub prefix: Vec<u32>,
    pub label: u32,
    /// Embedded, mask-multiplied inputs; t × D.
    pub e: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub hhat: Vec<Vec<f64>>,
    /// h_0..h_t; hidden[0] is the zero state, so t+1 entries.
    pub hidden: Vec<Vec<f64>>,
    /// σ(A_s·h_t + A_i·h_j) per step; empty for the global variant.
    pub att: Vec<Vec<f64>>,
    pub alpha_raw: Vec<f64>,
    /// Weights actually used for the local feature (softmaxed if configured).
    pub alpha: Vec<f64>,
    pub c: Vec<f64>,
    pub c_drop: Vec<f64>,
    /// decoder · c_drop.
    pub g: Vec<f64>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub masks: DropoutMasks,
    pub loss: f64,
}

/// One GRU step. Returns (h, z, r, ĥ):
/// z = σ(W_z·e + U_z·h_prev), r = σ(W_r·e + U_r·h_prev),
/// ĥ = tanh(W·e + U·(r⊙h_prev)), h = (1−z)⊙h_prev + z⊙ĥ.
pub fn gru_step(
    params: &NarmParams,
    h_prev: &[f64],
    e: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h_dim = params.u_update.rows();
    debug_assert_eq!(h_prev.len(), h_dim);

    let preact = |w: &Matrix, u: &Matrix, u_in: &[f64], b: &Option<Matrix>| -> Vec<f64> {
        let mut s = match b {
            Some(bias) => bias.as_slice().to_vec(),
            None => vec![0.0; h_dim],
        };
        matvec_acc(&mut s, w, e);
        matvec_acc(&mut s, u, u_in);
        s
    };

    let z: Vec<f64> =
        preact(&params.w_update, &params.u_update, h_prev, &params.b_update)
            .into_iter()
            .map(sigmoid)
            .collect();
    let r: Vec<f64> = preact(&params.w_reset, &params.u_reset, h_prev, &params.b_reset)
        .into_iter()
        .map(sigmoid)
        .collect();
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(&ri, &hi)| ri * hi).collect();
    let hhat: Vec<f64> = preact(&params.w_cand, &params.u_cand, &gated, &params.b_cand)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h: Vec<f64> = z
        .iter()
        .zip(&hhat)
        .zip(h_prev)
        .map(|((&zi, &hh), &hp)| (1.0 - zi) * hp + zi * hh)
        .collect();
    (h, z, r, hhat)
}

/// Attention ingredients for one position: a_j = σ(A_s·h_t + A_i·h_j) and
/// the raw weight α_tj = vᵀ·a_j.
pub fn attention_score(params: &NarmParams, h_t: &[f64], h_j: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (a_s, a_i, v) = attention_params(params)?;
    let mut q = vec![0.0; h_t.len()];
    matvec_acc(&mut q, a_s, h_t);
    matvec_acc(&mut q, a_i, h_j);
    let a: Vec<f64> = q.into_iter().map(sigmoid).collect();
    let alpha = dot(v.as_slice(), &a);
    Ok((a, alpha))
}

fn attention_params(params: &NarmParams) -> Result<(&Matrix, &Matrix, &Matrix)> {
    match (&params.att_session, &params.att_item, &params.att_v) {
        (Some(a_s), Some(a_i), Some(v)) => Ok((a_s, a_i, v)),
        _ => Err(Error::Config("model variant has no attention parameters".into())),
    }
}

/// The session representation plus the attention intermediates that produced
/// it. `hidden` must be the encoder output h_0..h_t.
pub struct SessionRepr {
    pub c: Vec<f64>,
    pub att: Vec<Vec<f64>>,
    pub alpha_raw: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn session_representation(
    params: &NarmParams,
    config: &NarmConfig,
    hidden: &[Vec<f64>],
) -> Result<SessionRepr> {
    let steps = hidden.len() - 1;
    assert!(steps >= 1, "need at least one encoded step");
    let h_t = &hidden[steps];

    if !config.feature.uses_local() {
        return Ok(SessionRepr {
            c: h_t.clone(),
            att: Vec::new(),
            alpha_raw: Vec::new(),
            alpha: Vec::new(),
        });
    }

    let mut att = Vec::with_capacity(steps);
    let mut alpha_raw = Vec::with_capacity(steps);
    for h_j in &hidden[1..=steps] {
        let (a, score) = attention_score(params, h_t, h_j)?;
        att.push(a);
        alpha_raw.push(score);
    }
    let alpha =
        if config.normalize_attention { softmax(&alpha_raw) } else { alpha_raw.clone() };

    let mut local = vec![0.0; config.hidden_dim];
    for (w, h_j) in alpha.iter().zip(&hidden[1..=steps]) {
        for (l, &hv) in local.iter_mut().zip(h_j) {
            *l += w * hv;
        }
    }
    let c = match config.feature {
        SessionFeature::Local => local,
        SessionFeature::Hybrid => {
            let mut c = h_t.clone();
            c.extend_from_slice(&local);
            c
        }
        SessionFeature::Global => unreachable!(),
    };
    Ok(SessionRepr { c, att, alpha_raw, alpha })
}

/// Bi-linear scores S_i = emb_iᵀ · B · c for every real item, softmaxed into
/// probabilities. Returns (g, prediction) with g = B·c.
pub fn decode(params: &NarmParams, config: &NarmConfig, c: &[f64]) -> (Vec<f64>, Prediction) {
    assert_eq!(c.len(), params.decoder.cols(), "representation width mismatch");
    let mut g = vec![0.0; params.decoder.rows()];
    matvec_acc(&mut g, &params.decoder, c);
    let scores: Vec<f64> =
        (1..=config.vocab_size).map(|i| dot(params.emb.row(i), &g)).collect();
    let probs = softmax(&scores);
    (g, Prediction { scores, probs })
}

/// −ln p_label, clamped so an underflowing probability yields a large finite
/// loss instead of infinity.
pub fn nll_loss(probs: &[f64], label: u32) -> Result<f64> {
    if label == 0 || label as usize > probs.len() {
        return Err(Error::IndexOutOfRange(label, probs.len()));
    }
    let p = probs[label as usize - 1].max(f64::MIN_POSITIVE);
    Ok(-p.ln())
}

fn check_indices(config: &NarmConfig, prefix: &[u32], label: Option<u32>) -> Result<()> {
    if prefix.is_empty() {
        return Err(Error::Dim("prefix must contain at least one item".into()));
    }
    let m = config.vocab_size;
    for &x in prefix {
        if x == 0 || x as usize > m {
            return Err(Error::IndexOutOfRange(x, m));
        }
    }
    if let Some(l) = label {
        if l == 0 || l as usize > m {
            return Err(Error::IndexOutOfRange(l, m));
        }
    }
    Ok(())
}

struct Encoded {
    prefix: Vec<u32>,
    e: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    hhat: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    repr: SessionRepr,
    c_drop: Vec<f64>,
    g: Vec<f64>,
    prediction: Prediction,
}

fn run_forward(
    params: &NarmParams,
    config: &NarmConfig,
    prefix: &[u32],
    masks: &DropoutMasks,
) -> Result<Encoded> {
    let start = prefix.len().saturating_sub(config.truncation);
    let prefix = &prefix[start..];
    let t = prefix.len();
    assert_eq!(masks.embed.shape(), (config.embedding_dim, t), "embed mask shape");
    assert_eq!(masks.repr.shape(), (config.context_dim(), 1), "repr mask shape");

    // embed with per-position dropout
    let e: Vec<Vec<f64>> = prefix
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            params
                .emb
                .row(x as usize)
                .iter()
                .enumerate()
                .map(|(d, &v)| v * masks.embed.get(d, j))
                .collect()
        })
        .collect();

    // GRU sweep
    let mut hidden = Vec::with_capacity(t + 1);
    hidden.push(vec![0.0; config.hidden_dim]);
    let (mut zs, mut rs, mut hhats) =
        (Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t));
    for e_j in &e {
        let (h, z, r, hhat) = gru_step(params, hidden.last().unwrap(), e_j);
        hidden.push(h);
        zs.push(z);
        rs.push(r);
        hhats.push(hhat);
    }

    let repr = session_representation(params, config, &hidden)?;
    let c_drop: Vec<f64> =
        repr.c.iter().zip(masks.repr.as_slice()).map(|(&c, &m)| c * m).collect();
    let (g, prediction) = decode(params, config, &c_drop);

    Ok(Encoded {
        prefix: prefix.to_vec(),
        e,
        z: zs,
        r: rs,
        hhat: hhats,
        hidden,
        repr,
        c_drop,
        g,
        prediction,
    })
}

/// Full forward pass with caller-supplied masks; the masks' embed width must
/// match the truncated prefix length.
pub fn forward(
    params: &NarmParams,
    config: &NarmConfig,
    prefix: &[u32],
    label: u32,
    masks: DropoutMasks,
) -> Result<ForwardPass> {
    check_indices(config, prefix, Some(label))?;
    let enc = run_forward(params, config, prefix, &masks)?;
    let loss = nll_loss(&enc.prediction.probs, label)?;
    Ok(ForwardPass {
        prefix: enc.prefix,
        label,
        e: enc.e,
        z: enc.z,
        r: enc.r,
        hhat: enc.hhat,
        hidden: enc.hidden,
        att: enc.repr.att,
        alpha_raw: enc.repr.alpha_raw,
        alpha: enc.repr.alpha,
        c: enc.repr.c,
        c_drop: enc.c_drop,
        g: enc.g,
        scores: enc.prediction.scores,
        probs: enc.prediction.probs,
        masks,
        loss,
    })
}

/// Forward pass without dropout (masks of ones) — evaluation path.
pub fn forward_eval(
    params: &NarmParams,
    config: &NarmConfig,
    prefix: &[u32],
    label: u32,
) -> Result<ForwardPass> {
    let t = prefix.len().min(config.truncation).max(1);
    forward(params, config, prefix, label, DropoutMasks::ones(config, t))
}

/// Forward pass with freshly sampled dropout masks — training path.
pub fn forward_train(
    params: &NarmParams,
    config: &NarmConfig,
    prefix: &[u32],
    label: u32,
    rng: &mut RngState,
) -> Result<ForwardPass> {
    let t = prefix.len().min(config.truncation).max(1);
    forward(params, config, prefix, label, DropoutMasks::sample(config, t, rng))
}

/// Score every item against a prefix (no dropout, no label).
pub fn predict(params: &NarmParams, config: &NarmConfig, prefix: &[u32]) -> Result<Prediction> {
    check_indices(config, prefix, None)?;
    let t = prefix.len().min(config.truncation).max(1);
    let enc = run_forward(params, config, prefix, &DropoutMasks::ones(config, t))?;
    Ok(enc.prediction)
}

/// Adapter so a trained model plugs into the ranking evaluator.
pub struct NarmScorer<'a> {
    pub params: &'a NarmParams,
    pub config: &'a NarmConfig,
}

impl Scorer for NarmScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn score(&self, prefix: &[u32]) -> Vec<f64> {
        predict(self.params, self.config, prefix)
            .map(|p| p.scores)
            .expect("valid prefix for scoring")
    }
}
