//! The preference-ratio network `s(x_t, t, u)`.
//!
//! Items, timesteps and the non-preference user live in learned tables. A
//! user history is encoded by causal self-attention blocks with rotary
//! positions; the encoding is concatenated with the embeddings of `x_t` and
//! `t`, passed through a two-layer GELU head to give `h`, and the score of
//! item `y` is `⟨emb(y), h⟩`. The score of `x_t` itself is pinned to zero.
//!
//! Gradients are hand-derived. Batches are split into fixed-size chunks that
//! are reduced in order, so results do not depend on the rayon thread count.

mod adam;
mod checkpoint;
mod encoder;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{Block, Rope};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fading::{FadingMatrix, NonPreferenceState};
use crate::losses::{self, SettingKind};
use crate::schedule::Schedule;
use encoder::{block_backward, block_forward, BlockCache};
use tensor::{axpy, gelu, gelu_grad, Tensor};

/// Longest history the encoder accepts.
pub const MAX_HISTORY: usize = 10;

/// Examples per gradient chunk. Chunks are the unit of parallel work and are
/// summed in order.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of real items `N`.
    pub n_items: usize,
    pub setting: SettingKind,
    pub dim: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    /// Number of timestep intervals `T`; the time table has `T + 1` rows.
    pub steps: usize,
}

impl ModelConfig {
    pub fn new(n_items: usize, setting: SettingKind, dim: usize, steps: usize) -> Self {
        Self {
            n_items,
            setting,
            dim,
            ffn_dim: 2 * dim,
            blocks: 1,
            steps,
        }
    }

    /// Corpus size `M`, counting the virtual item when present.
    pub fn corpus_size(&self) -> usize {
        self.setting.corpus_size(self.n_items)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigError(m.into()));
        if self.n_items < 2 {
            return bad("n_items must be at least 2");
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return bad("dim must be a positive even number");
        }
        if self.ffn_dim == 0 || self.blocks == 0 || self.steps == 0 {
            return bad("ffn_dim, blocks and steps must be positive");
        }
        if let SettingKind::Hybrid { n_lambda } = self.setting {
            if n_lambda == 0 {
                return bad("n_lambda must be positive");
            }
        }
        Ok(())
    }
}

/// Every learnable tensor. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub item_emb: Tensor,
    pub time_emb: Tensor,
    pub nonpref: Tensor,
    pub blocks: Vec<Block>,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
    /// Adaptive non-preference logits `θ`; unused by other settings.
    pub logits: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(&t.shape);
        Self {
            item_emb: z(&self.item_emb),
            time_emb: z(&self.time_emb),
            nonpref: z(&self.nonpref),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            head_w1: z(&self.head_w1),
            head_b1: z(&self.head_b1),
            head_w2: z(&self.head_w2),
            head_b2: z(&self.head_b2),
            logits: z(&self.logits),
        }
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("item_emb".to_string(), &self.item_emb),
            ("time_emb".to_string(), &self.time_emb),
            ("nonpref".to_string(), &self.nonpref),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(
                b.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("block{i}.{n}"), t)),
            );
        }
        out.extend([
            ("head.w1".to_string(), &self.head_w1),
            ("head.b1".to_string(), &self.head_b1),
            ("head.w2".to_string(), &self.head_w2),
            ("head.b2".to_string(), &self.head_b2),
            ("logits".to_string(), &self.logits),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("item_emb".to_string(), &mut self.item_emb),
            ("time_emb".to_string(), &mut self.time_emb),
            ("nonpref".to_string(), &mut self.nonpref),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(
                b.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("block{i}.{n}"), t)),
            );
        }
        out.extend([
            ("head.w1".to_string(), &mut self.head_w1),
            ("head.b1".to_string(), &mut self.head_b1),
            ("head.w2".to_string(), &mut self.head_w2),
            ("head.b2".to_string(), &mut self.head_b2),
            ("logits".to_string(), &mut self.logits),
        ]);
        out
    }

    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_scaled(b, scale);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}

/// A user as seen by the network.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserContext {
    /// Item indices, oldest first.
    pub history: Vec<usize>,
    /// Use the non-preference embedding `φ` and ignore `history`.
    pub is_nonpref: bool,
}

impl UserContext {
    pub fn new(history: Vec<usize>) -> Self {
        Self {
            history,
            is_nonpref: false,
        }
    }

    pub fn nonpref() -> Self {
        Self {
            history: Vec::new(),
            is_nonpref: true,
        }
    }
}

/// One faded training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ctx: UserContext,
    pub x0: usize,
    pub t_index: usize,
    pub x_t: usize,
}

/// Mean loss and gradients over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: f64,
    pub grads: Params,
    /// Examples whose history was read by the encoder.
    pub history_reads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    config: ModelConfig,
    pub params: Params,
    rope: Rope,
}

struct HeadCache {
    z: Vec<f64>,
    a: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl ScoreField {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (m, d) = (config.corpus_size(), config.dim);
        let item_emb = Tensor::normal(&[m, d], 0.02, rng);
        let time_emb = Tensor::normal(&[config.steps + 1, d], 0.02, rng);
        let nonpref = Tensor::normal(&[d], 0.02, rng);
        let blocks = (0..config.blocks)
            .map(|_| Block::init(d, config.ffn_dim, rng))
            .collect();
        let params = Params {
            item_emb,
            time_emb,
            nonpref,
            blocks,
            head_w1: Tensor::fan_in_uniform(&[d, 3 * d], rng),
            head_b1: Tensor::zeros(&[d]),
            head_w2: Tensor::fan_in_uniform(&[d, d], rng),
            head_b2: Tensor::zeros(&[d]),
            logits: Tensor::zeros(&[m]),
        };
        Ok(Self::from_params(config, params))
    }

    pub(crate) fn from_params(config: ModelConfig, params: Params) -> Self {
        Self {
            rope: Rope::new(MAX_HISTORY, config.dim),
            config,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn corpus_size(&self) -> usize {
        self.config.corpus_size()
    }

    /// The non-preference state the network trains against: `softmax(θ)` for
    /// the adaptive setting, the fixed state otherwise.
    pub fn target(&self) -> Result<NonPreferenceState> {
        match self.config.setting {
            SettingKind::Adaptive { virtual_item } => {
                NonPreferenceState::from_logits(&self.params.logits.data, virtual_item)
            }
            s => s.initial_state(self.config.n_items),
        }
    }

    fn check_context(&self, ctx: &UserContext) -> Result<()> {
        if ctx.is_nonpref {
            return Ok(());
        }
        if ctx.history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        if ctx.history.len() > MAX_HISTORY {
            return Err(Error::DimensionError(format!(
                "history of length {} exceeds {MAX_HISTORY}",
                ctx.history.len()
            )));
        }
        if let Some(&bad) = ctx.history.iter().find(|&&i| i >= self.config.n_items) {
            return Err(Error::DimensionError(format!(
                "history item {bad} is not a real item (N = {})",
                self.config.n_items
            )));
        }
        Ok(())
    }

    fn check_indices(&self, x_t: usize, t_index: usize) -> Result<()> {
        if x_t >= self.corpus_size() {
            return Err(Error::DimensionError(format!(
                "item {x_t} out of range for corpus {}",
                self.corpus_size()
            )));
        }
        if t_index > self.config.steps {
            return Err(Error::DimensionError(format!(
                "timestep {t_index} exceeds {}",
                self.config.steps
            )));
        }
        Ok(())
    }

    fn encode_forward(&self, history: &[usize]) -> (Vec<f64>, Vec<BlockCache>) {
        let mut x: Vec<Vec<f64>> = history
            .iter()
            .map(|&i| self.params.item_emb.row(i).to_vec())
            .collect();
        let n = x.len();
        let nb = self.params.blocks.len();
        let mut caches = Vec::with_capacity(nb);
        for (b, block) in self.params.blocks.iter().enumerate() {
            let start = if b + 1 == nb { n - 1 } else { 0 };
            let (out, cache) = block_forward(block, &self.rope, &x, start);
            caches.push(cache);
            x = out;
        }
        (x.pop().unwrap_or_default(), caches)
    }

    fn encode_backward(
        &self,
        history: &[usize],
        caches: &[BlockCache],
        du: &[f64],
        g: &mut Params,
    ) {
        let mut d_out = vec![du.to_vec()];
        for (b, cache) in caches.iter().enumerate().rev() {
            d_out = block_backward(
                &self.params.blocks[b],
                &self.rope,
                cache,
                &d_out,
                &mut g.blocks[b],
            );
        }
        for (row, &item) in d_out.iter().zip(history) {
            axpy(1.0, row, g.item_emb.row_mut(item));
        }
    }

    /// User representation: `φ` for the non-preference user, else the
    /// encoder's output at the last history position.
    pub fn encode_user(&self, ctx: &UserContext) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        if ctx.is_nonpref {
            return Ok(self.params.nonpref.data.clone());
        }
        Ok(self.encode_forward(&ctx.history).0)
    }

    fn head_forward(&self, x_t: usize, t_index: usize, u: &[f64]) -> HeadCache {
        let p = &self.params;
        let mut z = Vec::with_capacity(3 * self.config.dim);
        z.extend_from_slice(p.item_emb.row(x_t));
        z.extend_from_slice(p.time_emb.row(t_index));
        z.extend_from_slice(u);
        let a: Vec<f64> = p
            .head_w1
            .matvec(&z)
            .iter()
            .zip(&p.head_b1.data)
            .map(|(v, b)| v + b)
            .collect();
        let g: Vec<f64> = a.iter().map(|v| gelu(*v)).collect();
        let h = p
            .head_w2
            .matvec(&g)
            .iter()
            .zip(&p.head_b2.data)
            .map(|(v, b)| v + b)
            .collect();
        HeadCache { z, a, g, h }
    }

    fn scores_from_hidden(&self, h: &[f64], x_t: usize) -> Vec<f64> {
        let mut out = self.params.item_emb.matvec(h);
        out[x_t] = 0.0;
        out
    }

    /// Scores for every item given a precomputed user representation.
    pub fn score_with_user(&self, x_t: usize, t_index: usize, u: &[f64]) -> Result<Vec<f64>> {
        self.check_indices(x_t, t_index)?;
        if u.len() != self.config.dim {
            return Err(Error::DimensionError(format!(
                "user vector has length {}, expected {}",
                u.len(),
                self.config.dim
            )));
        }
        let head = self.head_forward(x_t, t_index, u);
        Ok(self.scores_from_hidden(&head.h, x_t))
    }

    /// `s(x_t, t, u)`, a length-`M` vector with `out[x_t] = 0`.
    pub fn score(&self, x_t: usize, t_index: usize, ctx: &UserContext) -> Result<Vec<f64>> {
        self.check_indices(x_t, t_index)?;
        let u = self.encode_user(ctx)?;
        self.score_with_user(x_t, t_index, &u)
    }

    /// Loss of one example, accumulating unscaled gradients into `g`.
    fn example_grad(
        &self,
        ex: &Example,
        schedule: &Schedule,
        include_beta: bool,
        target: &NonPreferenceState,
        g: &mut Params,
    ) -> Result<f64> {
        self.check_context(&ex.ctx)?;
        self.check_indices(ex.x_t, ex.t_index)?;
        let (u, caches) = if ex.ctx.is_nonpref {
            (self.params.nonpref.data.clone(), Vec::new())
        } else {
            self.encode_forward(&ex.ctx.history)
        };
        let head = self.head_forward(ex.x_t, ex.t_index, &u);
        let scores = self.scores_from_hidden(&head.h, ex.x_t);
        let setting = self.config.setting;
        let adaptive = matches!(setting, SettingKind::Adaptive { .. });
        let lg = losses::se_loss_grad(
            setting,
            ex.x0,
            ex.x_t,
            &scores,
            schedule.alpha_at(ex.t_index),
            if include_beta {
                schedule.beta_at(ex.t_index)
            } else {
                1.0
            },
            target,
            adaptive,
        )?;
        if let Some(dl) = &lg.d_logits {
            axpy(1.0, dl, &mut g.logits.data);
        }
        // scores: s_y = ⟨emb_y, h⟩ for y ≠ x_t
        let d = self.config.dim;
        let mut dh = vec![0.0; d];
        for (y, &ds) in lg.d_scores.iter().enumerate() {
            if ds == 0.0 || y == ex.x_t {
                continue;
            }
            axpy(ds, self.params.item_emb.row(y), &mut dh);
            axpy(ds, &head.h, g.item_emb.row_mut(y));
        }
        // head
        axpy(1.0, &dh, &mut g.head_b2.data);
        g.head_w2.outer_acc(&dh, &head.g);
        let mut dg = vec![0.0; d];
        self.params.head_w2.matvec_t_acc(&dh, &mut dg);
        let da: Vec<f64> = dg
            .iter()
            .zip(&head.a)
            .map(|(v, a)| v * gelu_grad(*a))
            .collect();
        axpy(1.0, &da, &mut g.head_b1.data);
        g.head_w1.outer_acc(&da, &head.z);
        let mut dz = vec![0.0; 3 * d];
        self.params.head_w1.matvec_t_acc(&da, &mut dz);
        axpy(1.0, &dz[..d], g.item_emb.row_mut(ex.x_t));
        axpy(1.0, &dz[d..2 * d], g.time_emb.row_mut(ex.t_index));
        let du = &dz[2 * d..];
        if ex.ctx.is_nonpref {
            axpy(1.0, du, &mut g.nonpref.data);
        } else {
            self.encode_backward(&ex.ctx.history, &caches, du, g);
        }
        Ok(lg.loss)
    }

    /// Mean closed-form loss over `batch` and its exact gradient with respect
    /// to every parameter.
    pub fn gradients(&self, batch: &[Example], schedule: &Schedule) -> Result<BatchGrad> {
        self.gradients_with(batch, schedule, true)
    }

    /// As [`gradients`](Self::gradients); with `include_beta = false` each
    /// example's loss drops its `β(t)` factor.
    pub fn gradients_with(
        &self,
        batch: &[Example],
        schedule: &Schedule,
        include_beta: bool,
    ) -> Result<BatchGrad> {
        if batch.is_empty() {
            return Err(Error::DataError("empty batch".into()));
        }
        if schedule.steps() != self.config.steps {
            return Err(Error::ConfigError(format!(
                "schedule has {} steps, model expects {}",
                schedule.steps(),
                self.config.steps
            )));
        }
        let target = self.target()?;
        FadingMatrix::rank1(target.clone()).ensure_process_ready()?;
        let partials: Vec<Result<(Params, f64, usize)>> = batch
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = self.params.zeros_like();
                let mut loss = 0.0;
                let mut reads = 0;
                for (k, ex) in chunk.iter().enumerate() {
                    let idx = c * GRAD_CHUNK + k;
                    let l = self
                        .example_grad(ex, schedule, include_beta, &target, &mut g)
                        .map_err(|e| match e {
                            Error::MagnitudeError(v) => Error::NumericalError(format!(
                                "example {idx}: score magnitude {v} out of range"
                            )),
                            other => other,
                        })?;
                    if !l.is_finite() {
                        return Err(Error::NumericalError(format!(
                            "example {idx}: non-finite loss {l}"
                        )));
                    }
                    loss += l;
                    reads += usize::from(!ex.ctx.is_nonpref);
                }
                Ok((g, loss, reads))
            })
            .collect();
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        let mut history_reads = 0;
        for part in partials {
            let (g, l, r) = part?;
            grads.add_scaled(&g, 1.0);
            loss += l;
            history_reads += r;
        }
        let inv = 1.0 / batch.len() as f64;
        for (_, t) in grads.named_mut() {
            t.data.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(BatchGrad {
            loss: loss * inv,
            grads,
            history_reads,
        })
    }

    /// Mean loss only (used by finite-difference checks).
    pub fn batch_loss(&self, batch: &[Example], schedule: &Schedule) -> Result<f64> {
        self.batch_loss_with(batch, schedule, true)
    }

    pub fn batch_loss_with(
        &self,
        batch: &[Example],
        schedule: &Schedule,
        include_beta: bool,
    ) -> Result<f64> {
        let target = self.target()?;
        let mut total = 0.0;
        for ex in batch {
            let scores = self.score(ex.x_t, ex.t_index, &ex.ctx)?;
            total += losses::se_loss_closed(
                self.config.setting,
                ex.x0,
                ex.x_t,
                &scores,
                schedule.alpha_at(ex.t_index),
                if include_beta {
                    schedule.beta_at(ex.t_index)
                } else {
                    1.0
                },
                &target,
            )?;
        }
        Ok(total / batch.len() as f64)
    }
}
