//! Layered sentence encoder producing unit-norm embeddings, with the masked
//! language modelling objective used for pretraining and layer stacking for
//! staged growth.
//!
//! Pipeline per sequence: token embedding lookup, `L` residual blocks
//! `h <- h + tanh(W h + b)` applied independently at every position, pooling,
//! output projection, L2 normalization. All gradients are analytic.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::vocab::{self, TokenSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// Mean of the final hidden states over content positions.
    Mean,
    /// Final hidden state of the leading CLS position.
    Cls,
}

impl Pooling {
    pub(crate) fn code(self) -> u64 {
        match self {
            Pooling::Mean => 0,
            Pooling::Cls => 1,
        }
    }

    pub(crate) fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Pooling::Mean),
            1 => Some(Pooling::Cls),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub pooling: Pooling,
}

impl EncoderConfig {
    /// Toy-scale defaults: two layers of width 32.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 32,
            num_layers: 2,
            max_seq_len: 64,
            embed_dim: 32,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= vocab::NUM_SPECIAL
            || self.hidden_dim == 0
            || self.num_layers == 0
            || self.max_seq_len < 3
            || self.embed_dim == 0
        {
            return Err(Error::invalid(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    fn random(out_dim: usize, in_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("sized"),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.weight.matvec(x, y);
        linalg::axpy(1.0, &self.bias, y);
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// into `grad`, and adds `W^T dy` into `dx` when given.
    #[inline]
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine, dx: Option<&mut [f64]>) {
        grad.weight.add_outer(dy, x);
        linalg::axpy(1.0, dy, &mut grad.bias);
        if let Some(dx) = dx {
            self.weight.matvec_transposed_acc(dy, dx);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embeddings: Matrix,
    pub layers: Vec<Affine>,
    pub output_projection: Affine,
    /// Transform of the MLM input; the output layer is tied to the token
    /// embeddings.
    pub mlm_head: Affine,
    pub mlm_bias: Vec<f64>,
}

impl EncoderParams {
    /// Seeded random initialization. The MLM head starts at zero so that an
    /// untrained model predicts the uniform distribution.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let emb = (0..config.vocab_size * d).map(|_| normal.sample(&mut rng)).collect();
        let layer_std = 0.5 / (d as f64).sqrt();
        let layers = (0..config.num_layers)
            .map(|_| Affine::random(d, d, layer_std, &mut rng))
            .collect();
        let output_projection = Affine::random(config.embed_dim, d, 1.0 / (d as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            token_embeddings: Matrix::from_vec(config.vocab_size, d, emb)?,
            layers,
            output_projection,
            mlm_head: Affine::zeros(d, d),
            mlm_bias: vec![0.0; config.vocab_size],
        })
    }

    /// Same shapes as `self`, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        Self::init_zeros(self.config)
    }

    /// All-zero parameters for `config` (not validated).
    pub fn init_zeros(c: EncoderConfig) -> Self {
        Self {
            config: c,
            token_embeddings: Matrix::zeros(c.vocab_size, c.hidden_dim),
            layers: (0..c.num_layers)
                .map(|_| Affine::zeros(c.hidden_dim, c.hidden_dim))
                .collect(),
            output_projection: Affine::zeros(c.embed_dim, c.hidden_dim),
            mlm_head: Affine::zeros(c.hidden_dim, c.hidden_dim),
            mlm_bias: vec![0.0; c.vocab_size],
        }
    }

    /// Parameter tensors in their canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.token_embeddings.as_slice()];
        for l in &self.layers {
            v.push(l.weight.as_slice());
            v.push(&l.bias);
        }
        v.push(self.output_projection.weight.as_slice());
        v.push(&self.output_projection.bias);
        v.push(self.mlm_head.weight.as_slice());
        v.push(&self.mlm_head.bias);
        v.push(&self.mlm_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.token_embeddings.as_mut_slice()];
        for l in &mut self.layers {
            v.push(l.weight.as_mut_slice());
            v.push(&mut l.bias);
        }
        v.push(self.output_projection.weight.as_mut_slice());
        v.push(&mut self.output_projection.bias);
        v.push(self.mlm_head.weight.as_mut_slice());
        v.push(&mut self.mlm_head.bias);
        v.push(&mut self.mlm_bias);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Element-wise `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &EncoderParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            linalg::axpy(alpha, b, a);
        }
    }

    pub fn dot(&self, other: &EncoderParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| linalg::dot(a, b))
            .sum()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Positions that carry content: everything except PAD, CLS and SEP. A
/// sequence with no content falls back to all non-PAD positions.
pub fn content_positions(ids: &[u32]) -> Vec<usize> {
    let content: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| !matches!(id, vocab::PAD | vocab::CLS | vocab::SEP))
        .map(|(i, _)| i)
        .collect();
    if content.is_empty() {
        ids.iter()
            .enumerate()
            .filter(|(_, &id)| id != vocab::PAD)
            .map(|(i, _)| i)
            .collect()
    } else {
        content
    }
}

fn pooled_positions(ids: &[u32], pooling: Pooling) -> Vec<usize> {
    match pooling {
        Pooling::Mean => content_positions(ids),
        Pooling::Cls => vec![0],
    }
}

/// Hidden states of the positions the encoder actually needs, with every
/// intermediate kept for the backward pass.
#[derive(Debug, Clone)]
struct HiddenStates {
    positions: Vec<usize>,
    /// `states[l][p]`: input to layer `l` at the `p`-th tracked position;
    /// `states[L]` holds the final hidden states.
    states: Vec<Vec<Vec<f64>>>,
    /// `activations[l][p]`: `tanh(W_l h + b_l)`.
    activations: Vec<Vec<Vec<f64>>>,
}

impl HiddenStates {
    fn forward(params: &EncoderParams, ids: &[u32], positions: Vec<usize>) -> Self {
        let d = params.config.hidden_dim;
        let mut states = Vec::with_capacity(params.layers.len() + 1);
        let mut activations = Vec::with_capacity(params.layers.len());
        let first: Vec<Vec<f64>> = positions
            .iter()
            .map(|&p| params.token_embeddings.row(ids[p] as usize).to_vec())
            .collect();
        states.push(first);
        for layer in &params.layers {
            let prev = states.last().unwrap();
            let mut acts = Vec::with_capacity(prev.len());
            let mut next = Vec::with_capacity(prev.len());
            for h in prev {
                let mut a = vec![0.0; d];
                layer.apply(h, &mut a);
                a.iter_mut().for_each(|v| *v = v.tanh());
                let out: Vec<f64> = h.iter().zip(&a).map(|(x, t)| x + t).collect();
                acts.push(a);
                next.push(out);
            }
            activations.push(acts);
            states.push(next);
        }
        Self {
            positions,
            states,
            activations,
        }
    }

    fn last(&self) -> &[Vec<f64>] {
        self.states.last().unwrap()
    }

    /// `d_last[p]` is the gradient w.r.t. the final hidden state of tracked
    /// position `p`. Consumes it while propagating to the token embeddings.
    fn backward(&self, params: &EncoderParams, ids: &[u32], mut d_last: Vec<Vec<f64>>, grads: &mut EncoderParams) {
        let d = params.config.hidden_dim;
        let mut pre = vec![0.0; d];
        for l in (0..params.layers.len()).rev() {
            let layer = &params.layers[l];
            for (p, dh) in d_last.iter_mut().enumerate() {
                let t = &self.activations[l][p];
                for ((g, &dhi), &ti) in pre.iter_mut().zip(dh.iter()).zip(t) {
                    *g = dhi * (1.0 - ti * ti);
                }
                // residual path keeps dh; affine path adds W^T pre
                layer.backward(&self.states[l][p], &pre, &mut grads.layers[l], Some(dh));
            }
        }
        for (p, dh) in d_last.iter().enumerate() {
            let row = ids[self.positions[p]] as usize;
            linalg::axpy(1.0, dh, grads.token_embeddings.row_mut(row));
        }
    }
}

/// Forward pass for one sequence up to the (unnormalized) projected vector.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    ids: Vec<u32>,
    hidden: HiddenStates,
    pooled: Vec<f64>,
}

fn encode_forward(params: &EncoderParams, ids: &[u32]) -> Result<(Vec<f64>, EncodeCache)> {
    params.check_ids(ids)?;
    let positions = pooled_positions(ids, params.config.pooling);
    let hidden = HiddenStates::forward(params, ids, positions);
    let d = params.config.hidden_dim;
    let mut pooled = vec![0.0; d];
    let n = hidden.positions.len() as f64;
    for h in hidden.last() {
        linalg::axpy(1.0 / n, h, &mut pooled);
    }
    let mut raw = vec![0.0; params.config.embed_dim];
    params.output_projection.apply(&pooled, &mut raw);
    Ok((
        raw,
        EncodeCache {
            ids: ids.to_vec(),
            hidden,
            pooled,
        },
    ))
}

fn encode_backward(params: &EncoderParams, cache: &EncodeCache, d_raw: &[f64], grads: &mut EncoderParams) {
    let d = params.config.hidden_dim;
    let mut d_pooled = vec![0.0; d];
    params
        .output_projection
        .backward(&cache.pooled, d_raw, &mut grads.output_projection, Some(&mut d_pooled));
    let n = cache.hidden.positions.len() as f64;
    let d_last = (0..cache.hidden.positions.len())
        .map(|_| d_pooled.iter().map(|v| v / n).collect())
        .collect();
    cache.hidden.backward(params, &cache.ids, d_last, grads);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
}

pub fn encode(params: &EncoderParams, tokens: &TokenSequence) -> Result<SentenceEmbedding> {
    let (mut raw, _) = encode_forward(params, &tokens.ids)?;
    linalg::normalize(&mut raw).map_err(|_| Error::numerical("encoder produced a zero vector"))?;
    Ok(SentenceEmbedding { vector: raw })
}

/// Row `i` is `encode(batch[i])`.
pub fn encode_batch(params: &EncoderParams, batch: &[TokenSequence]) -> Result<Matrix> {
    let mut out = Matrix::zeros(batch.len(), params.config.embed_dim);
    for (i, t) in batch.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&encode(params, t)?.vector);
    }
    Ok(out)
}

/// Unnormalized projected vectors for a batch plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub raw: Matrix,
    caches: Vec<EncodeCache>,
}

pub fn forward_batch<'a, I>(params: &EncoderParams, batch: I) -> Result<BatchForward>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut rows = Vec::new();
    let mut caches = Vec::new();
    for ids in batch {
        let (raw, cache) = encode_forward(params, ids)?;
        rows.push(raw);
        caches.push(cache);
    }
    let raw = if rows.is_empty() {
        Matrix::zeros(0, params.config.embed_dim)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(BatchForward { raw, caches })
}

/// Accumulates into `grads` the parameter gradient for `d_raw`, the gradient
/// w.r.t. the unnormalized rows of `forward.raw`.
pub fn backward_batch(params: &EncoderParams, forward: &BatchForward, d_raw: &Matrix, grads: &mut EncoderParams) {
    for (i, cache) in forward.caches.iter().enumerate() {
        encode_backward(params, cache, d_raw.row(i), grads);
    }
}

/// Grows a trained `L`-layer encoder to `target_layers` by repeating its layer
/// stack: output layer `j` copies input layer `j mod L`.
pub fn stack_grow(params: &EncoderParams, target_layers: usize) -> Result<EncoderParams> {
    let l = params.layers.len();
    if target_layers == 0 || !target_layers.is_multiple_of(l) {
        return Err(Error::invalid(format!(
            "target depth {target_layers} is not a multiple of current depth {l}"
        )));
    }
    let mut out = params.clone();
    out.layers = (0..target_layers).map(|j| params.layers[j % l].clone()).collect();
    out.config.num_layers = target_layers;
    Ok(out)
}

/// Layer counts for the three-stage growth schedule `L/4 -> L/2 -> L`.
pub fn progressive_schedule(num_layers: usize) -> Result<[usize; 3]> {
    if num_layers < 4 || !num_layers.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "three-stage growth needs a depth divisible by 4, got {num_layers}"
        )));
    }
    Ok([num_layers / 4, num_layers / 2, num_layers])
}

pub const DEFAULT_MASK_RATE: f64 = 0.2;
pub const DEFAULT_MASK_CAP: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub rate: f64,
    pub cap: usize,
}

impl Default for MaskPlan {
    fn default() -> Self {
        Self {
            rate: DEFAULT_MASK_RATE,
            cap: DEFAULT_MASK_CAP,
        }
    }
}

impl MaskPlan {
    /// `min(ceil(rate * content_len), cap)`.
    pub fn count(&self, content_len: usize) -> usize {
        crate::corpus::fraction_count(self.rate, content_len).min(self.cap)
    }
}

/// A sequence with some positions replaced by MASK, and the original ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Replaces `plan.count(content)` randomly chosen content positions with MASK.
pub fn mask_sequence<R: Rng>(tokens: &TokenSequence, plan: &MaskPlan, rng: &mut R) -> MaskedSequence {
    let content: Vec<usize> = tokens
        .ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| !matches!(id, vocab::PAD | vocab::CLS | vocab::SEP))
        .map(|(i, _)| i)
        .collect();
    let n = plan.count(content.len());
    let mut picked: Vec<usize> = sample(rng, content.len(), n).into_iter().map(|i| content[i]).collect();
    picked.sort_unstable();
    let mut ids = tokens.ids.clone();
    let targets = picked.iter().map(|&p| ids[p]).collect();
    for &p in &picked {
        ids[p] = vocab::MASK;
    }
    MaskedSequence {
        ids,
        positions: picked,
        targets,
    }
}

/// `[CLS] src [SEP] tgt [SEP]` for translation language modelling. No language
/// marker is inserted. When the pair does not fit, tokens are dropped from
/// the end of the longer side. An empty target gives `[CLS] src [SEP]`.
pub fn tlm_sequence(pair: &SentencePair, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::invalid(format!("max_len must be at least 3, got {max_len}")));
    }
    let mut src = vocab.content_ids(&pair.src.text);
    let mut tgt = vocab.content_ids(&pair.tgt.text);
    let seps = if src.is_empty() || tgt.is_empty() { 2 } else { 3 };
    while src.len() + tgt.len() + seps > max_len {
        if src.len() >= tgt.len() {
            src.pop();
        } else {
            tgt.pop();
        }
    }
    let mut ids = Vec::with_capacity(src.len() + tgt.len() + 3);
    ids.push(vocab::CLS);
    for segment in [src, tgt].into_iter().filter(|s| !s.is_empty()) {
        ids.extend(segment);
        ids.push(vocab::SEP);
    }
    if ids.len() < 3 {
        return Err(Error::invalid("translation pair has no content tokens"));
    }
    Ok(TokenSequence {
        ids,
        lang: format!("{}-{}", pair.src.lang, pair.tgt.lang),
        surface_len: pair.src.char_len() + pair.tgt.char_len(),
    })
}

pub fn tlm_batch<R: Rng>(
    pair: &SentencePair,
    vocab: &Vocab,
    max_len: usize,
    plan: &MaskPlan,
    rng: &mut R,
) -> Result<MaskedSequence> {
    Ok(mask_sequence(&tlm_sequence(pair, vocab, max_len)?, plan, rng))
}

/// Mean cross-entropy of the MLM head at every masked position of the batch,
/// and its gradient.
///
/// The prediction at masked position `t` reads `h_t + c`, where `c` is the
/// mean final hidden state over the sequence's content positions; without it
/// every masked position would see only the MASK embedding. Logits are
/// `E (W u + b) + b_v` with `E` the token embedding table.
pub fn mlm_loss_and_grad(params: &EncoderParams, batch: &[MaskedSequence]) -> Result<(f64, EncoderParams)> {
    mlm_impl(params, batch, true).map(|(l, g)| (l, g.expect("requested")))
}

pub fn mlm_loss(params: &EncoderParams, batch: &[MaskedSequence]) -> Result<f64> {
    mlm_impl(params, batch, false).map(|(l, _)| l)
}

fn mlm_impl(
    params: &EncoderParams,
    batch: &[MaskedSequence],
    with_grad: bool,
) -> Result<(f64, Option<EncoderParams>)> {
    let total: usize = batch.iter().map(|m| m.positions.len()).sum();
    if total == 0 {
        return Err(Error::invalid("batch has no masked positions"));
    }
    let c = params.config;
    let mut grads = with_grad.then(|| params.zeros_like());
    let scale = 1.0 / total as f64;
    let mut loss = 0.0;
    let mut u = vec![0.0; c.hidden_dim];
    let mut q = vec![0.0; c.hidden_dim];
    let mut logits = vec![0.0; c.vocab_size];
    let mut dq = vec![0.0; c.hidden_dim];
    for m in batch {
        params.check_ids(&m.ids)?;
        if m.positions.is_empty() {
            continue;
        }
        let positions = content_positions(&m.ids);
        let slot = |p: usize| {
            positions
                .binary_search(&p)
                .map_err(|_| Error::invalid(format!("masked position {p} is not a content position")))
        };
        let hidden = HiddenStates::forward(params, &m.ids, positions.clone());
        let n = positions.len() as f64;
        let mut ctx = vec![0.0; c.hidden_dim];
        for h in hidden.last() {
            linalg::axpy(1.0 / n, h, &mut ctx);
        }
        let mut d_last = vec![vec![0.0; c.hidden_dim]; positions.len()];
        let mut d_ctx = vec![0.0; c.hidden_dim];
        for (&p, &target) in m.positions.iter().zip(&m.targets) {
            let s = slot(p)?;
            for ((ui, &hi), &ci) in u.iter_mut().zip(&hidden.last()[s]).zip(&ctx) {
                *ui = hi + ci;
            }
            params.mlm_head.apply(&u, &mut q);
            for (v, l) in logits.iter_mut().enumerate() {
                *l = linalg::dot(params.token_embeddings.row(v), &q) + params.mlm_bias[v];
            }
            let lse = linalg::log_sum_exp(&logits);
            loss += (lse - logits[target as usize]) * scale;
            if let Some(g) = grads.as_mut() {
                dq.iter_mut().for_each(|v| *v = 0.0);
                for (v, &l) in logits.iter().enumerate() {
                    let dl = ((l - lse).exp() - if v == target as usize { 1.0 } else { 0.0 }) * scale;
                    g.mlm_bias[v] += dl;
                    linalg::axpy(dl, &q, g.token_embeddings.row_mut(v));
                    linalg::axpy(dl, params.token_embeddings.row(v), &mut dq);
                }
                let mut du = vec![0.0; c.hidden_dim];
                params.mlm_head.backward(&u, &dq, &mut g.mlm_head, Some(&mut du));
                linalg::axpy(1.0, &du, &mut d_last[s]);
                linalg::axpy(1.0, &du, &mut d_ctx);
            }
        }
        if let Some(g) = grads.as_mut() {
            for dh in d_last.iter_mut() {
                linalg::axpy(1.0 / n, &d_ctx, dh);
            }
            hidden.backward(params, &m.ids, d_last, g);
        }
    }
    if !loss.is_finite() {
        return Err(Error::numerical(format!("MLM loss is {loss}")));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            hidden_dim: 5,
            num_layers: 2,
            max_seq_len: 10,
            embed_dim: 4,
            pooling: Pooling::Mean,
        }
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            lang: "xx".into(),
            surface_len: 0,
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = linalg::norm(a).max(linalg::norm(b)).max(1e-8);
        diff / scale
    }

    fn flat(p: &EncoderParams) -> Vec<f64> {
        p.tensors().concat()
    }

    fn numeric_grad(params: &EncoderParams, f: impl Fn(&EncoderParams) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut p = params.clone();
        let mut out = Vec::new();
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        for (t, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let orig = p.tensors()[t][i];
                p.tensors_mut()[t][i] = orig + h;
                let up = f(&p);
                p.tensors_mut()[t][i] = orig - h;
                let down = f(&p);
                p.tensors_mut()[t][i] = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
        out
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let p = EncoderParams::init(small_config(), 7).unwrap();
        let a = encode(&p, &seq(&[vocab::CLS, 5, 6, 7, vocab::SEP])).unwrap();
        let b = encode(&p, &seq(&[vocab::CLS, 5, 6, 7, vocab::SEP])).unwrap();
        assert!((linalg::norm(&a.vector) - 1.0).abs() < 1e-12);
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_pipeline_returns_token_row() {
        let mut cfg = small_config();
        cfg.embed_dim = cfg.hidden_dim;
        let mut p = EncoderParams::init(cfg, 1).unwrap();
        for l in &mut p.layers {
            *l = Affine::zeros(cfg.hidden_dim, cfg.hidden_dim);
        }
        p.output_projection = Affine::identity(cfg.hidden_dim);
        let e = encode(&p, &seq(&[vocab::CLS, 9, vocab::SEP])).unwrap();
        let mut expect = p.token_embeddings.row(9).to_vec();
        linalg::normalize(&mut expect).unwrap();
        for (a, b) in e.vector.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cls_pooling_ignores_content() {
        let mut cfg = small_config();
        cfg.pooling = Pooling::Cls;
        let p = EncoderParams::init(cfg, 3).unwrap();
        let a = encode(&p, &seq(&[vocab::CLS, 5, vocab::SEP])).unwrap();
        let b = encode(&p, &seq(&[vocab::CLS, 8, 9, vocab::SEP])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_after_sep_is_ignored() {
        let p = EncoderParams::init(small_config(), 7).unwrap();
        let a = encode(&p, &seq(&[vocab::CLS, 5, 6, vocab::SEP])).unwrap();
        let b = encode(&p, &seq(&[vocab::CLS, 5, 6, vocab::SEP, vocab::PAD, vocab::PAD])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_projection_is_an_error() {
        let mut p = EncoderParams::init(small_config(), 7).unwrap();
        p.output_projection = Affine::zeros(4, 5);
        let err = encode(&p, &seq(&[vocab::CLS, 5, vocab::SEP])).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn rejects_bad_ids_and_lengths() {
        let p = EncoderParams::init(small_config(), 7).unwrap();
        assert!(encode(&p, &seq(&[vocab::CLS, 99, vocab::SEP])).is_err());
        assert!(encode(&p, &seq(&[5; 11])).is_err());
    }

    #[test]
    fn batch_rows_match_single_encodes() {
        let p = EncoderParams::init(small_config(), 11).unwrap();
        let batch: Vec<TokenSequence> = (0..8u32)
            .map(|i| seq(&[vocab::CLS, 5 + i % 7, 5 + (i * 3) % 7, vocab::SEP]))
            .collect();
        let m = encode_batch(&p, &batch).unwrap();
        for (i, t) in batch.iter().enumerate() {
            assert_eq!(m.row(i), encode(&p, t).unwrap().vector.as_slice());
            assert!((linalg::norm(m.row(i)) - 1.0).abs() < 1e-12);
        }
        let mut rev = batch.clone();
        rev.reverse();
        let r = encode_batch(&p, &rev).unwrap();
        for i in 0..batch.len() {
            assert_eq!(r.row(i), m.row(batch.len() - 1 - i));
        }
        assert_eq!(encode_batch(&p, &batch[..1]).unwrap().row(0), m.row(0));
    }

    #[test]
    fn encode_gradient_matches_finite_differences() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        let ids = [vocab::CLS, 5, 6, 5, 11, vocab::SEP];
        let weights = [0.3, -1.2, 0.7, 0.25];
        let f = |p: &EncoderParams| {
            let (raw, _) = encode_forward(p, &ids).unwrap();
            raw.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = encode_forward(&p, &ids).unwrap();
        let mut g = p.zeros_like();
        encode_backward(&p, &cache, &weights, &mut g);
        let num = numeric_grad(&p, f);
        assert!(rel_err(&flat(&g), &num) < 1e-7);
    }

    #[test]
    fn stack_grow_copies_layers() {
        let mut cfg = small_config();
        cfg.num_layers = 1;
        let p = EncoderParams::init(cfg, 2).unwrap();
        let g = stack_grow(&p, 2).unwrap();
        assert_eq!(g.layers.len(), 2);
        assert_eq!(g.config.num_layers, 2);
        assert_eq!(g.layers[0], p.layers[0]);
        assert_eq!(g.layers[1], p.layers[0]);
        assert_eq!(g.token_embeddings, p.token_embeddings);
        assert_eq!(g.mlm_head, p.mlm_head);
        assert_eq!(g.mlm_bias, p.mlm_bias);
        assert_eq!(stack_grow(&p, 1).unwrap(), p);
        let p2 = stack_grow(&p, 2).unwrap();
        assert!(stack_grow(&p2, 3).is_err());
        let p3 = stack_grow(&p2, 6).unwrap();
        for j in 0..6 {
            assert_eq!(p3.layers[j], p2.layers[j % 2]);
        }
    }

    #[test]
    fn twelve_layer_schedule() {
        assert_eq!(progressive_schedule(12).unwrap(), [3, 6, 12]);
        assert!(progressive_schedule(6).is_err());
    }

    #[test]
    fn mask_counts() {
        let plan = MaskPlan::default();
        assert_eq!(plan.count(500), 80);
        assert_eq!(plan.count(10), 2);
        assert_eq!(plan.count(1), 1);
        assert_eq!(plan.count(0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ids = vec![vocab::CLS];
        ids.extend(std::iter::repeat_n(7, 500));
        ids.push(vocab::SEP);
        let m = mask_sequence(&seq(&ids), &plan, &mut rng);
        assert_eq!(m.positions.len(), 80);
        assert_eq!(m.ids.iter().filter(|&&i| i == vocab::MASK).count(), 80);
        assert!(m.targets.iter().all(|&t| t == 7));
        assert!(!m.positions.contains(&0) && !m.positions.contains(&501));
    }

    #[test]
    fn untrained_head_is_uniform() {
        let p = EncoderParams::init(small_config(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch: Vec<MaskedSequence> = (0..4u32)
            .map(|i| mask_sequence(&seq(&[vocab::CLS, 5 + i, 6, 7 + i, 8, vocab::SEP]), &MaskPlan::default(), &mut rng))
            .collect();
        let loss = mlm_loss(&p, &batch).unwrap();
        assert!((loss - (12f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mlm_gradient_matches_finite_differences() {
        let mut p = EncoderParams::init(small_config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // a non-zero head so every parameter receives gradient
        for v in p.mlm_head.weight.as_mut_slice().iter_mut().chain(&mut p.mlm_bias) {
            *v = rng.gen_range(-0.5..0.5);
        }
        let plan = MaskPlan { rate: 0.4, cap: 80 };
        let batch: Vec<MaskedSequence> = [[5u32, 6, 7, 8], [9, 10, 11, 5], [6, 6, 8, 10]]
            .iter()
            .map(|c| {
                let mut ids = vec![vocab::CLS];
                ids.extend(c);
                ids.push(vocab::SEP);
                mask_sequence(&seq(&ids), &plan, &mut rng)
            })
            .collect();
        let (_, g) = mlm_loss_and_grad(&p, &batch).unwrap();
        let num = numeric_grad(&p, |q| mlm_loss(q, &batch).unwrap());
        assert!(rel_err(&flat(&g), &num) < 1e-7);
    }

    #[test]
    fn mlm_needs_masks() {
        let p = EncoderParams::init(small_config(), 9).unwrap();
        let m = MaskedSequence {
            ids: vec![vocab::CLS, 5, vocab::SEP],
            positions: vec![],
            targets: vec![],
        };
        assert!(mlm_loss(&p, &[m]).is_err());
    }

    #[test]
    fn tlm_layout() {
        let v = Vocab::from_pieces(["a", "b"]).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        let pair = SentencePair::new(Sentence::new("1", "xx", "a"), Sentence::new("2", "yy", "b"));
        let t = tlm_sequence(&pair, &v, 16).unwrap();
        assert_eq!(t.ids, vec![vocab::CLS, a, vocab::SEP, b, vocab::SEP]);

        let empty_tgt = SentencePair::new(Sentence::new("1", "xx", "a b"), Sentence::new("2", "yy", ""));
        assert_eq!(
            tlm_sequence(&empty_tgt, &v, 16).unwrap().ids,
            v.tokenize("a b", 16).unwrap().ids
        );

        let both_empty = SentencePair::new(Sentence::new("1", "xx", ""), Sentence::new("2", "yy", ""));
        assert!(tlm_sequence(&both_empty, &v, 16).is_err());

        let long = SentencePair::new(Sentence::new("1", "xx", "a a a a a a"), Sentence::new("2", "yy", "b b"));
        let t = tlm_sequence(&long, &v, 7).unwrap();
        assert_eq!(t.ids.len(), 7);
        assert_eq!(t.ids, vec![vocab::CLS, a, a, vocab::SEP, b, b, vocab::SEP]);
        // only the five specials plus content pieces ever appear
        assert!(t.ids.iter().all(|&id| id == vocab::CLS || id == vocab::SEP || id == a || id == b));
    }
}
