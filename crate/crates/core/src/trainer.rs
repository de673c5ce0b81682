//! Training loops: MLM/TLM pretraining with progressive stacking, and
//! dual-encoder fine-tuning on the bidirectional additive-margin loss.
//!
//! Both loops are step-driven structs. Every step draws its randomness from a
//! generator keyed on `(seed, step)`, so a run resumed from a checkpoint
//! replays the uninterrupted run exactly.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SentencePair};
use crate::encoder::{self, EncoderParams, MaskPlan, MaskedSequence};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{self, LossConfig};
use crate::negatives::{self, HardNegativeSet, NegativeScope};
use crate::vocab::{self, Vocab};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_STEPS: usize = 2000;

/// Adam moments, shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: EncoderParams,
    pub second: EncoderParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// Decoupled-weight-decay Adam with a learning rate decayed linearly from
/// `learning_rate` to zero over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.total_steps == 0 {
            return Err(Error::invalid("total steps must be positive"));
        }
        Ok(())
    }

    /// Rate used by the update numbered `step` (0-based).
    pub fn rate_at(&self, step: u64) -> f64 {
        let remaining = 1.0 - step as f64 / self.total_steps as f64;
        self.learning_rate * remaining.max(0.0)
    }
}

/// One AdamW update. Returns the learning rate used. On a non-finite
/// gradient or update, nothing is modified.
pub fn optimizer_step(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    state: &mut OptimizerState,
    opt: &AdamW,
) -> Result<f64> {
    if params.config != grads.config || params.config != state.first.config {
        return Err(Error::shape("parameter, gradient and moment shapes differ"));
    }
    let step = state.step;
    if !grads.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: "non-finite gradient".into(),
        });
    }
    let lr = opt.rate_at(step);
    let t = (step + 1) as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let mut new_params = params.clone();
    let mut new_first = state.first.clone();
    let mut new_second = state.second.clone();
    let g_all = grads.tensors();
    for (((p, m), v), g) in new_params
        .tensors_mut()
        .into_iter()
        .zip(new_first.tensors_mut())
        .zip(new_second.tensors_mut())
        .zip(g_all)
    {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + opt.weight_decay * p[i]);
        }
    }
    if !new_params.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: "update produced non-finite parameters".into(),
        });
    }
    *params = new_params;
    state.first = new_first;
    state.second = new_second;
    state.step += 1;
    Ok(lr)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub scale: f64,
    pub shards: usize,
    pub scope: NegativeScope,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: 0.0,
            margin: loss::DEFAULT_MARGIN,
            scale: loss::DEFAULT_SCALE,
            shards: 1,
            scope: NegativeScope::CrossShard,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.shards == 0 || !self.batch_size.is_multiple_of(self.shards) {
            return Err(Error::invalid(format!(
                "batch size {} is not divisible by {} shards",
                self.batch_size, self.shards
            )));
        }
        self.loss().validate()?;
        self.optimizer().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig::new(self.margin, self.scale)
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            total_steps: self.steps as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub pairs_seen: u64,
}

pub fn write_train_log<W: Write>(records: &[TrainRecord], mut w: W) -> Result<()> {
    for r in records {
        writeln!(w, "step={} loss={:.6} lr={:.6e} pairs_seen={}", r.step, r.loss, r.lr, r.pairs_seen)?;
    }
    Ok(())
}

struct TokenizedPair {
    src: Vec<u32>,
    tgt: Vec<u32>,
    negatives: Vec<Vec<u32>>,
}

/// Dual-encoder fine-tuning. Source and target sides go through the same
/// parameters.
pub struct DualEncoderTrainer {
    params: EncoderParams,
    state: OptimizerState,
    config: TrainConfig,
    data: Vec<TokenizedPair>,
}

impl DualEncoderTrainer {
    pub fn new(params: EncoderParams, vocab: &Vocab, pairs: &[SentencePair], config: TrainConfig) -> Result<Self> {
        let state = OptimizerState::new(&params);
        Self::resume(params, state, vocab, pairs, config, None)
    }

    /// Continues from `state`; its step count selects the next batch. With
    /// hard negatives, every source row also ranks its batch's mined
    /// negatives (single shard only).
    pub fn resume(
        params: EncoderParams,
        state: OptimizerState,
        vocab: &Vocab,
        pairs: &[SentencePair],
        config: TrainConfig,
        hard_negatives: Option<&HardNegativeSet>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != params.config.vocab_size {
            return Err(Error::invalid(format!(
                "vocabulary has {} entries, encoder expects {}",
                vocab.len(),
                params.config.vocab_size
            )));
        }
        if pairs.len() < config.batch_size {
            return Err(Error::invalid(format!(
                "{} training pairs cannot fill a batch of {}",
                pairs.len(),
                config.batch_size
            )));
        }
        if hard_negatives.is_some() && config.shards != 1 {
            return Err(Error::invalid("hard negatives are only supported with a single shard"));
        }
        if state.first.config != params.config {
            return Err(Error::shape("optimizer state does not match the encoder"));
        }
        let max_len = params.config.max_seq_len;
        let data = pairs
            .iter()
            .map(|p| {
                let negatives = match hard_negatives {
                    None => Vec::new(),
                    Some(set) => set
                        .per_source
                        .get(&p.src.id)
                        .ok_or_else(|| Error::Missing(format!("no mined negatives for source {:?}", p.src.id)))?
                        .iter()
                        .map(|n| vocab.tokenize_sentence(&n.sentence, max_len).map(|t| t.ids))
                        .collect::<Result<_>>()?,
                };
                Ok(TokenizedPair {
                    src: vocab.tokenize_sentence(&p.src, max_len)?.ids,
                    tgt: vocab.tokenize_sentence(&p.tgt, max_len)?.ids,
                    negatives,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            state,
            config,
            data,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.steps as u64
    }

    pub fn into_parts(self) -> (EncoderParams, OptimizerState) {
        (self.params, self.state)
    }

    /// Indices of the pairs in the batch for update `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut rng = step_rng(self.config.seed, step);
        sample(&mut rng, self.data.len(), self.config.batch_size).into_vec()
    }

    /// Runs one update. On error the parameters are those of the last
    /// successful step.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let step = self.state.step;
        let batch = self.batch_indices(step);
        let p = &self.params;
        let xf = encoder::forward_batch(p, batch.iter().map(|&i| self.data[i].src.as_slice()))?;
        let yf = encoder::forward_batch(p, batch.iter().map(|&i| self.data[i].tgt.as_slice()))?;
        let negs: Vec<&[u32]> = batch
            .iter()
            .flat_map(|&i| self.data[i].negatives.iter().map(Vec::as_slice))
            .collect();
        let mut grads = p.zeros_like();
        let loss = if negs.is_empty() {
            let lg = negatives::sharded_loss_grad(&xf.raw, &yf.raw, self.config.shards, &self.config.loss(), self.config.scope)?;
            encoder::backward_batch(p, &xf, &lg.dx, &mut grads);
            encoder::backward_batch(p, &yf, &lg.dy, &mut grads);
            lg.loss
        } else {
            let nf = encoder::forward_batch(p, negs.iter().copied())?;
            let lg = loss::loss_grad_with_negatives(&xf.raw, &yf.raw, Some(&nf.raw), &self.config.loss())?;
            encoder::backward_batch(p, &xf, &lg.dx, &mut grads);
            encoder::backward_batch(p, &yf, &lg.dy, &mut grads);
            if let Some(dn) = &lg.d_negatives {
                encoder::backward_batch(p, &nf, dn, &mut grads);
            }
            lg.loss
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        let lr = optimizer_step(&mut self.params, &grads, &mut self.state, &self.config.optimizer())?;
        Ok(TrainRecord {
            step: step + 1,
            loss,
            lr,
            pairs_seen: (step + 1) * self.config.batch_size as u64,
        })
    }

    /// Steps until the configured total is reached.
    pub fn run(&mut self) -> Result<Vec<TrainRecord>> {
        let mut log = Vec::with_capacity(self.config.steps);
        while !self.is_done() {
            log.push(self.step()?);
        }
        Ok(log)
    }
}

/// Fine-tunes `params` on `pairs` for `config.steps` updates.
pub fn finetune_dual_encoder(
    params: EncoderParams,
    vocab: &Vocab,
    pairs: &[SentencePair],
    config: TrainConfig,
) -> Result<(EncoderParams, Vec<TrainRecord>)> {
    let mut trainer = DualEncoderTrainer::new(params, vocab, pairs, config)?;
    let log = trainer.run()?;
    Ok((trainer.into_parts().0, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub steps_per_stage: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// MLM updates per cycle.
    pub mlm_steps: usize,
    /// TLM updates per cycle.
    pub tlm_steps: usize,
    pub mask: MaskPlan,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            steps_per_stage: 500,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: 0.0,
            mlm_steps: 1,
            tlm_steps: 1,
            mask: MaskPlan::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Objective {
    Mlm,
    Tlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretrainRecord {
    pub stage: usize,
    pub layers: usize,
    pub step: u64,
    pub objective: Objective,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_pretrain_log<W: Write>(records: &[PretrainRecord], mut w: W) -> Result<()> {
    for r in records {
        let objective = match r.objective {
            Objective::Mlm => "mlm",
            Objective::Tlm => "tlm",
        };
        writeln!(
            w,
            "stage={} layers={} step={} objective={objective} loss={:.6} lr={:.6e}",
            r.stage, r.layers, r.step, r.loss, r.lr
        )?;
    }
    Ok(())
}

/// Staged MLM/TLM pretraining. Stage `i` trains a `schedule[i]`-layer encoder;
/// between stages the stack is grown by repetition and the optimizer restarts.
pub struct Pretrainer {
    params: EncoderParams,
    state: OptimizerState,
    config: PretrainConfig,
    schedule: Vec<usize>,
    stage: usize,
    global_step: u64,
    mono: Vec<Vec<u32>>,
    pairs: Vec<Vec<u32>>,
}

impl Pretrainer {
    pub fn new(
        params: EncoderParams,
        vocab: &Vocab,
        mono: &[Sentence],
        pairs: &[SentencePair],
        config: PretrainConfig,
        schedule: &[usize],
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::invalid("empty stage schedule"));
        }
        if schedule[0] != params.config.num_layers {
            return Err(Error::invalid(format!(
                "first stage has {} layers but the encoder has {}",
                schedule[0], params.config.num_layers
            )));
        }
        for w in schedule.windows(2) {
            if w[0] == 0 || w[1] % w[0] != 0 {
                return Err(Error::invalid(format!("stage depth {} does not divide {}", w[0], w[1])));
            }
        }
        if config.batch_size == 0 || config.steps_per_stage == 0 {
            return Err(Error::invalid("batch size and steps per stage must be positive"));
        }
        if config.mlm_steps + config.tlm_steps == 0 {
            return Err(Error::invalid("MLM and TLM ratio cannot both be zero"));
        }
        let max_len = params.config.max_seq_len;
        let has_content = |ids: &Vec<u32>| ids.iter().any(|&i| !matches!(i, vocab::PAD | vocab::CLS | vocab::SEP));
        let mono: Vec<Vec<u32>> = mono
            .iter()
            .map(|s| vocab.tokenize_sentence(s, max_len).map(|t| t.ids))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(has_content)
            .collect();
        let pairs: Vec<Vec<u32>> = pairs
            .iter()
            .filter_map(|p| encoder::tlm_sequence(p, vocab, max_len).ok().map(|t| t.ids))
            .collect();
        if (config.mlm_steps > 0 && mono.is_empty()) && (config.tlm_steps > 0 && pairs.is_empty()) {
            return Err(Error::invalid("no usable monolingual or parallel training text"));
        }
        let state = OptimizerState::new(&params);
        Ok(Self {
            params,
            state,
            config,
            schedule: schedule.to_vec(),
            stage: 0,
            global_step: 0,
            mono,
            pairs,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn into_params(self) -> EncoderParams {
        self.params
    }

    pub fn is_done(&self) -> bool {
        self.global_step >= (self.schedule.len() * self.config.steps_per_stage) as u64
    }

    fn objective_at(&self, step: u64) -> Objective {
        let cycle = (self.config.mlm_steps + self.config.tlm_steps) as u64;
        let wants_mlm = step % cycle < self.config.mlm_steps as u64;
        match (wants_mlm, self.mono.is_empty(), self.pairs.is_empty()) {
            (true, false, _) | (false, _, true) => Objective::Mlm,
            _ => Objective::Tlm,
        }
    }

    pub fn step(&mut self) -> Result<PretrainRecord> {
        let stage = (self.global_step / self.config.steps_per_stage as u64) as usize;
        if stage != self.stage {
            self.params = encoder::stack_grow(&self.params, self.schedule[stage])?;
            self.state = OptimizerState::new(&self.params);
            self.stage = stage;
        }
        let objective = self.objective_at(self.global_step);
        let source = match objective {
            Objective::Mlm => &self.mono,
            Objective::Tlm => &self.pairs,
        };
        let mut rng = step_rng(self.config.seed, self.global_step);
        let n = self.config.batch_size.min(source.len());
        let batch: Vec<MaskedSequence> = sample(&mut rng, source.len(), n)
            .into_iter()
            .map(|i| {
                let t = vocab::TokenSequence {
                    ids: source[i].clone(),
                    lang: String::new(),
                    surface_len: 0,
                };
                encoder::mask_sequence(&t, &self.config.mask, &mut rng)
            })
            .collect();
        let (loss, grads) = encoder::mlm_loss_and_grad(&self.params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.global_step,
                reason: format!("loss is {loss}"),
            });
        }
        let opt = AdamW {
            learning_rate: self.config.learning_rate,
            weight_decay: self.config.weight_decay,
            total_steps: self.config.steps_per_stage as u64,
        };
        let lr = optimizer_step(&mut self.params, &grads, &mut self.state, &opt)?;
        self.global_step += 1;
        Ok(PretrainRecord {
            stage,
            layers: self.params.config.num_layers,
            step: self.global_step,
            objective,
            loss,
            lr,
        })
    }

    pub fn run(&mut self) -> Result<Vec<PretrainRecord>> {
        let mut log = Vec::new();
        while !self.is_done() {
            log.push(self.step()?);
        }
        Ok(log)
    }
}

/// Runs every stage of `schedule`. `params` must have `schedule[0]` layers.
pub fn pretrain(
    params: EncoderParams,
    vocab: &Vocab,
    mono: &[Sentence],
    pairs: &[SentencePair],
    config: PretrainConfig,
    schedule: &[usize],
) -> Result<(EncoderParams, Vec<PretrainRecord>)> {
    let mut p = Pretrainer::new(params, vocab, mono, pairs, config, schedule)?;
    let log = p.run()?;
    Ok((p.into_params(), log))
}

/// Unit embeddings of `pairs`' sources and targets, for evaluation.
pub fn encode_pairs(params: &EncoderParams, vocab: &Vocab, pairs: &[SentencePair]) -> Result<(Matrix, Matrix)> {
    let src: Vec<Sentence> = pairs.iter().map(|p| p.src.clone()).collect();
    let tgt: Vec<Sentence> = pairs.iter().map(|p| p.tgt.clone()).collect();
    Ok((
        crate::mining::encode_sentences(params, vocab, &src)?,
        crate::mining::encode_sentences(params, vocab, &tgt)?,
    ))
}
