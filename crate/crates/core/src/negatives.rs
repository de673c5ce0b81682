//! Negatives beyond the local batch: a deterministic single-process
//! simulation of sharded training where every shard ranks its rows against
//! the targets gathered from all shards, and hard negatives mined with a
//! weaker encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SentencePair};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::loss::{self, LossConfig, LossGrad};
use crate::vocab::Vocab;

pub const DEFAULT_HARD_NEGATIVES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub x: Matrix,
    pub y: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedBatch {
    pub shards: Vec<Shard>,
    /// `global_order[g] = (shard, local index)` of global row `g`.
    pub global_order: Vec<(usize, usize)>,
}

/// Which targets a shard's rows are ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeScope {
    /// Targets from every shard (the broadcast).
    CrossShard,
    /// Only the shard's own targets.
    LocalShard,
}

/// Splits the batch into `k` contiguous shards of equal size.
pub fn shard_batch(x: &Matrix, y: &Matrix, k: usize) -> Result<ShardedBatch> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::shape("source and target blocks differ in shape"));
    }
    let n = x.rows();
    if k == 0 || !n.is_multiple_of(k) {
        return Err(Error::invalid(format!("{k} shards do not divide a batch of {n}")));
    }
    let size = n / k;
    let shards = (0..k)
        .map(|s| Shard {
            x: x.slice_rows(s * size, (s + 1) * size),
            y: y.slice_rows(s * size, (s + 1) * size),
        })
        .collect();
    let global_order = (0..n).map(|g| (g / size, g % size)).collect();
    Ok(ShardedBatch { shards, global_order })
}

impl ShardedBatch {
    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn len(&self) -> usize {
        self.global_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_order.is_empty()
    }

    fn gather(&self, pick: impl Fn(&Shard) -> &Matrix) -> Matrix {
        let cols = self.shards.first().map_or(0, |s| pick(s).cols());
        let mut out = Matrix::zeros(self.len(), cols);
        for (g, &(s, l)) in self.global_order.iter().enumerate() {
            out.row_mut(g).copy_from_slice(pick(&self.shards[s]).row(l));
        }
        out
    }

    /// Sources and targets in global order.
    pub fn reconstitute(&self) -> (Matrix, Matrix) {
        (self.gather(|s| &s.x), self.gather(|s| &s.y))
    }
}

/// Per-row loss terms of both directions, each indexed by global row.
fn sharded_terms(
    batch: &ShardedBatch,
    config: &LossConfig,
    scope: NegativeScope,
    mut grads: Option<&mut Matrix>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = batch.len();
    let (all_x, all_y) = batch.reconstitute();
    let mut forward = vec![0.0; n];
    let mut backward = vec![0.0; n];
    let w = 1.0 / n as f64;
    let mut global_of: Vec<Vec<usize>> = batch.shards.iter().map(|s| vec![usize::MAX; s.x.rows()]).collect();
    for (g, &(s, l)) in batch.global_order.iter().enumerate() {
        global_of[s][l] = g;
    }
    for (s, shard) in batch.shards.iter().enumerate() {
        // the broadcast: every shard sees the gathered blocks
        let (cols_y, cols_x) = match scope {
            NegativeScope::CrossShard => (&all_y, &all_x),
            NegativeScope::LocalShard => (&shard.y, &shard.x),
        };
        let column_global = |c: usize| match scope {
            NegativeScope::CrossShard => c,
            NegativeScope::LocalShard => global_of[s][c],
        };
        let mut sims = vec![0.0; cols_y.rows()];
        let mut g = vec![0.0; cols_y.rows()];
        for l in 0..shard.x.rows() {
            let row = global_of[s][l];
            let positive = match scope {
                NegativeScope::CrossShard => row,
                NegativeScope::LocalShard => l,
            };
            // source -> target
            for (c, v) in sims.iter_mut().enumerate() {
                *v = linalg::dot(shard.x.row(l), cols_y.row(c));
            }
            g.iter_mut().for_each(|v| *v = 0.0);
            forward[row] = loss::query_term(&sims, positive, config, grads.is_some().then_some((&mut g[..], w)));
            if let Some(gm) = grads.as_deref_mut() {
                for (c, &v) in g.iter().enumerate() {
                    let j = column_global(c);
                    gm.set(row, j, gm.get(row, j) + v);
                }
            }
            // target -> source
            for (c, v) in sims.iter_mut().enumerate() {
                *v = linalg::dot(cols_x.row(c), shard.y.row(l));
            }
            g.iter_mut().for_each(|v| *v = 0.0);
            backward[row] = loss::query_term(&sims, positive, config, grads.is_some().then_some((&mut g[..], w)));
            if let Some(gm) = grads.as_deref_mut() {
                for (c, &v) in g.iter().enumerate() {
                    let i = column_global(c);
                    gm.set(i, row, gm.get(i, row) + v);
                }
            }
        }
    }
    Ok((forward, backward))
}

fn ordered_mean(terms: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in terms {
        acc += t;
    }
    acc / terms.len() as f64
}

/// Bidirectional loss of a sharded batch of unit-norm embeddings. With
/// [`NegativeScope::CrossShard`] this equals the unsharded loss of the
/// reconstituted batch.
pub fn sharded_bidirectional_loss(batch: &ShardedBatch, config: &LossConfig, scope: NegativeScope) -> Result<f64> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (f, b) = sharded_terms(batch, config, scope, None)?;
    let loss = ordered_mean(&f) + ordered_mean(&b);
    if !loss.is_finite() {
        return Err(Error::numerical(format!("loss is {loss}")));
    }
    Ok(loss)
}

/// Sharded loss of raw (unnormalized) embeddings with gradients w.r.t. them.
pub fn sharded_loss_grad(
    x: &Matrix,
    y: &Matrix,
    shards: usize,
    config: &LossConfig,
    scope: NegativeScope,
) -> Result<LossGrad> {
    config.validate()?;
    let (xn, xnorm) = linalg::normalize_rows(x)?;
    let (yn, ynorm) = linalg::normalize_rows(y)?;
    let batch = shard_batch(&xn, &yn, shards)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut g = Matrix::zeros(x.rows(), y.rows());
    let (f, b) = sharded_terms(&batch, config, scope, Some(&mut g))?;
    let loss = ordered_mean(&f) + ordered_mean(&b);
    let (dx, dy) = loss::backprop_similarity(&xn, &xnorm, &yn, &ynorm, &g);
    if !(loss.is_finite() && dx.is_finite() && dy.is_finite()) {
        return Err(Error::numerical("non-finite sharded loss gradient"));
    }
    Ok(LossGrad {
        loss,
        dx,
        dy,
        d_negatives: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedNegative {
    pub sentence: Sentence,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeSet {
    pub per_source: BTreeMap<String, Vec<MinedNegative>>,
    pub per_source_count: usize,
}

/// For every pair, the `h` pool sentences closest to the source under the weak
/// encoder, skipping the pair's own target (by id or identical text). Ties go
/// to the earlier pool entry.
pub fn mine_hard_negatives(
    weak: &EncoderParams,
    vocab: &Vocab,
    pairs: &[SentencePair],
    pool: &[Sentence],
    h: usize,
) -> Result<HardNegativeSet> {
    if h == 0 {
        return Err(Error::invalid("number of hard negatives must be at least 1"));
    }
    if pool.len() < h + 1 {
        return Err(Error::invalid(format!(
            "pool of {} sentences cannot supply {h} negatives plus the positive",
            pool.len()
        )));
    }
    let max_len = weak.config.max_seq_len;
    let pool_tokens = pool
        .iter()
        .map(|s| vocab.tokenize_sentence(s, max_len))
        .collect::<Result<Vec<_>>>()?;
    let pool_emb = encoder::encode_batch(weak, &pool_tokens)?;
    let mut per_source = BTreeMap::new();
    for pair in pairs {
        let q = encoder::encode(weak, &vocab.tokenize_sentence(&pair.src, max_len)?)?;
        let mut scored: Vec<(usize, f64)> = (0..pool.len())
            .filter(|&i| pool[i].id != pair.tgt.id && pool[i].text != pair.tgt.text)
            .map(|i| (i, linalg::dot(&q.vector, pool_emb.row(i))))
            .collect();
        if scored.len() < h {
            return Err(Error::invalid(format!(
                "source {:?}: only {} pool sentences besides the positive",
                pair.src.id,
                scored.len()
            )));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mined = scored
            .into_iter()
            .take(h)
            .map(|(i, score)| MinedNegative {
                sentence: pool[i].clone(),
                score,
            })
            .collect();
        per_source.insert(pair.src.id.clone(), mined);
    }
    Ok(HardNegativeSet {
        per_source,
        per_source_count: h,
    })
}

/// A batch of pairs plus extra target-language negatives. The negatives are
/// extra columns for every source row in the source-to-target direction only.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub pairs: Vec<SentencePair>,
    pub negatives: Vec<Sentence>,
}

impl AugmentedBatch {
    /// Columns of each source row's softmax.
    pub fn columns(&self) -> usize {
        self.pairs.len() + self.negatives.len()
    }
}

pub fn augment_batch_with_hard_negatives(
    batch: &[SentencePair],
    negatives: Option<&HardNegativeSet>,
) -> Result<AugmentedBatch> {
    let mut extra = Vec::new();
    if let Some(set) = negatives {
        for p in batch {
            let mined = set
                .per_source
                .get(&p.src.id)
                .ok_or_else(|| Error::Missing(format!("no mined negatives for source {:?}", p.src.id)))?;
            if mined.len() != set.per_source_count {
                return Err(Error::Missing(format!(
                    "source {:?} has {} negatives, expected {}",
                    p.src.id,
                    mined.len(),
                    set.per_source_count
                )));
            }
            extra.extend(mined.iter().map(|m| m.sentence.clone()));
        }
    }
    Ok(AugmentedBatch {
        pairs: batch.to_vec(),
        negatives: extra,
    })
}
