//! Parallel-text mining: encode the query side, retrieve from an index over
//! the other side, keep neighbours at or above a cosine threshold, dedup on
//! text and select the best-scored fraction.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::corpus::{select_by_score, Sentence, SentencePair, SelectionMode};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::index::{IndexConfig, VectorIndex};
use crate::linalg::Matrix;
use crate::vocab::Vocab;

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;
pub const DEFAULT_SELECTION_FRACTION: f64 = 0.2;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;
/// Sources encoded per chunk while streaming.
pub const CHUNK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MiningDirection {
    /// Source sentences query an index over the target pool.
    Forward,
    /// Target sentences query an index over the source pool.
    Backward,
    /// The smaller side queries; ties resolve to forward.
    Auto,
}

impl MiningDirection {
    pub fn resolve(self, num_src: usize, num_tgt: usize) -> MiningDirection {
        match self {
            MiningDirection::Auto if num_tgt < num_src => MiningDirection::Backward,
            MiningDirection::Auto => MiningDirection::Forward,
            d => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiningConfig {
    pub similarity_threshold: f64,
    pub neighbors_k: usize,
    pub selection_fraction: f64,
    pub direction: MiningDirection,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            neighbors_k: 1,
            selection_fraction: DEFAULT_SELECTION_FRACTION,
            direction: MiningDirection::Auto,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.similarity_threshold;
        if !(t > -1.0 && t <= 1.0) {
            return Err(Error::invalid(format!("similarity threshold must lie in (-1, 1], got {t}")));
        }
        let f = self.selection_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("selection fraction must lie in (0, 1], got {f}")));
        }
        if self.neighbors_k == 0 {
            return Err(Error::invalid("neighbors_k must be at least 1"));
        }
        Ok(())
    }
}

/// Unit embeddings for `sentences`, row `i` for sentence `i`.
pub fn encode_sentences(params: &EncoderParams, vocab: &Vocab, sentences: &[Sentence]) -> Result<Matrix> {
    let tokens = sentences
        .iter()
        .map(|s| vocab.tokenize_sentence(s, params.config.max_seq_len))
        .collect::<Result<Vec<_>>>()?;
    encoder::encode_batch(params, &tokens)
}

/// Queries `pool_index` (built over `pool`, same ids in the same order) with
/// every sentence of `queries`, in chunks. Returns `(query, pool)` pairs with
/// their cosine scores, in query order then rank order.
pub fn mine(
    queries: &[Sentence],
    pool: &[Sentence],
    pool_index: &VectorIndex,
    params: &EncoderParams,
    vocab: &Vocab,
    config: &MiningConfig,
) -> Result<Vec<SentencePair>> {
    config.validate()?;
    if pool.is_empty() || pool_index.is_empty() {
        return Err(Error::invalid("cannot mine against an empty pool"));
    }
    if pool.len() != pool_index.len() || pool.iter().zip(pool_index.ids()).any(|(s, id)| &s.id != id) {
        return Err(Error::invalid("index ids do not match the pool sentences"));
    }
    let mut out = Vec::new();
    for chunk in queries.chunks(CHUNK_SIZE) {
        let emb = encode_sentences(params, vocab, chunk)?;
        for (i, q) in chunk.iter().enumerate() {
            for hit in pool_index.search(emb.row(i), config.neighbors_k)? {
                if hit.score >= config.similarity_threshold {
                    out.push(SentencePair::new(q.clone(), pool[hit.row].clone()).with_score(hit.score));
                }
            }
        }
    }
    Ok(out)
}

/// Mines between two monolingual pools, indexing whichever side the
/// configured direction makes the pool. Pairs are always oriented
/// `(src, tgt)`.
pub fn mine_pools(
    src: &[Sentence],
    tgt: &[Sentence],
    params: &EncoderParams,
    vocab: &Vocab,
    config: &MiningConfig,
    index_config: &IndexConfig,
) -> Result<Vec<SentencePair>> {
    let direction = config.direction.resolve(src.len(), tgt.len());
    let (queries, pool) = match direction {
        MiningDirection::Backward => (tgt, src),
        _ => (src, tgt),
    };
    if pool.is_empty() {
        return Err(Error::invalid("cannot mine against an empty pool"));
    }
    let vectors = encode_sentences(params, vocab, pool)?;
    let index = VectorIndex::build(vectors, pool.iter().map(|s| s.id.clone()).collect(), index_config)?;
    let mut pairs = mine(queries, pool, &index, params, vocab, config)?;
    if direction == MiningDirection::Backward {
        for p in &mut pairs {
            std::mem::swap(&mut p.src, &mut p.tgt);
        }
    }
    Ok(pairs)
}

/// Collapses pairs with identical `(src_text, tgt_text)`, keeping the
/// highest-scored instance (the earliest on ties) at its own position.
pub fn dedup(pairs: Vec<SentencePair>) -> Vec<SentencePair> {
    let mut best: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let score = p.score.unwrap_or(f64::NEG_INFINITY);
        best.entry((p.src.text.as_str(), p.tgt.text.as_str()))
            .and_modify(|j| {
                if score > pairs[*j].score.unwrap_or(f64::NEG_INFINITY) {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut keep = vec![false; pairs.len()];
    for &i in best.values() {
        keep[i] = true;
    }
    pairs.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect()
}

/// The top `ceil(fraction * n)` pairs by their mined score, in input order.
pub fn select_top_fraction(pairs: Vec<SentencePair>, fraction: f64) -> Result<Vec<SentencePair>> {
    let selection = select_by_score(
        pairs,
        |p| p.score.ok_or_else(|| Error::Missing(format!("pair ({}, {}) has no score", p.src.id, p.tgt.id))),
        SelectionMode::TopFraction(fraction),
    )?;
    if selection.skipped > 0 {
        return Err(Error::Missing(format!("{} pairs carry no finite score", selection.skipped)));
    }
    Ok(selection.pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningRun {
    pub sources_processed: usize,
    pub emitted: Vec<SentencePair>,
    pub deduped: Vec<SentencePair>,
    pub selected: Vec<SentencePair>,
}

/// mine → threshold → dedup → select.
pub fn run_pipeline(
    src: &[Sentence],
    tgt: &[Sentence],
    params: &EncoderParams,
    vocab: &Vocab,
    config: &MiningConfig,
    index_config: &IndexConfig,
) -> Result<MiningRun> {
    let emitted = mine_pools(src, tgt, params, vocab, config, index_config)?;
    let deduped = dedup(emitted.clone());
    let selected = select_top_fraction(deduped.clone(), config.selection_fraction)?;
    Ok(MiningRun {
        sources_processed: match config.direction.resolve(src.len(), tgt.len()) {
            MiningDirection::Backward => tgt.len(),
            _ => src.len(),
        },
        emitted,
        deduped,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiningReport {
    pub sources_processed: usize,
    pub pairs_emitted: usize,
    pub pairs_after_dedup: usize,
    pub pairs_selected: usize,
    /// Counts of emitted scores over `[-1, 1]` in bins of width 0.05; the last
    /// bin is closed on the right.
    pub histogram: Vec<usize>,
}

pub fn score_histogram(scores: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let bins = (2.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut h = vec![0; bins];
    for s in scores {
        let b = ((s.clamp(-1.0, 1.0) + 1.0) / HISTOGRAM_BIN_WIDTH).floor() as usize;
        h[b.min(bins - 1)] += 1;
    }
    h
}

pub fn mining_report(run: &MiningRun) -> MiningReport {
    MiningReport {
        sources_processed: run.sources_processed,
        pairs_emitted: run.emitted.len(),
        pairs_after_dedup: run.deduped.len(),
        pairs_selected: run.selected.len(),
        histogram: score_histogram(run.emitted.iter().filter_map(|p| p.score)),
    }
}

impl MiningReport {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sources_processed={}", self.sources_processed)?;
        writeln!(w, "pairs_emitted={}", self.pairs_emitted)?;
        writeln!(w, "pairs_after_dedup={}", self.pairs_after_dedup)?;
        writeln!(w, "pairs_selected={}", self.pairs_selected)?;
        for (i, n) in self.histogram.iter().enumerate() {
            writeln!(w, "histogram[{:.2}]={n}", -1.0 + i as f64 * HISTOGRAM_BIN_WIDTH)?;
        }
        Ok(())
    }
}
