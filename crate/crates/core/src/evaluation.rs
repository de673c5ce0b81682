//! Retrieval metrics: precision@1 over a target pool, per-language Tatoeba
//! accuracy with group macro-averages, BUCC-style best-F1 threshold sweep, and
//! Pearson correlation of arc-cosine similarities against graded scores.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{EmbeddingSet, IndexConfig, VectorIndex};
use crate::linalg;

/// True translation pairs. Each source has at most one gold target.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldAlignment {
    pairs: BTreeMap<String, String>,
    src_universe: BTreeSet<String>,
    tgt_universe: BTreeSet<String>,
}

impl GoldAlignment {
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        src_universe: impl IntoIterator<Item = String>,
        tgt_universe: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let src_universe: BTreeSet<String> = src_universe.into_iter().collect();
        let tgt_universe: BTreeSet<String> = tgt_universe.into_iter().collect();
        let mut map = BTreeMap::new();
        for (s, t) in pairs {
            if !src_universe.contains(&s) {
                return Err(Error::Missing(format!("gold source {s:?} is not in the source universe")));
            }
            if !tgt_universe.contains(&t) {
                return Err(Error::Missing(format!("gold target {t:?} is not in the target universe")));
            }
            if let Some(prev) = map.insert(s.clone(), t) {
                return Err(Error::invalid(format!("source {s:?} has two gold targets (first {prev:?})")));
            }
        }
        Ok(Self {
            pairs: map,
            src_universe,
            tgt_universe,
        })
    }

    /// Universes taken to be exactly the ids that occur in `pairs`.
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let src: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
        let tgt: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
        Self::new(pairs, src, tgt)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target_of(&self, src: &str) -> Option<&str> {
        self.pairs.get(src).map(String::as_str)
    }

    pub fn contains(&self, src: &str, tgt: &str) -> bool {
        self.target_of(src) == Some(tgt)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(s, t)| (s.as_str(), t.as_str()))
    }

    pub fn src_universe(&self) -> &BTreeSet<String> {
        &self.src_universe
    }

    pub fn tgt_universe(&self) -> &BTreeSet<String> {
        &self.tgt_universe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl Prf {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize, threshold: f64) -> Self {
        let precision = if predicted == 0 { 0.0 } else { true_positives as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { true_positives as f64 / gold as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            threshold,
        }
    }
}

/// Fraction of gold sources whose top-1 neighbour in `targets` is the gold
/// target.
pub fn p_at_1(sources: &EmbeddingSet, targets: &VectorIndex, gold: &GoldAlignment) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::invalid("empty gold alignment"));
    }
    let rows: HashMap<&str, usize> = sources.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut correct = 0usize;
    for (src, tgt) in gold.iter() {
        let &row = rows
            .get(src)
            .ok_or_else(|| Error::Missing(format!("no embedding for gold source {src:?}")))?;
        let hit = &targets.search(sources.vectors.row(row), 1)?[0];
        if hit.id == tgt {
            correct += 1;
        }
    }
    Ok(correct as f64 / gold.len() as f64)
}

/// One language's evaluation pool.
#[derive(Debug, Clone)]
pub struct LanguageSet {
    pub sources: EmbeddingSet,
    pub targets: EmbeddingSet,
    pub gold: GoldAlignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LanguageGroup {
    pub name: String,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAverage {
    pub name: String,
    /// Unweighted mean over member languages that were evaluated; `None` when
    /// none were.
    pub mean: Option<f64>,
    pub present: Vec<String>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TatoebaReport {
    pub per_language: BTreeMap<String, f64>,
    pub groups: Vec<GroupAverage>,
}

/// Per-language P@1 within each language's own pool, and macro-averages over
/// the configured language groups.
pub fn tatoeba_accuracy(sets: &BTreeMap<String, LanguageSet>, groups: &[LanguageGroup]) -> Result<TatoebaReport> {
    let mut per_language = BTreeMap::new();
    for (lang, set) in sets {
        let index = VectorIndex::build(set.targets.vectors.clone(), set.targets.ids.clone(), &IndexConfig::exact())?;
        per_language.insert(lang.clone(), p_at_1(&set.sources, &index, &set.gold)?);
    }
    let groups = groups
        .iter()
        .map(|g| {
            let (present, missing): (Vec<String>, Vec<String>) =
                g.languages.iter().cloned().partition(|l| per_language.contains_key(l));
            let mean = (!present.is_empty())
                .then(|| present.iter().map(|l| per_language[l]).sum::<f64>() / present.len() as f64);
            if !missing.is_empty() {
                log::warn!("group {}: no evaluation set for {}", g.name, missing.join(","));
            }
            GroupAverage {
                name: g.name.clone(),
                mean,
                present,
                missing,
            }
        })
        .collect();
    Ok(TatoebaReport { per_language, groups })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub src_id: String,
    pub tgt_id: String,
    pub score: f64,
}

/// Best F1 over thresholds drawn from the distinct candidate scores, where the
/// prediction at threshold `t` is every candidate scoring at least `t`. Ties
/// in F1 go to the larger threshold.
pub fn bucc_best_f1(candidates: &[Candidate], gold: &GoldAlignment) -> Result<Prf> {
    if gold.is_empty() {
        return Err(Error::invalid("empty gold alignment"));
    }
    let mut seen = HashSet::with_capacity(candidates.len());
    for c in candidates {
        if !c.score.is_finite() {
            return Err(Error::invalid(format!("candidate ({}, {}) has score {}", c.src_id, c.tgt_id, c.score)));
        }
        if !seen.insert((c.src_id.as_str(), c.tgt_id.as_str())) {
            return Err(Error::invalid(format!("duplicate candidate ({}, {})", c.src_id, c.tgt_id)));
        }
    }
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut best = Prf::from_counts(0, 0, gold.len(), f64::INFINITY);
    let mut tp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = order[i].score;
        // take the whole block of candidates scoring exactly t
        while i < order.len() && order[i].score == t {
            if gold.contains(&order[i].src_id, &order[i].tgt_id) {
                tp += 1;
            }
            i += 1;
        }
        let prf = Prf::from_counts(tp, i, gold.len(), t);
        // strictly better only: scanning from high to low thresholds, so ties keep the larger one
        if prf.f1 > best.f1 || best.threshold.is_infinite() {
            best = prf;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SearchDirection {
    /// Sources query the target pool.
    Forward,
    /// Targets query the source pool; candidates are still reported as
    /// (source, target).
    Backward,
}

/// Nearest-neighbour candidates: each query keeps its top `k` neighbours.
pub fn generate_candidates(
    sources: &EmbeddingSet,
    targets: &EmbeddingSet,
    k: usize,
    direction: SearchDirection,
    config: &IndexConfig,
) -> Result<Vec<Candidate>> {
    let (queries, pool) = match direction {
        SearchDirection::Forward => (sources, targets),
        SearchDirection::Backward => (targets, sources),
    };
    let index = VectorIndex::build(pool.vectors.clone(), pool.ids.clone(), config)?;
    let mut out = Vec::with_capacity(queries.len() * k);
    for (qi, qid) in queries.ids.iter().enumerate() {
        for hit in index.search(queries.vectors.row(qi), k)? {
            let (src_id, tgt_id) = match direction {
                SearchDirection::Forward => (qid.clone(), hit.id),
                SearchDirection::Backward => (hit.id, qid.clone()),
            };
            out.push(Candidate {
                src_id,
                tgt_id,
                score: hit.score,
            });
        }
    }
    Ok(out)
}

/// Sample Pearson correlation, computed from centred sums.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!(
            "correlation needs two equal-length series of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("correlation is undefined for a constant series"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - arccos(clamp(u.v)) / pi`.
pub fn arccos_similarity(u: &[f64], v: &[f64]) -> f64 {
    1.0 - linalg::dot(u, v).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

pub fn sts_pearson(pairs: &[(Vec<f64>, Vec<f64>)], gold: &[f64]) -> Result<f64> {
    if pairs.len() != gold.len() {
        return Err(Error::shape(format!("{} pairs vs {} gold scores", pairs.len(), gold.len())));
    }
    let model: Vec<f64> = pairs.iter().map(|(u, v)| arccos_similarity(u, v)).collect();
    pearson(&model, gold)
}

pub fn read_gold<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>()[..] {
            [s, t] if !s.is_empty() && !t.is_empty() => out.push((s.to_string(), t.to_string())),
            _ => return Err(Error::format(format!("gold line {}", n + 1), "expected src_id<TAB>tgt_id")),
        }
    }
    Ok(out)
}

pub fn read_candidates<R: BufRead>(r: R) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let loc = || format!("candidate line {}", n + 1);
        match line.split('\t').collect::<Vec<_>>()[..] {
            [s, t, score] => {
                let score: f64 = score
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(loc(), format!("bad score {score:?}")))?;
                out.push(Candidate {
                    src_id: s.to_string(),
                    tgt_id: t.to_string(),
                    score,
                });
            }
            _ => return Err(Error::format(loc(), "expected src_id<TAB>tgt_id<TAB>score")),
        }
    }
    Ok(out)
}

pub fn write_candidates<W: Write>(candidates: &[Candidate], mut w: W) -> Result<()> {
    for c in candidates {
        writeln!(w, "{}\t{}\t{:.6}", c.src_id, c.tgt_id, c.score)?;
    }
    Ok(())
}

/// Line-delimited `metric=value` records.
pub fn write_metrics<W: Write>(metrics: &[(String, f64)], mut w: W) -> Result<()> {
    for (name, value) in metrics {
        writeln!(w, "{name}={value:.6}")?;
    }
    Ok(())
}
