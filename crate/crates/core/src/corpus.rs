//! Sentence and sentence-pair ingestion: length filters, per-language-pair
//! caps, score-based selection, and vocabulary diagnostics.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::vocab::Vocab;

pub const DEFAULT_MIN_CHARS: usize = 10;
pub const DEFAULT_MAX_CHARS: usize = 5000;
pub const DEFAULT_PAIR_CAP: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Sentence {
    pub id: String,
    pub lang: String,
    pub text: String,
}

impl Sentence {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentencePair {
    pub src: Sentence,
    pub tgt: Sentence,
    pub score: Option<f64>,
}

impl SentencePair {
    pub fn new(src: Sentence, tgt: Sentence) -> Self {
        Self {
            src,
            tgt,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn language_pair(&self) -> (&str, &str) {
        (&self.src.lang, &self.tgt.lang)
    }
}

/// Keeps lines whose character count lies in `[min_chars, max_chars]`.
pub fn filter_monolingual(
    lines: impl IntoIterator<Item = Sentence>,
    min_chars: usize,
    max_chars: usize,
) -> Result<Vec<Sentence>> {
    if max_chars <= min_chars {
        return Err(Error::invalid(format!(
            "max_chars ({max_chars}) must exceed min_chars ({min_chars})"
        )));
    }
    Ok(lines
        .into_iter()
        .filter(|s| (min_chars..=max_chars).contains(&s.char_len()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapOrder {
    /// Keep the highest-scored pairs; every pair must carry a score.
    ByScore,
    /// Keep the first pairs seen.
    InputOrder,
}

/// Keeps at most `cap` pairs per (src_lang, tgt_lang). Retained pairs stay in
/// input order.
pub fn cap_pairs(pairs: Vec<SentencePair>, cap: usize, order: CapOrder) -> Result<Vec<SentencePair>> {
    if cap == 0 {
        return Err(Error::invalid("cap must be positive"));
    }
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        if order == CapOrder::ByScore {
            match p.score {
                Some(s) if s.is_finite() => {}
                _ => {
                    return Err(Error::Missing(format!(
                        "pair {i} ({} -> {}) has no finite score",
                        p.src.id, p.tgt.id
                    )))
                }
            }
        }
        groups
            .entry((p.src.lang.clone(), p.tgt.lang.clone()))
            .or_default()
            .push(i);
    }
    let mut keep = vec![false; pairs.len()];
    for members in groups.values_mut() {
        if order == CapOrder::ByScore {
            // stable sort: equal scores keep input order
            members.sort_by(|&a, &b| {
                let (sa, sb) = (pairs[a].score.unwrap(), pairs[b].score.unwrap());
                sb.total_cmp(&sa)
            });
        }
        for &i in members.iter().take(cap) {
            keep[i] = true;
        }
    }
    Ok(pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    Threshold(f64),
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected pairs in input order, each carrying the score it was selected by.
    pub pairs: Vec<SentencePair>,
    /// Pairs the scorer failed on (error or non-finite output).
    pub skipped: usize,
}

/// `ceil(fraction * n)`, tolerant of representation error in `fraction`
/// (0.7 * 10 must give 7, not 8).
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let c = (exact - exact.abs() * 1e-12 - 1e-12).ceil().max(0.0) as usize;
    c.min(n)
}

/// Scores every pair with `scorer` and keeps either those at or above a
/// threshold or the best-scored fraction. Ties break by input order.
pub fn select_by_score<F, E>(pairs: Vec<SentencePair>, mut scorer: F, mode: SelectionMode) -> Result<Selection>
where
    F: FnMut(&SentencePair) -> std::result::Result<f64, E>,
{
    match mode {
        SelectionMode::Threshold(t) if !t.is_finite() => {
            return Err(Error::invalid(format!("threshold must be finite, got {t}")))
        }
        SelectionMode::TopFraction(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(Error::invalid(format!("fraction must lie in (0, 1], got {f}")))
        }
        _ => {}
    }
    let mut skipped = 0;
    let mut scored = Vec::with_capacity(pairs.len());
    for p in pairs {
        match scorer(&p) {
            Ok(s) if s.is_finite() => scored.push(p.with_score(s)),
            _ => skipped += 1,
        }
    }
    let pairs = match mode {
        SelectionMode::Threshold(t) => scored
            .into_iter()
            .filter(|p| p.score.unwrap() >= t)
            .collect(),
        SelectionMode::TopFraction(f) => {
            let n = fraction_count(f, scored.len());
            let mut order: Vec<usize> = (0..scored.len()).collect();
            order.sort_by(|&a, &b| scored[b].score.unwrap().total_cmp(&scored[a].score.unwrap()));
            let mut keep = vec![false; scored.len()];
            for &i in order.iter().take(n) {
                keep[i] = true;
            }
            scored
                .into_iter()
                .zip(keep)
                .filter_map(|(p, k)| k.then_some(p))
                .collect()
        }
    };
    Ok(Selection { pairs, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CorpusStats {
    pub unknown_token_rate: f64,
    /// Characters per token, continuation markers excluded.
    pub avg_token_length: f64,
    /// Content tokens per sentence.
    pub avg_sentence_length: f64,
    pub sentence_count: usize,
    pub token_count: usize,
}

/// Unknown-token rate and average token/sentence lengths under `vocab`.
/// Special tokens are not counted. An UNK token covers its whole word.
pub fn corpus_stats<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, vocab: &Vocab) -> CorpusStats {
    let mut sentence_count = 0usize;
    let mut tokens = 0usize;
    let mut unknown = 0usize;
    let mut chars = 0usize;
    for s in sentences {
        sentence_count += 1;
        for piece in vocab.pieces_of(&s.text) {
            tokens += 1;
            chars += piece.surface_chars;
            if piece.id == crate::vocab::UNK {
                unknown += 1;
            }
        }
    }
    if sentence_count == 0 {
        return CorpusStats::default();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CorpusStats {
        unknown_token_rate: ratio(unknown, tokens),
        avg_token_length: ratio(chars, tokens),
        avg_sentence_length: ratio(tokens, sentence_count),
        sentence_count,
        token_count: tokens,
    }
}

pub fn stats_by_language(sentences: &[Sentence], vocab: &Vocab) -> BTreeMap<String, CorpusStats> {
    let mut by_lang: BTreeMap<&str, Vec<&Sentence>> = BTreeMap::new();
    for s in sentences {
        by_lang.entry(&s.lang).or_default().push(s);
    }
    by_lang
        .into_iter()
        .map(|(lang, ss)| (lang.to_string(), corpus_stats(ss, vocab)))
        .collect()
}

/// One `name=value` record per language.
pub fn write_stats_report<W: Write>(stats: &BTreeMap<String, CorpusStats>, mut w: W) -> Result<()> {
    for (lang, s) in stats {
        writeln!(
            w,
            "lang={lang} sentence_count={} token_count={} unknown_token_rate={:.6} avg_token_length={:.6} avg_sentence_length={:.6}",
            s.sentence_count, s.token_count, s.unknown_token_rate, s.avg_token_length, s.avg_sentence_length
        )?;
    }
    Ok(())
}

/// Reads one sentence per line with an optional `lang<TAB>` prefix. Lines
/// without a prefix get `default_lang`. Ids are `{prefix}{line number}`.
pub fn read_monolingual<R: BufRead>(r: R, default_lang: &str, id_prefix: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let (lang, text) = match line.split_once('\t') {
            Some((l, t)) => (l, t),
            None => (default_lang, line),
        };
        if text.trim().is_empty() {
            continue;
        }
        if lang.is_empty() {
            return Err(Error::format(format!("line {}", n + 1), "empty language tag"));
        }
        out.push(Sentence::new(format!("{id_prefix}{}", n + 1), lang, text));
    }
    Ok(out)
}

/// Reads `src_lang, tgt_lang, src_text, tgt_text[, score]` rows. Source ids are
/// `s{line}` and target ids `t{line}`.
pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let loc = || format!("line {}", n + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&cols.len()) {
            return Err(Error::format(loc(), format!("expected 4 or 5 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::format(loc(), "empty language tag"));
        }
        let mut pair = SentencePair::new(
            Sentence::new(format!("s{}", n + 1), cols[0], cols[2]),
            Sentence::new(format!("t{}", n + 1), cols[1], cols[3]),
        );
        if let Some(s) = cols.get(4) {
            let score: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::format(loc(), format!("bad score {s:?}")))?;
            if !score.is_finite() {
                return Err(Error::format(loc(), "score must be finite"));
            }
            pair.score = Some(score);
        }
        out.push(pair);
    }
    Ok(out)
}

/// Writes pairs as TSV; scores (when present) use six decimal digits.
pub fn write_pairs<W: Write>(pairs: &[SentencePair], mut w: W) -> Result<()> {
    for p in pairs {
        write!(w, "{}\t{}\t{}\t{}", p.src.lang, p.tgt.lang, p.src.text, p.tgt.text)?;
        if let Some(s) = p.score {
            write!(w, "\t{s:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Groups sentences by language, preserving order within each language.
pub fn group_by_language(sentences: &[Sentence]) -> BTreeMap<String, Vec<Sentence>> {
    let mut out: BTreeMap<String, Vec<Sentence>> = BTreeMap::new();
    for s in sentences {
        out.entry(s.lang.clone()).or_default().push(s.clone());
    }
    out
}

/// Index from sentence id to position; errors on duplicate ids.
pub fn id_positions(sentences: &[Sentence]) -> Result<HashMap<&str, usize>> {
    let mut m = HashMap::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        if m.insert(s.id.as_str(), i).is_some() {
            return Err(Error::invalid(format!("duplicate sentence id {:?}", s.id)));
        }
    }
    Ok(m)
}
