//! Subword vocabulary: merge-based induction with language smoothing, and a
//! greedy longest-match-first (wordpiece) tokenizer.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Prefix carried by word-internal pieces.
pub const CONTINUATION_MARKER: &str = "##";

/// Words longer than this many characters are mapped straight to UNK.
const MAX_WORD_CHARS: usize = 100;

pub const DEFAULT_SMOOTHING_EXPONENT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub lang: String,
    /// Character count of the text the sequence was produced from.
    pub surface_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One token produced by the word-level tokenizer, with the number of
/// characters of the input it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub id: u32,
    pub surface_chars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabConfig {
    pub target_size: usize,
    pub smoothing_exponent: f64,
    /// Fraction of (smoothed) character occurrences the base alphabet must
    /// cover. Rarer characters get no piece and tokenize to UNK.
    pub char_coverage: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            target_size: 1000,
            smoothing_exponent: DEFAULT_SMOOTHING_EXPONENT,
            char_coverage: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocab {
    /// Builds a vocabulary from an explicit list of non-special pieces. The
    /// five special tokens are prepended.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(pieces.into_iter().map(Into::into))
            .collect::<Vec<_>>();
        Self::from_full_list(all)
    }

    fn from_full_list(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < NUM_SPECIAL
            || pieces[..NUM_SPECIAL]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::invalid(
                "vocabulary must start with the five special tokens",
            ));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::format(
                    format!("piece {i}"),
                    "pieces must be non-empty and contain no whitespace",
                ));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::format(format!("piece {i}"), format!("duplicate piece {p:?}")));
            }
            let chars = p.strip_prefix(CONTINUATION_MARKER).unwrap_or(p).chars().count();
            max_piece_chars = max_piece_chars.max(chars);
        }
        Ok(Self {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Tokenizes one whitespace-free word by greedy longest match. Returns
    /// `None` when some suffix of the word cannot be matched.
    fn tokenize_word(&self, word: &[char], out: &mut Vec<Piece>) -> bool {
        let start_len = out.len();
        let mut start = 0;
        let mut candidate = String::new();
        while start < word.len() {
            let longest = (word.len() - start).min(self.max_piece_chars);
            let mut matched = None;
            for len in (1..=longest).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_MARKER);
                }
                candidate.extend(&word[start..start + len]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(Piece {
                        id,
                        surface_chars: len,
                    });
                    start += len;
                }
                None => {
                    out.truncate(start_len);
                    return false;
                }
            }
        }
        true
    }

    /// Content pieces of `text` without special tokens or truncation. A word
    /// that cannot be fully matched becomes a single UNK covering the word.
    pub fn pieces_of(&self, text: &str) -> Vec<Piece> {
        let mut out = Vec::new();
        let mut chars = Vec::new();
        for word in text.split_whitespace() {
            chars.clear();
            chars.extend(word.chars());
            if chars.len() > MAX_WORD_CHARS || !self.tokenize_word(&chars, &mut out) {
                out.push(Piece {
                    id: UNK,
                    surface_chars: chars.len(),
                });
            }
        }
        out
    }

    /// Content token ids (no CLS/SEP), untruncated.
    pub fn content_ids(&self, text: &str) -> Vec<u32> {
        self.pieces_of(text).into_iter().map(|p| p.id).collect()
    }

    /// `[CLS] pieces… [SEP]`, keeping at most `max_len - 2` content tokens.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 3 {
            return Err(Error::invalid(format!("max_len must be at least 3, got {max_len}")));
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(self.content_ids(text).into_iter().take(max_len - 2));
        ids.push(SEP);
        Ok(TokenSequence {
            ids,
            lang: String::new(),
            surface_len: text.chars().count(),
        })
    }

    pub fn tokenize_sentence(&self, sentence: &Sentence, max_len: usize) -> Result<TokenSequence> {
        let mut seq = self.tokenize(&sentence.text, max_len)?;
        seq.lang = sentence.lang.clone();
        Ok(seq)
    }

    /// Joins pieces back into text: continuation pieces attach to the previous
    /// piece, everything else is separated by a single space. CLS, SEP and
    /// PAD are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let piece = self
                .piece(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range ({})", self.len())))?;
            if matches!(id, PAD | CLS | SEP) {
                continue;
            }
            match piece.strip_prefix(CONTINUATION_MARKER) {
                Some(rest) if !Self::is_special(id) && !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        Ok(out)
    }

    /// Writes one piece per line; line number is the id.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = String::new();
        for p in &self.pieces {
            writeln!(buf, "{p}").expect("writing to a String");
        }
        w.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut pieces = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                return Err(Error::format(format!("vocab line {}", n + 1), "empty piece"));
            }
            pieces.push(line.to_string());
        }
        Self::from_full_list(pieces)
    }
}

/// Per-language reweighting factor `p^alpha / p`, where `p` is the language's
/// share of all tokens. Multiplying a language's counts by its factor turns its
/// share into one proportional to `p^alpha`.
pub fn language_weights(
    token_counts: &BTreeMap<String, f64>,
    smoothing_exponent: f64,
) -> Result<BTreeMap<String, f64>> {
    if !(smoothing_exponent > 0.0 && smoothing_exponent <= 1.0) {
        return Err(Error::invalid(format!(
            "smoothing exponent must lie in (0, 1], got {smoothing_exponent}"
        )));
    }
    let total: f64 = token_counts.values().sum();
    Ok(token_counts
        .iter()
        .map(|(lang, &count)| {
            let w = if count > 0.0 && total > 0.0 {
                let p = count / total;
                p.powf(smoothing_exponent) / p
            } else {
                0.0
            };
            (lang.clone(), w)
        })
        .collect())
}

/// Word frequencies after language smoothing, in a deterministic order.
fn smoothed_word_counts(
    corpora: &BTreeMap<String, Vec<Sentence>>,
    smoothing_exponent: f64,
) -> Result<BTreeMap<String, f64>> {
    let mut raw: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut totals = BTreeMap::new();
    for (lang, sentences) in corpora {
        let counts = raw.entry(lang.as_str()).or_default();
        let mut total = 0.0;
        for s in sentences {
            for w in s.text.split_whitespace() {
                *counts.entry(w).or_default() += 1.0;
                total += 1.0;
            }
        }
        totals.insert(lang.clone(), total);
    }
    let weights = language_weights(&totals, smoothing_exponent)?;
    let mut words: BTreeMap<String, f64> = BTreeMap::new();
    for (lang, counts) in raw {
        let w = weights[lang];
        for (word, c) in counts {
            *words.entry(word.to_string()).or_default() += c * w;
        }
    }
    Ok(words)
}

fn symbol_of(c: char, initial: bool) -> String {
    if initial {
        c.to_string()
    } else {
        format!("{CONTINUATION_MARKER}{c}")
    }
}

/// Induces a vocabulary of `target_size` pieces by repeatedly merging the most
/// frequent adjacent piece pair, with word frequencies smoothed across
/// languages. Ties between equally frequent pairs go to the lexicographically
/// smallest pair.
pub fn build_vocab(corpora: &BTreeMap<String, Vec<Sentence>>, config: &VocabConfig) -> Result<Vocab> {
    if !(config.char_coverage > 0.0 && config.char_coverage <= 1.0) {
        return Err(Error::invalid(format!(
            "char coverage must lie in (0, 1], got {}",
            config.char_coverage
        )));
    }
    let words = smoothed_word_counts(corpora, config.smoothing_exponent)?;

    // Character frequencies decide which characters enter the base alphabet.
    let mut char_freq: BTreeMap<char, f64> = BTreeMap::new();
    for (w, &c) in &words {
        for ch in w.chars() {
            *char_freq.entry(ch).or_default() += c;
        }
    }
    let total_chars: f64 = char_freq.values().sum();
    let mut by_freq: Vec<(char, f64)> = char_freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut covered = std::collections::BTreeSet::new();
    let mut acc = 0.0;
    for (ch, f) in by_freq {
        if total_chars > 0.0 && acc / total_chars >= config.char_coverage {
            break;
        }
        covered.insert(ch);
        acc += f;
    }

    let mut alphabet = std::collections::BTreeSet::new();
    let mut segmented: Vec<(Vec<String>, f64)> = Vec::new();
    for (w, &c) in &words {
        if w.chars().count() > MAX_WORD_CHARS || !w.chars().all(|ch| covered.contains(&ch)) {
            continue;
        }
        let syms: Vec<String> = w
            .chars()
            .enumerate()
            .map(|(i, ch)| symbol_of(ch, i == 0))
            .collect();
        alphabet.extend(syms.iter().cloned());
        segmented.push((syms, c));
    }

    if config.target_size <= NUM_SPECIAL + alphabet.len() {
        return Err(Error::invalid(format!(
            "target size {} must exceed {} special tokens plus an alphabet of {}",
            config.target_size,
            NUM_SPECIAL,
            alphabet.len()
        )));
    }

    let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut ids: HashMap<String, u32> = HashMap::new();
    for (i, p) in pieces.iter().enumerate() {
        ids.insert(p.clone(), i as u32);
    }
    for a in alphabet {
        ids.insert(a.clone(), pieces.len() as u32);
        pieces.push(a);
    }

    let mut words: Vec<(Vec<u32>, f64)> = segmented
        .into_iter()
        .map(|(syms, c)| (syms.iter().map(|s| ids[s]).collect(), c))
        .collect();

    while pieces.len() < config.target_size {
        let mut pair_freq: HashMap<(u32, u32), f64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pair_freq.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = pair_freq.into_iter().max_by(|(pa, fa), (pb, fb)| {
            fa.total_cmp(fb).then_with(|| {
                let ka = (&pieces[pa.0 as usize], &pieces[pa.1 as usize]);
                let kb = (&pieces[pb.0 as usize], &pieces[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((left, right), _)) = best else {
            break;
        };
        let right_piece = &pieces[right as usize];
        let merged = format!(
            "{}{}",
            pieces[left as usize],
            right_piece.strip_prefix(CONTINUATION_MARKER).unwrap_or(right_piece)
        );
        let merged_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                ids.insert(merged.clone(), id);
                pieces.push(merged);
                id
            }
        };
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            let mut out = Vec::with_capacity(syms.len());
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(merged_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }

    Vocab::from_full_list(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc_vocab() -> Vocab {
        Vocab::from_pieces(["a", "ab", "##c"]).unwrap()
    }

    fn corpus(lang: &str, lines: &[&str]) -> Vec<Sentence> {
        lines
            .iter()
            .enumerate()
            .map(|(i, t)| Sentence::new(format!("{lang}{i}"), lang, *t))
            .collect()
    }

    #[test]
    fn greedy_longest_match() {
        let v = abc_vocab();
        let seq = v.tokenize("abc", 16).unwrap();
        let ab = v.id("ab").unwrap();
        let c = v.id("##c").unwrap();
        assert_eq!(seq.ids, vec![CLS, ab, c, SEP]);
        assert_eq!(v.detokenize(&seq.ids).unwrap(), "abc");
    }

    #[test]
    fn empty_text() {
        let v = abc_vocab();
        let seq = v.tokenize("", 8).unwrap();
        assert_eq!(seq.ids, vec![CLS, SEP]);
        assert_eq!(v.detokenize(&seq.ids).unwrap(), "");
    }

    #[test]
    fn unknown_glyph() {
        let v = abc_vocab();
        assert_eq!(v.tokenize("\u{2603}", 8).unwrap().ids, vec![CLS, UNK, SEP]);
        // a word whose tail cannot be matched collapses to a single UNK
        assert_eq!(v.tokenize("abz a", 8).unwrap().ids, vec![CLS, UNK, v.id("a").unwrap(), SEP]);
    }

    #[test]
    fn truncation_keeps_first_content_tokens() {
        let v = abc_vocab();
        let seq = v.tokenize("a a a a a", 4).unwrap();
        assert_eq!(seq.ids.len(), 4);
        assert_eq!(seq.ids[0], CLS);
        assert_eq!(seq.ids[3], SEP);
        assert!(v.tokenize("a", 2).is_err());
    }

    #[test]
    fn detokenize_rejects_out_of_range() {
        let v = abc_vocab();
        assert!(v.detokenize(&[CLS, 99]).is_err());
    }

    #[test]
    fn smoothing_weights() {
        let mut counts = BTreeMap::new();
        counts.insert("hi".to_string(), 900.0);
        counts.insert("lo".to_string(), 100.0);
        let w = language_weights(&counts, 0.3).unwrap();
        let hi = 0.9f64.powf(0.3) / 0.9;
        let lo = 0.1f64.powf(0.3) / 0.1;
        assert!((w["hi"] - hi).abs() < 1e-12);
        assert!((w["lo"] - lo).abs() < 1e-12);
        assert!((hi - 1.0763).abs() < 1e-3, "{hi}");
        assert!((lo - 5.0119).abs() < 1e-3, "{lo}");
        assert!((w["lo"] / w["hi"] - 4.656).abs() < 1e-2);

        let mut one = BTreeMap::new();
        one.insert("xx".to_string(), 1234.0);
        assert_eq!(language_weights(&one, 1.0).unwrap()["xx"], 1.0);
        assert!(language_weights(&one, 0.0).is_err());
        assert!(language_weights(&one, 1.5).is_err());
    }

    #[test]
    fn merges_follow_frequency_with_lexicographic_ties() {
        let mut corpora = BTreeMap::new();
        corpora.insert("xx".to_string(), corpus("xx", &["ab ab ab cd"]));
        // alphabet: a ##b c ##d -> 4 pieces; 5 specials -> 9; two merges -> 11
        let v = build_vocab(
            &corpora,
            &VocabConfig {
                target_size: 11,
                smoothing_exponent: 1.0,
                char_coverage: 1.0,
            },
        )
        .unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v.piece(9), Some("ab"));
        assert_eq!(v.piece(10), Some("cd"));
    }

    #[test]
    fn target_size_too_small() {
        let mut corpora = BTreeMap::new();
        corpora.insert("xx".to_string(), corpus("xx", &["abc"]));
        let err = build_vocab(
            &corpora,
            &VocabConfig {
                target_size: 8,
                ..VocabConfig::default()
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn merge_stops_when_nothing_left() {
        let mut corpora = BTreeMap::new();
        corpora.insert("xx".to_string(), corpus("xx", &["abc"]));
        let v = build_vocab(
            &corpora,
            &VocabConfig {
                target_size: 100,
                ..VocabConfig::default()
            },
        )
        .unwrap();
        assert_eq!(v.tokenize("abc", 8).unwrap().ids.len(), 3);
        assert!(v.len() < 100);
    }

    #[test]
    fn single_language_smoothing_is_neutral() {
        let mut corpora = BTreeMap::new();
        corpora.insert(
            "xx".to_string(),
            corpus("xx", &["the cat sat", "the mat", "a cat on the mat"]),
        );
        let cfg = |a| VocabConfig {
            target_size: 30,
            smoothing_exponent: a,
            char_coverage: 1.0,
        };
        assert_eq!(
            build_vocab(&corpora, &cfg(1.0)).unwrap(),
            build_vocab(&corpora, &cfg(0.3)).unwrap()
        );
    }

    #[test]
    fn file_round_trip() {
        let v = abc_vocab();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n"));
        let back = Vocab::read_from(&buf[..]).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::read_from(&b"a\nb\n"[..]).is_err());
    }
}
