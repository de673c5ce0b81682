//! Toy bilingual corpus: two "languages" over disjoint alphabets, where every
//! target word is the letter-by-letter substitution of its source word.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SentencePair};
use crate::error::{Error, Result};

pub const SOURCE_ALPHABET: &str = "abcdefghijklm";
pub const TARGET_ALPHABET: &str = "nopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherConfig {
    pub lexicon_size: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub zipf_exponent: f64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// Unpaired sentences per language.
    pub mono_sentences: usize,
    pub src_lang: String,
    pub tgt_lang: String,
    pub seed: u64,
}

impl Default for CipherConfig {
    fn default() -> Self {
        Self {
            lexicon_size: 500,
            min_word_len: 2,
            max_word_len: 7,
            min_words: 4,
            max_words: 10,
            zipf_exponent: 1.0,
            train_pairs: 5000,
            test_pairs: 1000,
            mono_sentences: 2000,
            src_lang: "xx".into(),
            tgt_lang: "yy".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CipherCorpus {
    /// `(source word, target word)`, most frequent first.
    pub lexicon: Vec<(String, String)>,
    pub train: Vec<SentencePair>,
    /// No test source text occurs among the training sources.
    pub test: Vec<SentencePair>,
    pub mono: Vec<Sentence>,
}

impl CipherCorpus {
    pub fn translate(&self, text: &str) -> String {
        text.chars().map(substitute).collect()
    }
}

fn substitute(c: char) -> char {
    match SOURCE_ALPHABET.find(c) {
        Some(i) => TARGET_ALPHABET.as_bytes()[i] as char,
        None => c,
    }
}

pub fn cipher_corpus(config: &CipherConfig) -> Result<CipherCorpus> {
    if config.min_word_len == 0 || config.min_word_len > config.max_word_len {
        return Err(Error::invalid("bad word length range"));
    }
    if config.min_words == 0 || config.min_words > config.max_words {
        return Err(Error::invalid("bad sentence length range"));
    }
    if config.lexicon_size == 0 {
        return Err(Error::invalid("empty lexicon"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let letters: Vec<char> = SOURCE_ALPHABET.chars().collect();
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(config.lexicon_size);
    let mut attempts = 0;
    while words.len() < config.lexicon_size {
        attempts += 1;
        if attempts > config.lexicon_size * 1000 {
            return Err(Error::invalid("word length range too narrow for the lexicon size"));
        }
        let len = rng.gen_range(config.min_word_len..=config.max_word_len);
        let w: String = (0..len).map(|_| *letters.choose(&mut rng).unwrap()).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let weights: Vec<f64> = (0..words.len()).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)).collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    let sentence = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(config.min_words..=config.max_words);
        (0..n).map(|_| words[zipf.sample(rng)].as_str()).collect::<Vec<_>>().join(" ")
    };

    let translate = |t: &str| -> String { t.chars().map(substitute).collect() };
    let mut texts = HashSet::new();
    let mut make_pairs = |split: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<SentencePair> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let text = sentence(rng);
            if !texts.insert(text.clone()) {
                continue;
            }
            let i = out.len();
            let tgt = translate(&text);
            out.push(SentencePair::new(
                Sentence::new(format!("{}-{split}-{i:05}", config.src_lang), &config.src_lang, text),
                Sentence::new(format!("{}-{split}-{i:05}", config.tgt_lang), &config.tgt_lang, tgt),
            ));
        }
        out
    };
    let train = make_pairs("train", config.train_pairs, &mut rng);
    let test = make_pairs("test", config.test_pairs, &mut rng);
    let mut mono = Vec::with_capacity(2 * config.mono_sentences);
    for i in 0..config.mono_sentences {
        mono.push(Sentence::new(format!("{}-mono-{i:05}", config.src_lang), &config.src_lang, sentence(&mut rng)));
    }
    for i in 0..config.mono_sentences {
        let t = translate(&sentence(&mut rng));
        mono.push(Sentence::new(format!("{}-mono-{i:05}", config.tgt_lang), &config.tgt_lang, t));
    }
    let lexicon = words.iter().map(|w| (w.clone(), translate(w))).collect();
    Ok(CipherCorpus {
        lexicon,
        train,
        test,
        mono,
    })
}

/// Re-pairs a random `fraction` of the pairs among themselves so that none of
/// the chosen sources keeps its own target. Scores are cleared.
pub fn mispair(pairs: &[SentencePair], fraction: f64, seed: u64) -> Result<Vec<SentencePair>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (fraction * pairs.len() as f64).round() as usize;
    let mut chosen = rand::seq::index::sample(&mut rng, pairs.len(), k).into_vec();
    chosen.shuffle(&mut rng);
    let mut out = pairs.to_vec();
    if k >= 2 {
        // rotating a shuffled selection by one is a derangement of it
        for (j, &i) in chosen.iter().enumerate() {
            out[i].tgt = pairs[chosen[(j + 1) % k]].tgt.clone();
        }
    }
    for p in &mut out {
        p.score = None;
    }
    Ok(out)
}
