//! Toy-scale training runs. Each test builds the synthetic cipher corpus, so
//! they take a few seconds apiece in an optimized build.

use std::collections::BTreeMap;

use bitext_core::evaluation::{self, GoldAlignment};
use bitext_core::loss::{self, LossConfig};
use bitext_core::synthetic::{self, CipherConfig, CipherCorpus};
use bitext_core::trainer::{self, DualEncoderTrainer, Objective, PretrainConfig, TrainConfig};
use bitext_core::vocab::{self, Vocab, VocabConfig};
use bitext_core::{EmbeddingSet, EncoderConfig, EncoderParams, IndexConfig, Sentence, SentencePair, VectorIndex};

fn corpus_and_vocab() -> (CipherCorpus, Vocab) {
    let corpus = synthetic::cipher_corpus(&CipherConfig::default()).unwrap();
    let mut by_lang: BTreeMap<String, Vec<Sentence>> = BTreeMap::new();
    for s in corpus.train.iter().flat_map(|p| [&p.src, &p.tgt]).chain(&corpus.mono) {
        by_lang.entry(s.lang.clone()).or_default().push(s.clone());
    }
    let config = VocabConfig {
        target_size: 1200,
        ..VocabConfig::default()
    };
    let vocab = vocab::build_vocab(&by_lang, &config).unwrap();
    (corpus, vocab)
}

fn p_at_1(params: &EncoderParams, vocab: &Vocab, test: &[SentencePair]) -> f64 {
    let (xs, ys) = trainer::encode_pairs(params, vocab, test).unwrap();
    let src = EmbeddingSet::new(test.iter().map(|p| p.src.id.clone()).collect(), xs).unwrap();
    let idx = VectorIndex::build(ys, test.iter().map(|p| p.tgt.id.clone()).collect(), &IndexConfig::exact()).unwrap();
    let gold = GoldAlignment::from_pairs(test.iter().map(|p| (p.src.id.clone(), p.tgt.id.clone())).collect()).unwrap();
    evaluation::p_at_1(&src, &idx, &gold).unwrap()
}

fn config(steps: usize, margin: f64) -> TrainConfig {
    TrainConfig {
        steps,
        learning_rate: 3e-3,
        margin,
        ..TrainConfig::default()
    }
}

/// First multiple of `every` at which test P@1 reaches `target`.
fn steps_to_target(init: EncoderParams, corpus: &CipherCorpus, vocab: &Vocab, target: f64, every: u64) -> Option<u64> {
    let mut t = DualEncoderTrainer::new(init, vocab, &corpus.train, config(900, 0.3)).unwrap();
    while !t.is_done() {
        let r = t.step().unwrap();
        if r.step.is_multiple_of(every) && p_at_1(t.params(), vocab, &corpus.test) >= target {
            return Some(r.step);
        }
    }
    None
}

#[test]
fn mlm_loss_starts_at_ln_v_and_falls_by_a_fifth() {
    let (corpus, vocab) = corpus_and_vocab();
    let params = EncoderParams::init(EncoderConfig::toy(vocab.len()), 0).unwrap();
    let pc = PretrainConfig {
        steps_per_stage: 500,
        mlm_steps: 1,
        tlm_steps: 0,
        learning_rate: 1e-2,
        ..PretrainConfig::default()
    };
    let (_, log) = trainer::pretrain(params, &vocab, &corpus.mono, &[], pc, &[2]).unwrap();
    assert_eq!(log.len(), 500);
    assert!(log.iter().all(|r| r.objective == Objective::Mlm));
    let ln_v = (vocab.len() as f64).ln();
    assert!((log[0].loss - ln_v).abs() < 1e-9, "{} vs {ln_v}", log[0].loss);
    let tail: f64 = log[480..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
    assert!(tail <= 0.8 * ln_v, "final MLM loss {tail:.3} vs initial {ln_v:.3}");
}

#[test]
fn zero_margin_retrieves_worse_than_default_margin() {
    let (corpus, vocab) = corpus_and_vocab();
    let run = |margin| {
        let init = EncoderParams::init(EncoderConfig::toy(vocab.len()), 0).unwrap();
        let (p, _) = trainer::finetune_dual_encoder(init, &vocab, &corpus.train, config(900, margin)).unwrap();
        p_at_1(&p, &vocab, &corpus.test)
    };
    let (without, with) = (run(0.0), run(0.3));
    assert!(without < with, "margin 0: {without:.3}, margin 0.3: {with:.3}");
}

#[test]
fn pretrained_init_reaches_target_sooner() {
    let (corpus, vocab) = corpus_and_vocab();
    let mut shallow = EncoderConfig::toy(vocab.len());
    shallow.num_layers = 1;
    let pc = PretrainConfig {
        steps_per_stage: 1000,
        learning_rate: 1e-2,
        ..PretrainConfig::default()
    };
    let start = EncoderParams::init(shallow, 0).unwrap();
    let (pretrained, _) = trainer::pretrain(start, &vocab, &corpus.mono, &corpus.train, pc, &[1, 2]).unwrap();
    let random = EncoderParams::init(EncoderConfig::toy(vocab.len()), 0).unwrap();
    let with = steps_to_target(pretrained, &corpus, &vocab, 0.8, 25).expect("pretrained run never reached 0.8");
    let without = steps_to_target(random, &corpus, &vocab, 0.8, 25).unwrap_or(u64::MAX);
    assert!(with < without, "pretrained reached P@1 0.8 at step {with}, random init at {without}");
}

#[test]
fn frozen_batch_loss_mostly_falls_over_100_step_windows() {
    let (corpus, vocab) = corpus_and_vocab();
    let frozen = &corpus.test[..64];
    let lc = LossConfig::default();
    let eval = |p: &EncoderParams| {
        let (x, y) = trainer::encode_pairs(p, &vocab, frozen).unwrap();
        loss::bidirectional_loss(&loss::similarity_matrix(&x, &y).unwrap(), &lc).unwrap()
    };
    let init = EncoderParams::init(EncoderConfig::toy(vocab.len()), 0).unwrap();
    let mut t = DualEncoderTrainer::new(init, &vocab, &corpus.train, config(900, 0.3)).unwrap();
    let mut curve = vec![eval(t.params())];
    while !t.is_done() {
        let r = t.step().unwrap();
        if r.step.is_multiple_of(10) {
            curve.push(eval(t.params()));
        }
    }
    let windows: Vec<bool> = curve.windows(11).map(|w| w[10] <= w[0]).collect();
    let good = windows.iter().filter(|&&g| g).count();
    assert!(good * 10 >= windows.len() * 9, "{good}/{} windows non-increasing", windows.len());
}

#[test]
fn both_sides_share_one_encoder() {
    let (corpus, vocab) = corpus_and_vocab();
    let params = EncoderParams::init(EncoderConfig::toy(vocab.len()), 4).unwrap();
    let mirrored: Vec<SentencePair> = corpus.test[..20]
        .iter()
        .map(|p| SentencePair::new(p.src.clone(), p.src.clone()))
        .collect();
    let (x, y) = trainer::encode_pairs(&params, &vocab, &mirrored).unwrap();
    assert_eq!(x, y);
}

#[test]
fn same_seed_gives_bitwise_identical_trajectories() {
    let (corpus, vocab) = corpus_and_vocab();
    let run = || {
        let init = EncoderParams::init(EncoderConfig::toy(vocab.len()), 9).unwrap();
        let mut t = DualEncoderTrainer::new(init, &vocab, &corpus.train, config(12, 0.3)).unwrap();
        (0..12)
            .map(|_| {
                let r = t.step().unwrap();
                (r.loss.to_bits(), t.params().clone())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
