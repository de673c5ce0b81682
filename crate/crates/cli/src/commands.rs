use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use bitext_core::checkpoint::{self, Checkpoint};
use bitext_core::corpus::{self, Sentence, SentencePair};
use bitext_core::encoder::{self, EncoderConfig, EncoderParams, MaskPlan, Pooling};
use bitext_core::evaluation::{self, Candidate, GoldAlignment, LanguageGroup, LanguageSet, SearchDirection};
use bitext_core::index::{self, EmbeddingSet, IndexConfig, VectorIndex};
use bitext_core::mining::{self, MiningConfig, MiningDirection};
use bitext_core::negatives::{self, NegativeScope};
use bitext_core::synthetic::{self, CipherConfig};
use bitext_core::trainer::{self, DualEncoderTrainer, OptimizerState, PretrainConfig, Pretrainer, TrainConfig};
use bitext_core::vocab::{self, Vocab, VocabConfig};
use bitext_core::Error;
use serde::Serialize;

use crate::output::{self, OutDir, Run};
use crate::{
    BuildVocabArgs, Cli, Command, DirectionArg, EncodeArgs, EvalBuccArgs, EvalP1Args, EvalStsArgs, EvalTatoebaArgs,
    IndexArgs, MineArgs, ModelShape, PoolingArg, PretrainArgs, ReportArgs, SearchArgs, SearchDirectionArg, StatsArgs,
    SynthArgs, TrainArgs, CliError,
};

type Res<T> = Result<T, CliError>;

fn open(path: &Path) -> Res<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn read_mono(path: &Path, lang: &str, prefix: &str) -> Res<Vec<Sentence>> {
    Ok(corpus::read_monolingual(open(path)?, lang, prefix).map_err(|e| located(path, e))?)
}

fn read_pairs(path: &Path) -> Res<Vec<SentencePair>> {
    Ok(corpus::read_pairs(open(path)?).map_err(|e| located(path, e))?)
}

fn load_vocab(path: &Path) -> Res<Vocab> {
    Ok(Vocab::read_from(open(path)?).map_err(|e| located(path, e))?)
}

fn load_model(path: &Path) -> Res<Checkpoint> {
    Ok(checkpoint::load_checkpoint(path)?)
}

fn load_set(pool: &Path, ids: &Path) -> Res<EmbeddingSet> {
    Ok(EmbeddingSet::load(pool, ids)?)
}

fn located(path: &Path, e: Error) -> Error {
    match e {
        Error::Format { location, reason } => Error::Format {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        e => e,
    }
}

fn encoder_config(shape: &ModelShape, vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        hidden_dim: shape.hidden_dim,
        num_layers: shape.layers,
        max_seq_len: shape.max_seq_len,
        embed_dim: shape.embed_dim,
        pooling: match shape.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Cls => Pooling::Cls,
        },
    }
}

fn check_vocab(vocab: &Vocab, params: &EncoderParams) -> Res<()> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} pieces but the model expects {}",
            vocab.len(),
            params.config.vocab_size
        ))
        .into());
    }
    Ok(())
}

fn io_err(name: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(Path::new(name), e)
}

fn write_metrics(out: &mut OutDir, command: &str, metrics: &[(String, f64)], summary: &impl Serialize) -> Res<()> {
    out.write(&format!("{command}.metrics.txt"), |w| Ok(evaluation::write_metrics(metrics, w)?))?;
    let name = format!("{command}.summary.json");
    out.write(&name, |w| {
        serde_json::to_writer_pretty(&mut *w, summary).map_err(|e| io_err(&name)(std::io::Error::other(e)))?;
        writeln!(w).map_err(io_err(&name))
    })?;
    for (k, v) in metrics {
        log::info!("{k}={v:.6}");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Res<()> {
    let run = Run::start();
    let mut out = OutDir::create(&cli.global.out_dir)?;
    let seed = cli.global.seed;
    let (name, config, inputs) = match &cli.command {
        Command::BuildVocab(a) => ("build-vocab", to_json(a)?, build_vocab(a, &mut out)?),
        Command::Synth(a) => ("synth", to_json(a)?, synth(a, seed, &mut out)?),
        Command::Pretrain(a) => ("pretrain", to_json(a)?, pretrain(a, seed, &mut out)?),
        Command::Train(a) => ("train", to_json(a)?, train(a, seed, &mut out)?),
        Command::Encode(a) => ("encode", to_json(a)?, encode(a, &mut out)?),
        Command::Index(a) => ("index", to_json(a)?, build_index(a, seed, &mut out)?),
        Command::Search(a) => ("search", to_json(a)?, search(a, &mut out)?),
        Command::Mine(a) => ("mine", to_json(a)?, mine(a, seed, &mut out)?),
        Command::EvalP1(a) => ("eval-p1", to_json(a)?, eval_p1(a, seed, &mut out)?),
        Command::EvalTatoeba(a) => ("eval-tatoeba", to_json(a)?, eval_tatoeba(a, &mut out)?),
        Command::EvalBucc(a) => ("eval-bucc", to_json(a)?, eval_bucc(a, &mut out)?),
        Command::EvalSts(a) => ("eval-sts", to_json(a)?, eval_sts(a, &mut out)?),
        Command::Stats(a) => ("stats", to_json(a)?, stats(a, &mut out)?),
        Command::Report(a) => ("report", to_json(a)?, report(a, &mut out)?),
    };
    let mut full = serde_json::Map::new();
    full.insert("global".into(), to_json(&cli.global)?);
    full.insert("command".into(), config);
    output::write_manifest(&mut out, name, &full, seed, cli.global.deterministic, &inputs, &run)
}

fn to_json(v: &impl Serialize) -> Res<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))
}

fn build_vocab(a: &BuildVocabArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let mut sentences = Vec::new();
    for (i, path) in a.input.iter().enumerate() {
        sentences.extend(read_mono(path, &a.lang, &format!("f{i}:"))?);
    }
    let kept = corpus::filter_monolingual(sentences, a.min_chars, a.max_chars)?;
    log::info!("building vocabulary from {} sentences", kept.len());
    let by_lang = corpus::group_by_language(&kept);
    let config = VocabConfig {
        target_size: a.vocab_size,
        smoothing_exponent: a.smoothing,
        char_coverage: a.char_coverage,
    };
    let v = vocab::build_vocab(&by_lang, &config)?;
    out.write("vocab.txt", |w| Ok(v.write_to(w)?))?;
    Ok(a.input.clone())
}

fn write_sentences(out: &mut OutDir, name: &str, sentences: impl Iterator<Item = Sentence>) -> Res<()> {
    out.write(name, |w| {
        for s in sentences {
            writeln!(w, "{}\t{}", s.lang, s.text).map_err(io_err(name))?;
        }
        Ok(())
    })?;
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let config = CipherConfig {
        lexicon_size: a.lexicon,
        train_pairs: a.train_pairs,
        test_pairs: a.test_pairs,
        mono_sentences: a.mono,
        seed,
        ..CipherConfig::default()
    };
    let c = synthetic::cipher_corpus(&config)?;
    let train = synthetic::mispair(&c.train, a.noise, seed)?;
    out.write("train.tsv", |w| Ok(corpus::write_pairs(&train, w)?))?;
    out.write("test.tsv", |w| Ok(corpus::write_pairs(&c.test, w)?))?;
    write_sentences(out, "mono.txt", c.mono.iter().cloned())?;
    write_sentences(out, "train_src.txt", train.iter().map(|p| p.src.clone()))?;
    write_sentences(out, "train_tgt.txt", train.iter().map(|p| p.tgt.clone()))?;
    write_sentences(out, "test_src.txt", c.test.iter().map(|p| p.src.clone()))?;
    write_sentences(out, "test_tgt.txt", c.test.iter().map(|p| p.tgt.clone()))?;
    // encode numbers lines from 1; `--id-prefix s` / `t` reproduces these ids
    out.write("test_gold.tsv", |w| {
        for i in 1..=c.test.len() {
            writeln!(w, "s{i}\tt{i}").map_err(io_err("test_gold.tsv"))?;
        }
        Ok(())
    })?;
    Ok(Vec::new())
}

fn default_stages(layers: usize) -> Vec<usize> {
    match encoder::progressive_schedule(layers) {
        Ok(s) => s.to_vec(),
        Err(_) if layers.is_multiple_of(2) => vec![layers / 2, layers],
        Err(_) => vec![layers],
    }
}

fn pretrain(a: &PretrainArgs, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let mut inputs = vec![a.vocab.clone()];
    let mono = match &a.mono {
        Some(p) => {
            inputs.push(p.clone());
            read_mono(p, "und", "m")?
        }
        None => Vec::new(),
    };
    let pairs = match &a.pairs {
        Some(p) => {
            inputs.push(p.clone());
            read_pairs(p)?
        }
        None => Vec::new(),
    };
    if mono.is_empty() && pairs.is_empty() {
        return Err(CliError::Usage("pretrain needs --mono and/or --pairs".into()));
    }
    let stages = if a.stages.is_empty() { default_stages(a.shape.layers) } else { a.stages.clone() };
    if stages.last() != Some(&a.shape.layers) {
        return Err(CliError::Usage(format!("last stage must have {} layers", a.shape.layers)));
    }
    let mut cfg = encoder_config(&a.shape, vocab.len());
    cfg.num_layers = stages[0];
    let params = EncoderParams::init(cfg, seed)?;
    let config = PretrainConfig {
        batch_size: a.batch_size,
        steps_per_stage: a.steps_per_stage,
        learning_rate: a.learning_rate,
        weight_decay: a.weight_decay,
        mlm_steps: a.mlm_steps,
        tlm_steps: a.tlm_steps,
        mask: MaskPlan {
            rate: a.mask_rate,
            cap: a.mask_cap,
        },
        seed,
    };
    let mut p = Pretrainer::new(params, &vocab, &mono, &pairs, config, &stages)?;
    let mut log = Vec::new();
    while !p.is_done() {
        match p.step() {
            Ok(r) => {
                if r.step % 100 == 0 {
                    log::info!("stage {} step {} {:?} loss {:.4}", r.stage, r.step, r.objective, r.loss);
                }
                log.push(r);
            }
            Err(e) => {
                let params = p.params().clone();
                out.write("last_good.ckpt", |w| Ok(checkpoint::write_checkpoint(&params, None, w)?))?;
                out.write("pretrain.log", |w| Ok(trainer::write_pretrain_log(&log, w)?))?;
                return Err(e.into());
            }
        }
    }
    out.write("pretrain.log", |w| Ok(trainer::write_pretrain_log(&log, w)?))?;
    let params = p.into_params();
    out.write("model.ckpt", |w| Ok(checkpoint::write_checkpoint(&params, None, w)?))?;
    Ok(inputs)
}

fn train(a: &TrainArgs, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let pairs = read_pairs(&a.pairs)?;
    let mut inputs = vec![a.vocab.clone(), a.pairs.clone()];
    let (params, state) = if let Some(path) = &a.resume {
        inputs.push(path.clone());
        let ck = load_model(path)?;
        let state = ck
            .optimizer
            .ok_or_else(|| Error::Missing(format!("{} has no optimizer state to resume", path.display())))?;
        (ck.params, state)
    } else if let Some(path) = &a.init {
        inputs.push(path.clone());
        let params = load_model(path)?.params;
        let state = OptimizerState::new(&params);
        (params, state)
    } else {
        let params = EncoderParams::init(encoder_config(&a.shape, vocab.len()), seed)?;
        let state = OptimizerState::new(&params);
        (params, state)
    };
    check_vocab(&vocab, &params)?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        steps: a.steps,
        learning_rate: a.learning_rate,
        weight_decay: a.weight_decay,
        margin: a.margin,
        scale: a.scale,
        shards: a.shards,
        scope: if a.local_negatives { NegativeScope::LocalShard } else { NegativeScope::CrossShard },
        seed,
    };
    let hard = match (&a.weak_model, a.hard_negatives) {
        (Some(path), h) if h > 0 => {
            inputs.push(path.clone());
            let weak = load_model(path)?.params;
            check_vocab(&vocab, &weak)?;
            let mut seen = std::collections::HashSet::new();
            let pool: Vec<Sentence> = pairs
                .iter()
                .filter(|p| seen.insert(p.tgt.text.clone()))
                .map(|p| p.tgt.clone())
                .collect();
            Some(negatives::mine_hard_negatives(&weak, &vocab, &pairs, &pool, h)?)
        }
        _ => None,
    };
    let mut t = DualEncoderTrainer::resume(params, state, &vocab, &pairs, config, hard.as_ref())?;
    let stop = a.stop_after.map_or(a.steps as u64, |s| s.min(a.steps) as u64);
    let mut log = Vec::new();
    while t.step_count() < stop {
        match t.step() {
            Ok(r) => {
                if r.step % 100 == 0 {
                    log::info!("step {} loss {:.4} lr {:.2e}", r.step, r.loss, r.lr);
                }
                log.push(r);
                if a.checkpoint_every > 0 && r.step % a.checkpoint_every as u64 == 0 {
                    out.write("checkpoint.ckpt", |w| Ok(checkpoint::write_checkpoint(t.params(), Some(t.state()), w)?))?;
                }
            }
            Err(e) => {
                out.write("last_good.ckpt", |w| Ok(checkpoint::write_checkpoint(t.params(), Some(t.state()), w)?))?;
                out.write("train.log", |w| Ok(trainer::write_train_log(&log, w)?))?;
                return Err(e.into());
            }
        }
    }
    out.write("train.log", |w| Ok(trainer::write_train_log(&log, w)?))?;
    out.write("model.ckpt", |w| Ok(checkpoint::write_checkpoint(t.params(), Some(t.state()), w)?))?;
    Ok(inputs)
}

fn encode(a: &EncodeArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let params = load_model(&a.model)?.params;
    check_vocab(&vocab, &params)?;
    let sentences = read_mono(&a.input, &a.lang, &a.id_prefix)?;
    let vectors = mining::encode_sentences(&params, &vocab, &sentences)?;
    let ids: Vec<String> = sentences.iter().map(|s| s.id.clone()).collect();
    out.write(&format!("{}.pool", a.name), |w| Ok(index::write_pool(&vectors, w)?))?;
    out.write(&format!("{}.ids", a.name), |w| Ok(index::write_ids(&ids, w)?))?;
    Ok(vec![a.vocab.clone(), a.model.clone(), a.input.clone()])
}

fn index_config(clusters: usize, probes: usize, seed: u64) -> IndexConfig {
    if clusters == 0 {
        IndexConfig::exact()
    } else {
        IndexConfig {
            seed,
            ..IndexConfig::partitioned(clusters, probes)
        }
    }
}

fn build_index(a: &IndexArgs, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let set = load_set(&a.pool, &a.ids)?;
    let config = IndexConfig {
        kmeans_iters: a.kmeans_iters,
        ..index_config(a.clusters, a.probes, seed)
    };
    let idx = VectorIndex::build(set.vectors, set.ids, &config)?;
    out.write_dir(&a.name, |dir| Ok(idx.save(dir)?))?;
    Ok(vec![a.pool.clone(), a.ids.clone()])
}

fn search(a: &SearchArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let idx = VectorIndex::load(&a.index, a.probes)?;
    let queries = load_set(&a.queries, &a.query_ids)?;
    let mut rows = Vec::with_capacity(queries.len());
    for (i, qid) in queries.ids.iter().enumerate() {
        rows.push((qid, idx.search(queries.vectors.row(i), a.k)?));
    }
    out.write("hits.tsv", |w| {
        for (qid, hits) in &rows {
            for (rank, h) in hits.iter().enumerate() {
                writeln!(w, "{qid}\t{}\t{}\t{:.6}", rank + 1, h.id, h.score).map_err(io_err("hits.tsv"))?;
            }
        }
        Ok(())
    })?;
    Ok(vec![a.index.clone(), a.queries.clone(), a.query_ids.clone()])
}

fn mine(a: &MineArgs, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let params = load_model(&a.model)?.params;
    check_vocab(&vocab, &params)?;
    let src = read_mono(&a.src, &a.src_lang, "s")?;
    let tgt = read_mono(&a.tgt, &a.tgt_lang, "t")?;
    let config = MiningConfig {
        similarity_threshold: a.threshold,
        neighbors_k: a.k,
        selection_fraction: a.fraction,
        direction: match a.direction {
            DirectionArg::Forward => MiningDirection::Forward,
            DirectionArg::Backward => MiningDirection::Backward,
            DirectionArg::Auto => MiningDirection::Auto,
        },
    };
    config.validate()?;
    let run = mining::run_pipeline(&src, &tgt, &params, &vocab, &config, &index_config(a.clusters, a.probes, seed))?;
    let report = mining::mining_report(&run);
    log::info!(
        "mined {} pairs, {} after dedup, {} selected",
        report.pairs_emitted,
        report.pairs_after_dedup,
        report.pairs_selected
    );
    out.write("mined.tsv", |w| Ok(corpus::write_pairs(&run.deduped, w)?))?;
    out.write("selected.tsv", |w| Ok(corpus::write_pairs(&run.selected, w)?))?;
    out.write("mining_report.txt", |w| Ok(report.write_to(w)?))?;
    Ok(vec![a.vocab.clone(), a.model.clone(), a.src.clone(), a.tgt.clone()])
}

fn read_gold(path: &Path) -> Res<Vec<(String, String)>> {
    Ok(evaluation::read_gold(open(path)?).map_err(|e| located(path, e))?)
}

fn eval_p1(a: &EvalP1Args, seed: u64, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let src = load_set(&a.pools.src_pool, &a.pools.src_ids)?;
    let tgt = load_set(&a.pools.tgt_pool, &a.pools.tgt_ids)?;
    let gold = GoldAlignment::new(read_gold(&a.gold)?, src.ids.clone(), tgt.ids.clone())?;
    let idx = VectorIndex::build(tgt.vectors, tgt.ids, &index_config(a.clusters, a.probes, seed))?;
    let p1 = evaluation::p_at_1(&src, &idx, &gold)?;
    let metrics = vec![("p_at_1".to_string(), p1), ("queries".to_string(), gold.len() as f64)];
    write_metrics(out, "eval-p1", &metrics, &BTreeMap::from_iter(metrics.iter().cloned()))?;
    Ok(vec![a.pools.src_pool.clone(), a.pools.src_ids.clone(), a.pools.tgt_pool.clone(), a.pools.tgt_ids.clone(), a.gold.clone()])
}

fn split_assignment<'a>(s: &'a str, what: &str) -> Res<(&'a str, &'a str)> {
    s.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| CliError::Usage(format!("{what} must look like name=value, got {s:?}")))
}

fn eval_tatoeba(a: &EvalTatoebaArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let mut sets = BTreeMap::new();
    let mut inputs = Vec::new();
    for entry in &a.languages {
        let (lang, dir) = split_assignment(entry, "--language")?;
        let dir = PathBuf::from(dir);
        let sources = load_set(&dir.join("src.pool"), &dir.join("src.ids"))?;
        let targets = load_set(&dir.join("tgt.pool"), &dir.join("tgt.ids"))?;
        let gold = GoldAlignment::new(read_gold(&dir.join("gold.tsv"))?, sources.ids.clone(), targets.ids.clone())?;
        sets.insert(lang.to_string(), LanguageSet { sources, targets, gold });
        inputs.push(dir);
    }
    let groups = a
        .groups
        .iter()
        .map(|g| {
            let (name, langs) = split_assignment(g, "--group")?;
            Ok(LanguageGroup {
                name: name.to_string(),
                languages: langs.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
            })
        })
        .collect::<Res<Vec<_>>>()?;
    let report = evaluation::tatoeba_accuracy(&sets, &groups)?;
    let mut metrics: Vec<(String, f64)> = report.per_language.iter().map(|(l, v)| (format!("accuracy.{l}"), *v)).collect();
    for g in &report.groups {
        if let Some(m) = g.mean {
            metrics.push((format!("group.{}", g.name), m));
        }
        metrics.push((format!("group.{}.missing", g.name), g.missing.len() as f64));
    }
    write_metrics(out, "eval-tatoeba", &metrics, &report)?;
    Ok(inputs)
}

fn eval_bucc(a: &EvalBuccArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let pairs = read_gold(&a.gold)?;
    let mut inputs = vec![a.gold.clone()];
    let (candidates, gold) = if let Some(path) = &a.candidates {
        inputs.push(path.clone());
        let c: Vec<Candidate> = evaluation::read_candidates(open(path)?).map_err(|e| located(path, e))?;
        (c, GoldAlignment::from_pairs(pairs)?)
    } else {
        let missing = || CliError::Usage("eval-bucc needs --candidates or all of --src-pool, --src-ids, --tgt-pool, --tgt-ids".into());
        let (sp, si, tp, ti) = (
            a.src_pool.as_ref().ok_or_else(missing)?,
            a.src_ids.as_ref().ok_or_else(missing)?,
            a.tgt_pool.as_ref().ok_or_else(missing)?,
            a.tgt_ids.as_ref().ok_or_else(missing)?,
        );
        inputs.extend([sp.clone(), si.clone(), tp.clone(), ti.clone()]);
        let src = load_set(sp, si)?;
        let tgt = load_set(tp, ti)?;
        let gold = GoldAlignment::new(pairs, src.ids.clone(), tgt.ids.clone())?;
        let direction = match a.direction {
            SearchDirectionArg::Forward => SearchDirection::Forward,
            SearchDirectionArg::Backward => SearchDirection::Backward,
        };
        let c = evaluation::generate_candidates(&src, &tgt, a.k, direction, &IndexConfig::exact())?;
        out.write("candidates.tsv", |w| Ok(evaluation::write_candidates(&c, w)?))?;
        (c, gold)
    };
    let prf = evaluation::bucc_best_f1(&candidates, &gold)?;
    let metrics = vec![
        ("precision".to_string(), prf.precision),
        ("recall".to_string(), prf.recall),
        ("f1".to_string(), prf.f1),
        ("threshold".to_string(), prf.threshold),
    ];
    write_metrics(out, "eval-bucc", &metrics, &prf)?;
    Ok(inputs)
}

fn eval_sts(a: &EvalStsArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let params = load_model(&a.model)?.params;
    check_vocab(&vocab, &params)?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut gold = Vec::new();
    for (n, line) in open(&a.input)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&a.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}: line {}", a.input.display(), n + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        let [x, y, s] = cols[..] else {
            return Err(Error::format(loc(), "expected text_a<TAB>text_b<TAB>score").into());
        };
        let score: f64 = s.trim().parse().map_err(|_| Error::format(loc(), format!("bad score {s:?}")))?;
        left.push(Sentence::new(format!("a{}", n + 1), "und", x));
        right.push(Sentence::new(format!("b{}", n + 1), "und", y));
        gold.push(score);
    }
    let u = mining::encode_sentences(&params, &vocab, &left)?;
    let v = mining::encode_sentences(&params, &vocab, &right)?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..gold.len()).map(|i| (u.row(i).to_vec(), v.row(i).to_vec())).collect();
    let r = evaluation::sts_pearson(&pairs, &gold)?;
    let metrics = vec![("pearson".to_string(), r), ("pairs".to_string(), gold.len() as f64)];
    write_metrics(out, "eval-sts", &metrics, &BTreeMap::from_iter(metrics.iter().cloned()))?;
    Ok(vec![a.vocab.clone(), a.model.clone(), a.input.clone()])
}

fn stats(a: &StatsArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let vocab = load_vocab(&a.vocab)?;
    let mut sentences = Vec::new();
    for (i, p) in a.input.iter().enumerate() {
        sentences.extend(read_mono(p, &a.lang, &format!("f{i}:"))?);
    }
    let by_lang = corpus::stats_by_language(&sentences, &vocab);
    out.write("stats.txt", |w| Ok(corpus::write_stats_report(&by_lang, w)?))?;
    let mut inputs = vec![a.vocab.clone()];
    inputs.extend(a.input.iter().cloned());
    Ok(inputs)
}

fn report(a: &ReportArgs, out: &mut OutDir) -> Res<Vec<PathBuf>> {
    let mut all: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for path in &a.metrics {
        let stem = path
            .file_name()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".txt").trim_end_matches(".metrics").to_string())
            .unwrap_or_default();
        let section = all.entry(stem).or_default();
        for (n, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|e| CliError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = || format!("{}: line {}", path.display(), n + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(loc(), "expected metric=value"))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::format(loc(), format!("bad value {v:?}")))?;
            section.insert(k.trim().to_string(), v);
        }
    }
    let flat: Vec<(String, f64)> = all
        .iter()
        .flat_map(|(s, m)| m.iter().map(move |(k, v)| (format!("{s}.{k}"), *v)))
        .collect();
    out.write("report.txt", |w| Ok(evaluation::write_metrics(&flat, w)?))?;
    out.write("report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &all).map_err(|e| io_err("report.json")(std::io::Error::other(e)))?;
        writeln!(w).map_err(io_err("report.json"))
    })?;
    Ok(a.metrics.clone())
}
