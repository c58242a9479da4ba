//! One function per subcommand. Each validates its settings, computes every
//! artifact in memory and returns them; nothing touches disk until the
//! command has fully succeeded.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scriptcausal::baseline::{
    count_skip_bigrams, train_event_lm, EventLm, LmConfig, LmPairScorer, OrderedCounts, PmiScorer, SkipBigramConfig,
};
use scriptcausal::causal::{
    estimate_interventions, extract_training_instances, finetune_with_oot, script_score, top_predecessors,
    train_conditional, AdjustmentSet, ConditionalConfig, ConditionalModel, InterventionTable, PairScorer,
    ScriptScorer, TrainingInstance,
};
use scriptcausal::corpus::{build_vocab_from, load_chains, split_corpus, ChainCorpus, TokenVocabulary};
use scriptcausal::eval::{
    diversity_report, make_cloze_set, pairwise_sheet, read_filled_sheet, run_completions, run_infrequent_cloze,
    sample_targets, summarize_scores, write_diversity_tsv, write_sheet, CandidateRanker, LmRanker, PairRanker,
};
use scriptcausal::neural::{finite_diff_check, ParamSample, Parameters, TextMode};
use scriptcausal::synth::{build_fixture, sample_chains, OracleDistributions, SyntheticCbn, FIXTURE_NAMES};
use scriptcausal::train::{TrainConfig, Trainable};
use scriptcausal::{EventId, Vocabulary};

use crate::config::{config_error, input, maybe_input, need, output, positive, RunConfig};

/// Files to write, in order, plus text for stdout.
#[derive(Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub stdout: String,
}

impl Outputs {
    fn with_stdout(stdout: String) -> Self {
        Outputs {
            files: Vec::new(),
            stdout,
        }
    }

    fn file(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_path_buf(), bytes));
    }
}

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn seed(c: &RunConfig) -> u64 {
    c.seed.unwrap_or(0)
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Vocabulary::read_tsv(std::io::BufReader::new(f)).map_err(|e| e.in_file(path))?)
}

fn load_tokens(c: &RunConfig) -> Result<TokenVocabulary> {
    Ok(match maybe_input(&c.tokens, "tokens")? {
        Some(p) => TokenVocabulary::load(p)?,
        None => TokenVocabulary::default(),
    })
}

fn load_counts(path: &Path, vocab: &Vocabulary) -> Result<OrderedCounts> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(OrderedCounts::read_tsv(vocab, std::io::BufReader::new(f)).map_err(|e| e.in_file(path))?)
}

fn event_id(vocab: &Vocabulary, key: &str) -> Result<EventId> {
    vocab
        .id_of(key)
        .filter(|id| !id.is_special())
        .ok_or_else(|| config_error(format!("event {key:?} is not in the vocabulary")))
}

fn train_config(c: &RunConfig, batch_default: usize, lr: f64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr,
        batch_size: c.batch_size.unwrap_or(batch_default),
        clip_norm: c.clip_norm.unwrap_or(d.clip_norm),
        patience: c.patience.unwrap_or(d.patience),
        max_epochs: c.max_epochs.unwrap_or(d.max_epochs),
        seed: seed(c),
        lr_decay: c.lr_decay.unwrap_or(d.lr_decay),
    }
}

fn cond_config(c: &RunConfig) -> Result<ConditionalConfig> {
    let d = ConditionalConfig::default();
    let cfg = ConditionalConfig {
        embed_dim: c.embed_dim.unwrap_or(d.embed_dim),
        hidden_dim: c.hidden_dim.unwrap_or(d.hidden_dim),
        text_mode: c.text_mode.as_deref().unwrap_or("mean").parse::<TextMode>()?,
        init_seed: seed(c),
        train: train_config(c, d.train.batch_size, c.lr.unwrap_or(d.train.lr)),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn lm_config(c: &RunConfig) -> Result<LmConfig> {
    let d = LmConfig::default();
    let mut train = train_config(c, d.train.batch_size, c.lr.unwrap_or(d.train.lr));
    train.batch_size = c.lm_batch_size.unwrap_or(d.train.batch_size);
    let cfg = LmConfig {
        embed_dim: c.lm_embed_dim.unwrap_or(d.embed_dim),
        hidden_dim: c.lm_hidden_dim.unwrap_or(d.hidden_dim),
        layers: c.lm_layers.unwrap_or(d.layers),
        dropout: c.dropout.unwrap_or(d.dropout),
        init_seed: seed(c),
        train,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn oot_threshold(c: &RunConfig) -> Result<u8> {
    let t = c.oot_threshold.unwrap_or(scriptcausal::causal::DEFAULT_OOT_THRESHOLD);
    if t > scriptcausal::corpus::MAX_RATING {
        return Err(config_error(format!("`oot_threshold` must be at most {}", scriptcausal::corpus::MAX_RATING)));
    }
    Ok(t)
}

fn fixture(c: &RunConfig) -> Result<SyntheticCbn> {
    let name = c.fixture.as_deref().unwrap_or("F-POPCORN");
    if FIXTURE_NAMES.contains(&name) {
        return Ok(build_fixture(name)?);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(config_error(format!(
            "`fixture` {name:?} is neither a built-in fixture ({}) nor an existing file",
            FIXTURE_NAMES.join(", ")
        )));
    }
    Ok(SyntheticCbn::load(path)?)
}

fn instances(corpus: &ChainCorpus, vocab: &Vocabulary, tokens: &TokenVocabulary, c: &RunConfig) -> Result<Vec<TrainingInstance>> {
    Ok(extract_training_instances(corpus, vocab, tokens, oot_threshold(c)?))
}

pub fn ingest(c: &RunConfig) -> Result<Outputs> {
    let src = input(&c.input, "input")?;
    let out = output(&c.out, "out")?;
    let corpus = load_chains(src, c.factual_only.unwrap_or(true))?;
    let mut o = Outputs::with_stdout(format!("{} chains\n", corpus.len()));
    o.file(out, bytes(|w| corpus.write(w)));
    Ok(o)
}

pub fn split(c: &RunConfig) -> Result<Outputs> {
    let src = input(&c.corpus, "corpus")?;
    let dir = need(&c.out, "out")?;
    if !dir.is_dir() {
        return Err(config_error(format!("`out` directory {} does not exist", dir.display())));
    }
    let ratios = c.ratios.clone().unwrap_or_else(|| vec![0.9, 0.05, 0.05]);
    let corpus = load_chains(src, false)?;
    let parts = split_corpus(&corpus, &ratios, seed(c))?;
    let names: Vec<String> = if parts.len() == 3 {
        vec!["train".into(), "dev".into(), "test".into()]
    } else {
        (0..parts.len()).map(|i| format!("split{i}")).collect()
    };
    let mut o = Outputs::default();
    for (name, part) in names.iter().zip(&parts) {
        o.stdout += &format!("{name}\t{}\n", part.len());
        o.file(&dir.join(format!("{name}.jsonl")), bytes(|w| part.write(w)));
    }
    Ok(o)
}

pub fn vocab(c: &RunConfig) -> Result<Outputs> {
    let src = input(&c.corpus, "corpus")?;
    let out = output(&c.out, "out")?;
    let tokens_out = match &c.tokens {
        Some(_) => Some(output(&c.tokens, "tokens")?),
        None => None,
    };
    let corpus = load_chains(src, false)?;
    let vocab = build_vocab_from(&corpus, c.min_count.unwrap_or(scriptcausal::event::DEFAULT_MIN_COUNT))?;
    let mut o = Outputs::with_stdout(format!("{} ids ({} events)\n", vocab.len(), vocab.num_events()));
    o.file(out, bytes(|w| vocab.write_tsv(w)));
    if let Some(t) = tokens_out {
        let tokens = TokenVocabulary::build(&corpus, c.token_min_count.unwrap_or(1));
        o.file(t, bytes(|w| tokens.write(w)));
    }
    Ok(o)
}

pub fn count_pmi(c: &RunConfig) -> Result<Outputs> {
    let src = input(&c.corpus, "corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let out = output(&c.out, "out")?;
    let config = SkipBigramConfig {
        window: positive(c.window.unwrap_or(2), "window")?,
        self_pairs: c.self_pairs.unwrap_or(true),
    };
    let counts = count_skip_bigrams(&load_chains(src, false)?, &vocab, config)?;
    let mut o = Outputs::with_stdout(format!("{} distinct pairs, {} total\n", counts.num_pairs(), counts.grand_total()));
    o.file(out, bytes(|w| counts.write_tsv(&vocab, w)));
    Ok(o)
}

pub fn train_lm(c: &RunConfig) -> Result<Outputs> {
    let train = input(&c.corpus, "corpus")?;
    let dev = input(&c.dev_corpus, "dev_corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let out = output(&c.out, "out")?;
    let config = lm_config(c)?;
    let (lm, report) = train_event_lm(&load_chains(train, false)?, &load_chains(dev, false)?, &vocab, &config)?;
    let mut o = Outputs::with_stdout(format!("best epoch {} dev loss {:.6}\n", report.best_epoch, report.best_dev_loss));
    o.file(out, lm.to_model_file().to_bytes());
    Ok(o)
}

pub fn train_cond(c: &RunConfig) -> Result<Outputs> {
    let train = input(&c.corpus, "corpus")?;
    let dev = input(&c.dev_corpus, "dev_corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let tokens = load_tokens(c)?;
    let out = output(&c.out, "out")?;
    let config = cond_config(c)?;
    let train = instances(&load_chains(train, false)?, &vocab, &tokens, c)?;
    let dev = instances(&load_chains(dev, false)?, &vocab, &tokens, c)?;
    let (model, report) = train_conditional(&train, &dev, vocab.len(), tokens.len(), &config)?;
    let mut o = Outputs::with_stdout(format!("best epoch {} dev loss {:.6}\n", report.best_epoch, report.best_dev_loss));
    o.file(out, model.to_model_file().to_bytes());
    Ok(o)
}

pub fn finetune_cond(c: &RunConfig) -> Result<Outputs> {
    let model = ConditionalModel::load(input(&c.cond, "cond")?)?;
    let corpus = input(&c.corpus, "corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let tokens = load_tokens(c)?;
    let out = output(&c.out, "out")?;
    let config = train_config(c, TrainConfig::default().batch_size, c.finetune_lr.unwrap_or(1e-5));
    config.validate()?;
    let annotated = instances(&load_chains(corpus, false)?, &vocab, &tokens, c)?;
    let (model, report) = finetune_with_oot(model, &annotated, &config)?;
    let mut o = Outputs::with_stdout(format!("best epoch {} dev loss {:.6}\n", report.best_epoch, report.best_dev_loss));
    o.file(out, model.to_model_file().to_bytes());
    Ok(o)
}

pub fn estimate_do(c: &RunConfig) -> Result<Outputs> {
    let model = input(&c.cond, "cond")?;
    let corpus = input(&c.corpus, "corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let tokens = load_tokens(c)?;
    let out = output(&c.out, "out")?;
    let tsv = match &c.tsv_out {
        Some(_) => Some(output(&c.tsv_out, "tsv_out")?),
        None => None,
    };
    let n = positive(c.adjustment_n.unwrap_or(2000), "adjustment_n")?;
    let model = ConditionalModel::load(model)?;
    if model.vocab_size() != vocab.len() {
        bail!(scriptcausal::Error::Dimension(format!(
            "model covers {} ids but the vocabulary has {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    let inst = instances(&load_chains(corpus, false)?, &vocab, &tokens, c)?;
    let adjustment = AdjustmentSet::sample(&inst, n, seed(c))?;
    let table = estimate_interventions(&model, &adjustment)?;
    let mut o = Outputs::with_stdout(format!("{}x{} table from {} contexts\n", table.size(), table.size(), adjustment.len()));
    o.file(out, bytes(|w| table.write(w)));
    if let Some(t) = tsv {
        o.file(t, bytes(|w| table.write_tsv(&vocab, w)));
    }
    Ok(o)
}

pub fn score(c: &RunConfig) -> Result<Outputs> {
    let table = InterventionTable::load(input(&c.table, "table")?)?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let next = event_id(&vocab, need(&c.next, "next")?)?;
    let out = match &c.out {
        Some(_) => Some(output(&c.out, "out")?),
        None => None,
    };
    let mut o = Outputs::default();
    if let Some(prev) = &c.prev {
        let k = event_id(&vocab, prev)?;
        o.stdout = format!("{prev}\t{}\t{:.17e}\n", vocab.key_of(next), script_score(&table, k, next)?);
    } else {
        let scorer = ScriptScorer::new(&table);
        let rank = vocab.frequency_rank();
        let top = top_predecessors(&scorer, next, vocab.len(), c.exclude_top.unwrap_or(0), &rank, c.top.unwrap_or(10));
        for k in top {
            o.stdout += &format!("{}\t{}\t{:.17e}\n", vocab.key_of(k), vocab.key_of(next), scorer.score(k, next));
        }
    }
    if let Some(out) = out {
        let text = std::mem::take(&mut o.stdout);
        o.file(out, text.into_bytes());
    }
    Ok(o)
}

/// Pair scorers for whichever artifacts are configured, in a fixed order.
struct Systems {
    table: Option<ScriptScorer>,
    pmi: Option<PmiScorer>,
    lm: Option<EventLm>,
}

fn load_systems(c: &RunConfig, vocab: &Vocabulary) -> Result<Systems> {
    let table = maybe_input(&c.table, "table")?.map(InterventionTable::load).transpose()?;
    let counts = maybe_input(&c.counts, "counts")?.map(|p| load_counts(p, vocab)).transpose()?;
    let lm = maybe_input(&c.lm, "lm")?.map(EventLm::load).transpose()?;
    if table.is_none() && counts.is_none() && lm.is_none() {
        return Err(config_error("configure at least one of `table`, `counts` or `lm`"));
    }
    Ok(Systems {
        table: table.as_ref().map(ScriptScorer::new),
        pmi: counts.map(|counts| PmiScorer {
            counts,
            discounted: c.discounted.unwrap_or(true),
        }),
        lm,
    })
}

pub fn complete(c: &RunConfig) -> Result<Outputs> {
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let contexts_path = input(&c.contexts, "contexts")?;
    let out = output(&c.out, "out")?;
    let system = c.system.as_deref().unwrap_or("causal");
    let field = match system {
        "causal" => "table",
        "pmi" => "counts",
        "lm" => "lm",
        other => return Err(config_error(format!("unknown `system` {other:?}; use causal, pmi or lm"))),
    };
    let only = RunConfig {
        table: (system == "causal").then(|| c.table.clone()).flatten(),
        counts: (system == "pmi").then(|| c.counts.clone()).flatten(),
        lm: (system == "lm").then(|| c.lm.clone()).flatten(),
        ..c.clone()
    };
    if [&only.table, &only.counts, &only.lm].iter().all(|p| p.is_none()) {
        return Err(config_error(format!("system {system} needs `{field}`")));
    }
    let systems = load_systems(&only, &vocab)?;
    let text = std::fs::read_to_string(contexts_path).with_context(|| format!("reading {}", contexts_path.display()))?;
    let mut contexts = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let ids = line
            .split_whitespace()
            .map(|k| event_id(&vocab, k))
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("contexts line {}", i + 1))?;
        contexts.push(ids);
    }
    let rank = vocab.frequency_rank();
    let ranker: Box<dyn CandidateRanker + '_> = match (&systems.table, &systems.pmi, &systems.lm) {
        (Some(s), _, _) => Box::new(PairRanker {
            scorer: s,
            vocab_len: vocab.len(),
            rank: &rank,
        }),
        (_, Some(s), _) => Box::new(PairRanker {
            scorer: s,
            vocab_len: vocab.len(),
            rank: &rank,
        }),
        (_, _, Some(lm)) => Box::new(LmRanker { lm, rank: &rank }),
        _ => unreachable!("one system is loaded"),
    };
    let done = run_completions(ranker.as_ref(), &contexts, c.exclude_top.unwrap_or(20))?;
    let mut o = Outputs::default();
    let mut buf = String::new();
    for e in done {
        buf += &format!("{system}\t{}\n", e.map_or("<none>", |e| vocab.key_of(e)));
    }
    o.file(out, buf.into_bytes());
    Ok(o)
}

pub fn synth(c: &RunConfig) -> Result<Outputs> {
    let cbn = fixture(c)?;
    let out = output(&c.out, "out")?;
    let n = positive(c.chains.unwrap_or(50_000), "chains")?;
    let corpus = sample_chains(&cbn, n, seed(c), c.annotate.unwrap_or(false))?;
    let mut o = Outputs::with_stdout(format!("{} chains from {}\n", corpus.len(), cbn.name));
    o.file(out, bytes(|w| corpus.write(w)));
    Ok(o)
}

pub fn oracle(c: &RunConfig) -> Result<Outputs> {
    let cbn = fixture(c)?;
    let out = output(&c.out, "out")?;
    let tables = OracleDistributions::compute(&cbn)?;
    let mut o = Outputs::default();
    o.file(out, bytes(|w| tables.write_tsv(&cbn, w)));
    Ok(o)
}

pub fn cloze(c: &RunConfig) -> Result<Outputs> {
    let corpus = input(&c.corpus, "corpus")?;
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let out = output(&c.out, "out")?;
    let systems = load_systems(c, &vocab)?;
    let count = positive(c.cloze_count.unwrap_or(scriptcausal::eval::DEFAULT_CLOZE_COUNT), "cloze_count")?;
    let n = positive(c.recall_n.unwrap_or(scriptcausal::eval::DEFAULT_RECALL_N), "recall_n")?;
    let cutoffs = c.cutoffs.clone().unwrap_or_else(|| scriptcausal::eval::DEFAULT_CUTOFFS.to_vec());
    let instances = make_cloze_set(&load_chains(corpus, false)?, &vocab, count, seed(c))?;
    let rank = vocab.frequency_rank();
    let lm_ranker = systems.lm.as_ref().map(|lm| LmRanker { lm, rank: &rank });
    let pmi_ranker = systems.pmi.as_ref().map(|s| PairRanker {
        scorer: s,
        vocab_len: vocab.len(),
        rank: &rank,
    });
    let causal_ranker = systems.table.as_ref().map(|s| PairRanker {
        scorer: s,
        vocab_len: vocab.len(),
        rank: &rank,
    });
    let mut list: Vec<(&str, &dyn CandidateRanker)> = Vec::new();
    if let Some(r) = &lm_ranker {
        list.push(("lm", r));
    }
    if let Some(r) = &pmi_ranker {
        list.push(("pmi", r));
    }
    if let Some(r) = &causal_ranker {
        list.push(("causal", r));
    }
    let report = run_infrequent_cloze(&list, &instances, &rank, &cutoffs, n)?;
    let mut o = Outputs::default();
    let tsv = bytes(|w| report.write_tsv(w));
    o.stdout = String::from_utf8(tsv.clone()).expect("report is UTF-8");
    o.file(out, tsv);
    Ok(o)
}

pub fn sheet(c: &RunConfig) -> Result<Outputs> {
    let vocab = load_vocab(input(&c.vocab, "vocab")?)?;
    let out = output(&c.out, "out")?;
    let systems = load_systems(c, &vocab)?;
    let rank = vocab.frequency_rank();
    let lm = systems.lm.as_ref().map(|lm| LmPairScorer { lm });
    let mut list: Vec<(&str, &dyn PairScorer)> = Vec::new();
    if let Some(s) = &lm {
        list.push(("lm", s));
    }
    if let Some(s) = &systems.pmi {
        list.push(("pmi", s));
    }
    if let Some(s) = &systems.table {
        list.push(("causal", s));
    }
    let targets = sample_targets(&vocab, c.targets.unwrap_or(scriptcausal::eval::DEFAULT_TARGETS), seed(c));
    let rows = pairwise_sheet(
        &list,
        &targets,
        vocab.len(),
        c.per_system.unwrap_or(scriptcausal::eval::DEFAULT_PER_SYSTEM),
        c.exclude_top.unwrap_or(scriptcausal::eval::DEFAULT_EXCLUDE_TOP),
        &rank,
        seed(c),
    );
    let mut o = Outputs::with_stdout(format!("{} tasks, {} rows\n", targets.len(), rows.len()));
    o.file(out, bytes(|w| write_sheet(&rows, &vocab, w)));
    Ok(o)
}

pub fn score_summary(c: &RunConfig) -> Result<Outputs> {
    let path = input(&c.scores, "scores")?;
    let out = output(&c.out, "out")?;
    let paired = match &c.tsv_out {
        Some(_) => Some(output(&c.tsv_out, "tsv_out")?),
        None => None,
    };
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let judged = read_filled_sheet(std::io::BufReader::new(f)).map_err(|e| e.in_file(path))?;
    let summary = summarize_scores(&judged)?;
    let mut o = Outputs::default();
    let tsv = bytes(|w| summary.write_tsv(w));
    o.stdout = String::from_utf8(tsv.clone()).expect("summary is UTF-8");
    o.file(out, tsv);
    if let Some(p) = paired {
        o.file(p, bytes(|w| summary.write_paired_tsv(w)));
    }
    Ok(o)
}

pub fn diversity(c: &RunConfig) -> Result<Outputs> {
    let path = input(&c.emissions, "emissions")?;
    let out = output(&c.out, "out")?;
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut per: Vec<(String, Vec<String>)> = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((system, event)) = line.split_once('\t') else {
            bail!(scriptcausal::Error::format_at(i + 1, "expected `system<TAB>event`").in_file(path));
        };
        match per.iter_mut().find(|(s, _)| s == system) {
            Some((_, v)) => v.push(event.to_string()),
            None => per.push((system.to_string(), vec![event.to_string()])),
        }
    }
    let stats = diversity_report(&per)?;
    let mut o = Outputs::default();
    let tsv = bytes(|w| write_diversity_tsv(&stats, w));
    o.stdout = String::from_utf8(tsv.clone()).expect("report is UTF-8");
    o.file(out, tsv);
    Ok(o)
}

/// Certifies hand-derived gradients on a random 10-example batch drawn from
/// the configured (or default) fixture, with random text tokens.
pub fn gradcheck(c: &RunConfig) -> Result<Outputs> {
    let cbn = fixture(c)?;
    let eps = c.eps.unwrap_or(1e-5);
    if !(eps > 0.0) {
        return Err(config_error("`eps` must be positive"));
    }
    let corpus = sample_chains(&cbn, 10, seed(c), true)?;
    let vocab = build_vocab_from(&corpus, 1)?;
    let sample = ParamSample {
        count: 500,
        seed: seed(c),
    };
    let kind = c.model_kind.as_deref().unwrap_or("cond");
    let report = match kind {
        "cond" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed(c));
            let token_vocab = 20;
            let mut inst = instances(&corpus, &vocab, &TokenVocabulary::default(), c)?;
            inst.truncate(10);
            for i in &mut inst {
                let n = rng.gen_range(0..6);
                i.context.text = (0..n).map(|_| rng.gen_range(0..token_vocab as u32)).collect();
            }
            let mut model = ConditionalModel::init(vocab.len(), token_vocab, &cond_config(c)?)?;
            if c.with_oot.unwrap_or(false) {
                model = model.with_oot_projection();
                for w in model.w_o.as_mut().unwrap().data_mut() {
                    *w = rng.gen_range(-0.1..0.1);
                }
            }
            let refs: Vec<&TrainingInstance> = inst.iter().collect();
            let mut grads = model.zeros_like();
            model.accumulate(&refs, &mut grads, None);
            let loss = |p: &[f64]| {
                let mut m = model.clone();
                m.set_flat(p);
                inst.iter().map(|i| model.loss_difference(&m, i)).sum::<f64>()
            };
            finite_diff_check(loss, &model.flatten(), &grads.flatten(), eps, Some(sample))
        }
        "lm" => {
            let mut config = lm_config(c)?;
            config.dropout = 0.0;
            let lm = EventLm::init(vocab.len(), &config)?;
            let seqs: Vec<Vec<EventId>> = corpus
                .to_id_sequences(&vocab)
                .iter()
                .map(|s| scriptcausal::baseline::frame(s))
                .collect();
            let refs: Vec<&Vec<EventId>> = seqs.iter().collect();
            let mut grads = lm.zeros_like();
            lm.accumulate(&refs, &mut grads, None);
            let loss = |p: &[f64]| {
                let mut m = lm.clone();
                m.set_flat(p);
                seqs.iter().map(|s| lm.loss_difference(&m, s, None)).sum::<f64>()
            };
            finite_diff_check(loss, &lm.flatten(), &grads.flatten(), eps, Some(sample))
        }
        other => return Err(config_error(format!("unknown `model_kind` {other:?}; use cond or lm"))),
    };
    let o = Outputs::with_stdout(format!(
        "{kind}: max relative error {:.3e} over {} parameters\n",
        report.max_rel_error, report.checked
    ));
    if !(report.max_rel_error < 1e-4) {
        bail!(scriptcausal::Error::NonFinite(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(o)
}
