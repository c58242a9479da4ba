//! The conditional next-event model `p(e_i | e_{i-1}, M, T[, M_O])`.
//!
//! `v_e` is the final GRU state over `[history.., prev]`, `v_t` the text
//! encoding of the previous event's sentence and `v_o` the mean embedding
//! of the admitted out-of-text events. Logits are `A v_e + B v_t`, plus
//! `W_O v_o` once the model has been finetuned. There is no output bias.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChainCorpus, TokenVocabulary};
use crate::error::{Error, Result};
use crate::event::{EventId, Vocabulary};
use crate::neural::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc};
use crate::neural::text::TextCache;
use crate::neural::diff::{linear_diff, row_diff};
use crate::neural::{softmax, softmax_xent, xent_shift, GruParams, GruStepCache, ModelFile, Parameters, Tensor, TextEncoder, TextMode};
use crate::train::{self, TrainConfig, TrainReport, Trainable};

pub const MODEL_KIND: &str = "conditional";
/// Number of in-text events kept before the previous event.
pub const HISTORY_WINDOW: usize = 10;
/// Default minimum rating for an out-of-text candidate to be admitted.
pub const DEFAULT_OOT_THRESHOLD: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConditionalContext {
    pub prev: EventId,
    /// Up to [`HISTORY_WINDOW`] events before `prev`, oldest first.
    pub history: Vec<EventId>,
    pub text: Vec<u32>,
    pub oot: Vec<EventId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub target: EventId,
    pub context: ConditionalContext,
}

/// One instance per chain position `i ≥ 1`. The text and out-of-text events
/// are those attached to position `i − 1`; candidates rated below
/// `oot_threshold` or unknown to the vocabulary are dropped.
pub fn extract_training_instances(
    corpus: &ChainCorpus,
    vocab: &Vocabulary,
    tokens: &TokenVocabulary,
    oot_threshold: u8,
) -> Vec<TrainingInstance> {
    let mut out = Vec::new();
    for chain in &corpus.chains {
        let ids = chain.ids(vocab);
        for i in 1..ids.len() {
            let prev_event = &chain.events[i - 1];
            let oot = prev_event
                .oot_candidates()
                .iter()
                .filter(|c| c.rating >= oot_threshold)
                .filter_map(|c| vocab.id_of(&c.key))
                .collect();
            out.push(TrainingInstance {
                target: ids[i],
                context: ConditionalContext {
                    prev: ids[i - 1],
                    history: ids[(i - 1).saturating_sub(HISTORY_WINDOW)..i - 1].to_vec(),
                    text: tokens.encode(prev_event.text_tokens()),
                    oot,
                },
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub text_mode: TextMode,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        ConditionalConfig {
            embed_dim: 300,
            hidden_dim: 300,
            text_mode: TextMode::Mean,
            init_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ConditionalConfig {
    pub fn desk() -> Self {
        ConditionalConfig {
            embed_dim: 32,
            hidden_dim: 64,
            ..ConditionalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("conditional model dimensions must be positive"));
        }
        self.train.validate()
    }
}

/// Finetuning defaults: learning rate 1e-5, 10% of the annotated instances
/// held out for checkpoint selection.
pub fn finetune_defaults() -> TrainConfig {
    TrainConfig {
        lr: 1e-5,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Shape {
    vocab_size: usize,
    token_vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    text_mode: TextMode,
    finetuned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    pub embed: Tensor,
    pub gru: GruParams,
    pub text: TextEncoder,
    pub a: Tensor,
    pub b: Tensor,
    /// Present once finetuned.
    pub w_o: Option<Tensor>,
}

pub(crate) struct Forward {
    caches: Vec<GruStepCache>,
    pub(crate) v_e: Vec<f64>,
    text: TextCache,
    v_t: Vec<f64>,
    v_o: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

impl ConditionalModel {
    pub fn init(vocab_size: usize, token_vocab_size: usize, config: &ConditionalConfig) -> Result<Self> {
        config.validate()?;
        if token_vocab_size == 0 {
            return Err(Error::invalid("token vocabulary must hold at least the unknown token"));
        }
        let (d, h) = (config.embed_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        Ok(ConditionalModel {
            embed: Tensor::uniform(&[vocab_size, d], 0.1, &mut rng),
            gru: GruParams::init(d, h, &mut rng),
            text: TextEncoder::init(config.text_mode, token_vocab_size, d, &mut rng),
            a: Tensor::xavier(vocab_size, h, &mut rng),
            b: Tensor::xavier(vocab_size, d, &mut rng),
            w_o: None,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn is_finetuned(&self) -> bool {
        self.w_o.is_some()
    }

    /// Adds a zero `W_O`; outputs are unchanged until it is trained.
    pub fn with_oot_projection(mut self) -> Self {
        if self.w_o.is_none() {
            self.w_o = Some(Tensor::zeros(&[self.vocab_size(), self.embed_dim()]));
        }
        self
    }

    pub fn check_context(&self, ctx: &ConditionalContext) -> Result<()> {
        let v = self.vocab_size();
        if ctx.history.len() > HISTORY_WINDOW {
            return Err(Error::invalid(format!("history longer than {HISTORY_WINDOW}")));
        }
        if let Some(bad) = std::iter::once(&ctx.prev)
            .chain(&ctx.history)
            .chain(&ctx.oot)
            .find(|e| e.index() >= v)
        {
            return Err(Error::invalid(format!("event {bad} outside the model vocabulary")));
        }
        if let Some(bad) = ctx.text.iter().find(|&&t| t as usize >= self.text.vocab_size()) {
            return Err(Error::invalid(format!("token {bad} outside the model token table")));
        }
        Ok(())
    }

    pub(crate) fn mean_oot(&self, oot: &[EventId]) -> Vec<f64> {
        let mut v = vec![0.0; self.embed_dim()];
        if self.w_o.is_some() && !oot.is_empty() {
            let scale = 1.0 / oot.len() as f64;
            for e in oot {
                axpy(scale, self.embed.row(e.index()), &mut v);
            }
        }
        v
    }

    /// GRU state after reading `history` from a zero state.
    pub(crate) fn history_state(&self, history: &[EventId]) -> Vec<f64> {
        let mut h = vec![0.0; self.gru.hidden_dim()];
        for e in history {
            h = self.gru.step_cached(self.embed.row(e.index()), &h).h;
        }
        h
    }

    /// `B v_t` and `W_O v_o` for a context; both accumulate into zeros so
    /// adding them after `A v_e` reproduces [`forward`](Self::forward).
    pub(crate) fn static_terms(&self, ctx: &ConditionalContext) -> (Vec<f64>, Option<Vec<f64>>) {
        let v = self.vocab_size();
        let mut bt = vec![0.0; v];
        matvec_acc(&self.b, &self.text.encode(&ctx.text), &mut bt);
        let wo = self.w_o.as_ref().map(|w| {
            let mut out = vec![0.0; v];
            matvec_acc(w, &self.mean_oot(&ctx.oot), &mut out);
            out
        });
        (bt, wo)
    }

    /// Logits from a final GRU state and cached static terms.
    pub(crate) fn logits_from(&self, v_e: &[f64], bt: &[f64], wo: Option<&[f64]>) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        matvec_acc(&self.a, v_e, &mut out);
        for (o, x) in out.iter_mut().zip(bt) {
            *o += x;
        }
        if let Some(wo) = wo {
            for (o, x) in out.iter_mut().zip(wo) {
                *o += x;
            }
        }
        out
    }

    pub(crate) fn forward(&self, ctx: &ConditionalContext) -> Forward {
        let mut xs: Vec<Vec<f64>> = ctx.history.iter().map(|e| self.embed.row(e.index()).to_vec()).collect();
        xs.push(self.embed.row(ctx.prev.index()).to_vec());
        let caches = self.gru.forward_sequence(&xs, &vec![0.0; self.gru.hidden_dim()]);
        let v_e = caches.last().expect("prev is always read").h.clone();
        let (v_t, text) = self.text.forward(&ctx.text);
        let v_o = self.mean_oot(&ctx.oot);
        let v = self.vocab_size();
        let mut logits = vec![0.0; v];
        matvec_acc(&self.a, &v_e, &mut logits);
        matvec_acc(&self.b, &v_t, &mut logits);
        if let Some(w) = &self.w_o {
            matvec_acc(w, &v_o, &mut logits);
        }
        Forward {
            caches,
            v_e,
            text,
            v_t,
            v_o,
            logits,
        }
    }

    pub fn logits(&self, ctx: &ConditionalContext) -> Vec<f64> {
        self.forward(ctx).logits
    }

    /// Cross-entropy of one instance; with `grads` its gradient is added.
    pub fn instance_loss(&self, inst: &TrainingInstance, grads: Option<&mut ConditionalModel>) -> f64 {
        let ctx = &inst.context;
        let f = self.forward(ctx);
        let (loss, g) = softmax_xent(&f.logits, inst.target.index()).expect("target within vocabulary");
        let Some(grads) = grads else {
            return loss;
        };
        outer_acc(&mut grads.a, &g, &f.v_e);
        outer_acc(&mut grads.b, &g, &f.v_t);
        let mut dv_e = vec![0.0; f.v_e.len()];
        matvec_t_acc(&self.a, &g, &mut dv_e);
        let mut dv_t = vec![0.0; f.v_t.len()];
        matvec_t_acc(&self.b, &g, &mut dv_t);
        self.text.backward(&f.text, &dv_t, &mut grads.text);
        if let (Some(w), Some(gw)) = (&self.w_o, grads.w_o.as_mut()) {
            outer_acc(gw, &g, &f.v_o);
            if !ctx.oot.is_empty() {
                let mut dv_o = vec![0.0; f.v_o.len()];
                matvec_t_acc(w, &g, &mut dv_o);
                let scale = 1.0 / ctx.oot.len() as f64;
                for e in &ctx.oot {
                    axpy(scale, &dv_o, grads.embed.row_mut(e.index()));
                }
            }
        }
        let steps = f.caches.len();
        let mut dh = vec![vec![0.0; dv_e.len()]; steps];
        dh[steps - 1] = dv_e;
        let (dxs, _) = self.gru.backward_sequence(&f.caches, &dh, &mut grads.gru);
        for (e, dx) in ctx.history.iter().chain(std::iter::once(&ctx.prev)).zip(&dxs) {
            axpy(1.0, dx, grads.embed.row_mut(e.index()));
        }
        loss
    }

    /// Instance loss under `perturbed` minus the loss under `self`. Exact
    /// changes are carried through every layer instead of differencing two
    /// rounded forward passes, so tiny changes keep their precision. Both
    /// models must share shapes. Used for finite-difference checks.
    pub fn loss_difference(&self, perturbed: &ConditionalModel, inst: &TrainingInstance) -> f64 {
        let ctx = &inst.context;
        let xs: Vec<(Vec<f64>, Vec<f64>)> = ctx
            .history
            .iter()
            .chain(std::iter::once(&ctx.prev))
            .map(|e| row_diff(&self.embed, &perturbed.embed, e.index()))
            .collect();
        let states = self.gru.sequence_diff(&perturbed.gru, &xs, &vec![0.0; self.gru.hidden_dim()]);
        let (v_e, dv_e) = states.last().expect("prev is always read");
        let (v_t, dv_t) = self.text.encode_diff(&perturbed.text, &ctx.text);
        let v = self.vocab_size();
        let (mut z, mut dz) = (vec![0.0; v], vec![0.0; v]);
        linear_diff(&self.a, &perturbed.a, v_e, dv_e, &mut z, &mut dz);
        linear_diff(&self.b, &perturbed.b, &v_t, &dv_t, &mut z, &mut dz);
        if let (Some(w0), Some(w1)) = (&self.w_o, &perturbed.w_o) {
            let (mut v_o, mut dv_o) = (vec![0.0; self.embed_dim()], vec![0.0; self.embed_dim()]);
            if !ctx.oot.is_empty() {
                let scale = 1.0 / ctx.oot.len() as f64;
                for e in &ctx.oot {
                    let (r, dr) = row_diff(&self.embed, &perturbed.embed, e.index());
                    axpy(scale, &r, &mut v_o);
                    axpy(scale, &dr, &mut dv_o);
                }
            }
            linear_diff(w0, w1, &v_o, &dv_o, &mut z, &mut dz);
        }
        xent_shift(&z, &dz, inst.target.index())
    }

    fn shape(&self) -> Shape {
        Shape {
            vocab_size: self.vocab_size(),
            token_vocab_size: self.text.vocab_size(),
            embed_dim: self.embed_dim(),
            hidden_dim: self.gru.hidden_dim(),
            text_mode: self.text.mode,
            finetuned: self.is_finetuned(),
        }
    }

    pub fn to_model_file(&self) -> ModelFile {
        let config = serde_json::to_string(&self.shape()).expect("shape serializes");
        ModelFile::from_params(MODEL_KIND, config, self)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(MODEL_KIND)?;
        let s: Shape = serde_json::from_str(&file.config)
            .map_err(|e| Error::format(format!("bad conditional model config: {e}")))?;
        let config = ConditionalConfig {
            embed_dim: s.embed_dim,
            hidden_dim: s.hidden_dim,
            text_mode: s.text_mode,
            ..ConditionalConfig::default()
        };
        let mut m = ConditionalModel::init(s.vocab_size, s.token_vocab_size, &config)?;
        if s.finetuned {
            m = m.with_oot_projection();
        }
        m.assign_named(&file.tensors)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_model_file(&ModelFile::load(path)?)
    }
}

impl Parameters for ConditionalModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        self.gru.named("gru.", &mut out);
        self.text.named("text.", &mut out);
        out.push(("a".to_string(), &self.a));
        out.push(("b".to_string(), &self.b));
        if let Some(w) = &self.w_o {
            out.push(("w_o".to_string(), w));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        self.gru.named_mut(&mut out);
        self.text.named_mut(&mut out);
        out.push(&mut self.a);
        out.push(&mut self.b);
        if let Some(w) = &mut self.w_o {
            out.push(w);
        }
        out
    }
}

impl Trainable for ConditionalModel {
    type Example = TrainingInstance;

    fn accumulate(&self, batch: &[&TrainingInstance], grads: &mut Self, _noise: Option<u64>) -> (f64, usize) {
        let loss = batch.iter().map(|inst| self.instance_loss(inst, Some(grads))).sum();
        (loss, batch.len())
    }

    fn evaluate(&self, batch: &[&TrainingInstance]) -> (f64, usize) {
        (batch.iter().map(|inst| self.instance_loss(inst, None)).sum(), batch.len())
    }
}

fn check_instances(model: &ConditionalModel, instances: &[TrainingInstance]) -> Result<()> {
    for inst in instances {
        model.check_context(&inst.context)?;
        if inst.target.index() >= model.vocab_size() {
            return Err(Error::invalid(format!("target {} outside the vocabulary", inst.target)));
        }
    }
    Ok(())
}

/// Pretraining. Out-of-text events are ignored because the model has no
/// `W_O` yet.
pub fn train_conditional(
    instances: &[TrainingInstance],
    dev_instances: &[TrainingInstance],
    vocab_size: usize,
    token_vocab_size: usize,
    config: &ConditionalConfig,
) -> Result<(ConditionalModel, TrainReport)> {
    if instances.is_empty() {
        return Err(Error::invalid("empty instance set"));
    }
    let model = ConditionalModel::init(vocab_size, token_vocab_size, config)?;
    check_instances(&model, instances)?;
    check_instances(&model, dev_instances)?;
    train::fit(model, instances, dev_instances, &config.train, None)
}

/// Splits instances into train and dev with a seeded shuffle, holding out
/// `round(len / 10)` (at least one when there are two or more).
pub fn split_for_finetuning(instances: &[TrainingInstance], seed: u64) -> (Vec<TrainingInstance>, Vec<TrainingInstance>) {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dev_n = (instances.len() as f64 / 10.0).round() as usize;
    if dev_n == 0 && instances.len() >= 2 {
        dev_n = 1;
    }
    let mut dev_idx = order[..dev_n].to_vec();
    let mut train_idx = order[dev_n..].to_vec();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();
    (
        train_idx.into_iter().map(|i| instances[i].clone()).collect(),
        dev_idx.into_iter().map(|i| instances[i].clone()).collect(),
    )
}

/// Adds a zero-initialized `W_O` and trains all parameters on annotated
/// instances, with 10% held out for checkpoint selection.
pub fn finetune_with_oot(
    model: ConditionalModel,
    annotated: &[TrainingInstance],
    config: &TrainConfig,
) -> Result<(ConditionalModel, TrainReport)> {
    if !annotated.iter().any(|i| !i.context.oot.is_empty()) {
        return Err(Error::invalid("no annotated instances with out-of-text events"));
    }
    let model = model.with_oot_projection();
    check_instances(&model, annotated)?;
    let (train, dev) = split_for_finetuning(annotated, config.seed);
    train::fit(model, &train, &dev, config, None)
}

/// `softmax(A v_e + B v_t [+ W_O v_o])`.
pub fn conditional_distribution(model: &ConditionalModel, ctx: &ConditionalContext) -> Result<Vec<f64>> {
    model.check_context(ctx)?;
    Ok(softmax(&model.logits(ctx)))
}
