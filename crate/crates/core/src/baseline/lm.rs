//! Recurrent event language model: embeddings, stacked GRU, softmax output.
//!
//! Sequences are framed `[START, e_1, .., e_n, END]` and every position after
//! START is a prediction target. Dropout is applied to the input embeddings
//! and to the top-layer outputs during training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::PairScorer;
use crate::corpus::ChainCorpus;
use crate::error::{Error, Result};
use crate::event::{EventId, Vocabulary};
use crate::neural::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc};
use crate::neural::diff::{bias_diff, linear_diff, row_diff};
use crate::neural::{log_softmax, softmax, softmax_xent, xent_shift, GruParams, GruStepCache, ModelFile, Parameters, Tensor};
use crate::train::{self, TrainConfig, TrainReport, Trainable};

pub const MODEL_KIND: &str = "event-lm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 300,
            hidden_dim: 512,
            layers: 2,
            dropout: 0.1,
            init_seed: 0,
            train: TrainConfig {
                batch_size: 64,
                ..TrainConfig::default()
            },
        }
    }
}

impl LmConfig {
    /// Small dimensions for fast runs on synthetic data.
    pub fn desk() -> Self {
        LmConfig {
            embed_dim: 32,
            hidden_dim: 64,
            ..LmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::invalid("language model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LmShape {
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    layers: usize,
    dropout: f64,
}

struct Forward {
    emb_masks: Vec<Vec<f64>>,
    caches: Vec<Vec<GruStepCache>>,
    /// Top-layer outputs after output dropout.
    top: Vec<Vec<f64>>,
    out_masks: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLm {
    pub dropout: f64,
    pub embed: Tensor,
    pub grus: Vec<GruParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl EventLm {
    pub fn init(vocab_size: usize, config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let embed = Tensor::uniform(&[vocab_size, config.embed_dim], 0.1, &mut rng);
        let grus = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.embed_dim } else { config.hidden_dim };
                GruParams::init(input, config.hidden_dim, &mut rng)
            })
            .collect();
        let out_w = Tensor::xavier(vocab_size, config.hidden_dim, &mut rng);
        Ok(EventLm {
            dropout: config.dropout,
            embed,
            grus,
            out_w,
            out_b: Tensor::zeros(&[vocab_size]),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.out_w.cols()
    }

    fn shape(&self) -> LmShape {
        LmShape {
            vocab_size: self.vocab_size(),
            embed_dim: self.embed.cols(),
            hidden_dim: self.hidden_dim(),
            layers: self.grus.len(),
            dropout: self.dropout,
        }
    }

    fn check_ids(&self, ids: &[EventId]) -> Result<()> {
        match ids.iter().find(|e| e.index() >= self.vocab_size()) {
            Some(bad) => Err(Error::invalid(format!("event {bad} outside the model vocabulary"))),
            None => Ok(()),
        }
    }

    fn mask<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Top-layer state after reading `inputs`, without dropout.
    fn final_state(&self, inputs: &[EventId]) -> Vec<f64> {
        let mut xs: Vec<Vec<f64>> = inputs.iter().map(|e| self.embed.row(e.index()).to_vec()).collect();
        for gru in &self.grus {
            let h0 = vec![0.0; gru.hidden_dim()];
            xs = gru.forward_sequence(&xs, &h0).into_iter().map(|c| c.h).collect();
        }
        xs.pop().expect("non-empty input")
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.out_b.data().to_vec();
        matvec_acc(&self.out_w, h, &mut out);
        out
    }

    fn forward(&self, framed: &[EventId], noise_seed: Option<u64>) -> Forward {
        let inputs = &framed[..framed.len() - 1];
        let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
        let d = self.embed.cols();
        let hidden = self.hidden_dim();

        let mut emb_masks = Vec::new();
        let mut xs: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        for e in inputs {
            let mut x = self.embed.row(e.index()).to_vec();
            if let Some(r) = rng.as_mut() {
                let m = self.mask(d, r);
                x.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                emb_masks.push(m);
            }
            xs.push(x);
        }
        let mut caches: Vec<Vec<GruStepCache>> = Vec::with_capacity(self.grus.len());
        for gru in &self.grus {
            let c = gru.forward_sequence(&xs, &vec![0.0; hidden]);
            xs = c.iter().map(|s| s.h.clone()).collect();
            caches.push(c);
        }
        let mut out_masks = Vec::new();
        if let Some(r) = rng.as_mut() {
            for h in xs.iter_mut() {
                let m = self.mask(hidden, r);
                h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                out_masks.push(m);
            }
        }
        let logits = xs.iter().map(|h| self.logits(h)).collect();
        Forward {
            emb_masks,
            caches,
            top: xs,
            out_masks,
            logits,
        }
    }

    /// Output logits at every position of a framed sequence.
    pub fn sequence_logits(&self, framed: &[EventId], noise_seed: Option<u64>) -> Vec<Vec<f64>> {
        self.forward(framed, noise_seed).logits
    }

    /// `sequence_loss` under `perturbed` minus the loss under `self`, with
    /// the same dropout masks. Exact changes are carried through every
    /// layer instead of differencing two rounded forward passes, so tiny
    /// changes keep their precision. Used for finite-difference checks.
    pub fn loss_difference(&self, perturbed: &EventLm, framed: &[EventId], noise_seed: Option<u64>) -> f64 {
        let inputs = &framed[..framed.len() - 1];
        let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
        let d = self.embed.cols();
        let hidden = self.hidden_dim();
        let mut xs: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(inputs.len());
        for e in inputs {
            let (mut x, mut dx) = row_diff(&self.embed, &perturbed.embed, e.index());
            if let Some(r) = rng.as_mut() {
                let m = self.mask(d, r);
                x.iter_mut().zip(&mut dx).zip(&m).for_each(|((v, dv), k)| {
                    *v *= k;
                    *dv *= k;
                });
            }
            xs.push((x, dx));
        }
        for (g0, g1) in self.grus.iter().zip(&perturbed.grus) {
            xs = g0.sequence_diff(g1, &xs, &vec![0.0; hidden]);
        }
        if let Some(r) = rng.as_mut() {
            for (h, dh) in xs.iter_mut() {
                let m = self.mask(hidden, r);
                h.iter_mut().zip(dh.iter_mut()).zip(&m).for_each(|((v, dv), k)| {
                    *v *= k;
                    *dv *= k;
                });
            }
        }
        xs.iter()
            .zip(&framed[1..])
            .map(|((h, dh), t)| {
                let (mut z, mut dz) = bias_diff(&self.out_b, &perturbed.out_b);
                linear_diff(&self.out_w, &perturbed.out_w, h, dh, &mut z, &mut dz);
                xent_shift(&z, &dz, t.index())
            })
            .sum()
    }

    /// Summed next-event cross-entropy over a framed sequence. With a noise
    /// seed the dropout masks are drawn from it, so equal seeds give equal
    /// masks. When `grads` is given the gradient is added into it.
    pub fn sequence_loss(&self, framed: &[EventId], noise_seed: Option<u64>, grads: Option<&mut EventLm>) -> f64 {
        let inputs = &framed[..framed.len() - 1];
        let targets = &framed[1..];
        let hidden = self.hidden_dim();
        let Forward {
            emb_masks,
            caches,
            top: xs,
            out_masks,
            logits,
        } = self.forward(framed, noise_seed);

        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(targets.len());
        for (z, t) in logits.iter().zip(targets) {
            let (l, g) = softmax_xent(z, t.index()).expect("target within vocabulary");
            loss += l;
            dlogits.push(g);
        }
        let Some(grads) = grads else {
            return loss;
        };

        let mut dh: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        for (t, g) in dlogits.iter().enumerate() {
            axpy(1.0, g, grads.out_b.data_mut());
            outer_acc(&mut grads.out_w, g, &xs[t]);
            let mut d_top = vec![0.0; hidden];
            matvec_t_acc(&self.out_w, g, &mut d_top);
            if let Some(m) = out_masks.get(t) {
                d_top.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            dh.push(d_top);
        }
        for l in (0..self.grus.len()).rev() {
            let (dxs, _) = self.grus[l].backward_sequence(&caches[l], &dh, &mut grads.grus[l]);
            dh = dxs;
        }
        for (t, e) in inputs.iter().enumerate() {
            let mut dx = std::mem::take(&mut dh[t]);
            if let Some(m) = emb_masks.get(t) {
                dx.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            axpy(1.0, &dx, grads.embed.row_mut(e.index()));
        }
        loss
    }

    pub fn to_model_file(&self) -> ModelFile {
        let config = serde_json::to_string(&self.shape()).expect("shape serializes");
        ModelFile::from_params(MODEL_KIND, config, self)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(MODEL_KIND)?;
        let s: LmShape = serde_json::from_str(&file.config)
            .map_err(|e| Error::format(format!("bad event-lm config: {e}")))?;
        let mut lm = EventLm {
            dropout: s.dropout,
            embed: Tensor::zeros(&[s.vocab_size, s.embed_dim]),
            grus: (0..s.layers)
                .map(|l| GruParams::zeros(if l == 0 { s.embed_dim } else { s.hidden_dim }, s.hidden_dim))
                .collect(),
            out_w: Tensor::zeros(&[s.vocab_size, s.hidden_dim]),
            out_b: Tensor::zeros(&[s.vocab_size]),
        };
        lm.assign_named(&file.tensors)?;
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_model_file(&ModelFile::load(path)?)
    }
}

impl Parameters for EventLm {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, g) in self.grus.iter().enumerate() {
            g.named(&format!("gru{l}."), &mut out);
        }
        out.push(("out_w".to_string(), &self.out_w));
        out.push(("out_b".to_string(), &self.out_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        for g in self.grus.iter_mut() {
            g.named_mut(&mut out);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}

impl Trainable for EventLm {
    type Example = Vec<EventId>;

    fn accumulate(&self, batch: &[&Vec<EventId>], grads: &mut Self, noise_seed: Option<u64>) -> (f64, usize) {
        let mut loss = 0.0;
        let mut units = 0;
        for (i, seq) in batch.iter().enumerate() {
            let seed = noise_seed.map(|s| s.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(i as u64));
            loss += self.sequence_loss(seq, seed, Some(grads));
            units += seq.len() - 1;
        }
        (loss, units)
    }

    fn evaluate(&self, batch: &[&Vec<EventId>]) -> (f64, usize) {
        batch
            .iter()
            .map(|s| (self.sequence_loss(s, None, None), s.len() - 1))
            .fold((0.0, 0), |(l, u), (a, b)| (l + a, u + b))
    }
}

/// `[START, ids.., END]`.
pub fn frame(ids: &[EventId]) -> Vec<EventId> {
    let mut v = Vec::with_capacity(ids.len() + 2);
    v.push(EventId::START);
    v.extend_from_slice(ids);
    v.push(EventId::END);
    v
}

fn framed_sequences(corpus: &ChainCorpus, vocab: &Vocabulary) -> Vec<Vec<EventId>> {
    corpus
        .to_id_sequences(vocab)
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| frame(&s))
        .collect()
}

pub fn train_event_lm(
    train_corpus: &ChainCorpus,
    dev_corpus: &ChainCorpus,
    vocab: &Vocabulary,
    config: &LmConfig,
) -> Result<(EventLm, TrainReport)> {
    let train = framed_sequences(train_corpus, vocab);
    let dev = framed_sequences(dev_corpus, vocab);
    train_on_sequences(&train, &dev, vocab.len(), config)
}

/// Trains on already framed id sequences.
pub fn train_on_sequences(
    train: &[Vec<EventId>],
    dev: &[Vec<EventId>],
    vocab_size: usize,
    config: &LmConfig,
) -> Result<(EventLm, TrainReport)> {
    if train.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    let lm = EventLm::init(vocab_size, config)?;
    for s in train.iter().chain(dev) {
        if s.len() < 2 {
            return Err(Error::invalid("framed sequence shorter than two tokens"));
        }
        lm.check_ids(s)?;
    }
    train::fit(lm, train, dev, &config.train, None)
}

/// Next-event distribution over the whole vocabulary after `[START, history..]`.
pub fn lm_next_distribution(lm: &EventLm, history: &[EventId]) -> Result<Vec<f64>> {
    lm.check_ids(history)?;
    let mut inputs = Vec::with_capacity(history.len() + 1);
    inputs.push(EventId::START);
    inputs.extend_from_slice(history);
    Ok(softmax(&lm.logits(&lm.final_state(&inputs))))
}

/// Log-probabilities of every next event after `[START, context..]`.
pub fn lm_log_distribution(lm: &EventLm, context: &[EventId]) -> Result<Vec<f64>> {
    lm.check_ids(context)?;
    let mut inputs = vec![EventId::START];
    inputs.extend_from_slice(context);
    Ok(log_softmax(&lm.logits(&lm.final_state(&inputs))))
}

/// `log p(candidate | START, context)`.
pub fn lm_chain_score(lm: &EventLm, context: &[EventId], candidate: EventId) -> Result<f64> {
    lm.check_ids(&[candidate])?;
    Ok(lm_log_distribution(lm, context)?[candidate.index()])
}

/// Pairwise view of the LM: `score(prev, next) = log p(next | START, prev)`.
pub struct LmPairScorer<'a> {
    pub lm: &'a EventLm,
}

impl PairScorer for LmPairScorer<'_> {
    fn score(&self, prev: EventId, next: EventId) -> f64 {
        lm_chain_score(self.lm, &[prev], next).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Per-token perplexity over framed sequences, END prediction included.
pub fn lm_perplexity(lm: &EventLm, framed: &[Vec<EventId>]) -> f64 {
    train::mean_loss(lm, framed).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{finite_diff_check, ParamSample};

    fn ids(v: &[u32]) -> Vec<EventId> {
        v.iter().map(|&i| EventId(i)).collect()
    }

    fn tiny() -> LmConfig {
        LmConfig {
            embed_dim: 6,
            hidden_dim: 5,
            init_seed: 3,
            ..LmConfig::desk()
        }
    }

    #[test]
    fn loss_difference_matches_direct_difference() {
        let lm = EventLm::init(7, &tiny()).unwrap();
        let seq = frame(&ids(&[3, 5, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut other = lm.clone();
        for t in other.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        for noise in [None, Some(2)] {
            let want = other.sequence_loss(&seq, noise, None) - lm.sequence_loss(&seq, noise, None);
            assert!((lm.loss_difference(&other, &seq, noise) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_fixed_masks() {
        let lm = EventLm::init(7, &tiny()).unwrap();
        let seq = frame(&ids(&[3, 5, 4, 3, 6]));
        for noise in [None, Some(11)] {
            let mut g = lm.zeros_like();
            lm.sequence_loss(&seq, noise, Some(&mut g));
            let loss = |p: &[f64]| {
                let mut m = lm.clone();
                m.set_flat(p);
                lm.loss_difference(&m, &seq, noise)
            };
            let report = finite_diff_check(loss, &lm.flatten(), &g.flatten(), 1e-5, None);
            assert!(report.max_rel_error < 1e-4, "{noise:?}: {report:?}");
        }
    }

    #[test]
    fn memorizes_a_two_event_corpus() {
        let train: Vec<_> = (0..64).map(|_| frame(&ids(&[3, 4]))).collect();
        let config = LmConfig {
            embed_dim: 8,
            hidden_dim: 8,
            train: TrainConfig {
                lr: 0.02,
                batch_size: 16,
                max_epochs: 40,
                ..LmConfig::desk().train
            },
            ..LmConfig::desk()
        };
        let (lm, report) = train_on_sequences(&train, &train[..8], 5, &config).unwrap();
        let p = lm_next_distribution(&lm, &ids(&[3])).unwrap();
        assert!(p[4] >= 0.9, "p(b|a) = {}", p[4]);
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 4);
        let best = report.best_dev_loss;
        assert!(report.epochs.iter().all(|e| e.dev_loss >= best));
    }

    #[test]
    fn distributions_and_scores_are_normalized() {
        let lm = EventLm::init(9, &tiny()).unwrap();
        let p = lm_next_distribution(&lm, &ids(&[3, 4])).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p, lm_next_distribution(&lm, &ids(&[3, 4])).unwrap());
        let total: f64 = (0..9)
            .map(|c| lm_chain_score(&lm, &ids(&[3, 4]), EventId(c)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lm_next_distribution(&lm, &ids(&[9])).is_err());
    }

    #[test]
    fn shifting_output_bias_keeps_the_argmax() {
        let lm = EventLm::init(9, &tiny()).unwrap();
        let mut shifted = lm.clone();
        shifted.out_b.data_mut().iter_mut().for_each(|b| *b += 5.0);
        let best = |m: &EventLm| {
            let p = lm_next_distribution(m, &ids(&[5])).unwrap();
            (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
        };
        assert_eq!(best(&lm), best(&shifted));
    }

    #[test]
    fn model_file_round_trip() {
        let lm = EventLm::init(7, &tiny()).unwrap();
        let bytes = lm.to_model_file().to_bytes();
        let back = EventLm::from_model_file(&ModelFile::read(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, lm);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(train_on_sequences(&[], &[], 5, &tiny()).is_err());
    }

    #[test]
    fn sampled_gradcheck_on_desk_dims() {
        let lm = EventLm::init(12, &LmConfig::desk()).unwrap();
        let seq = frame(&ids(&[3, 7, 11, 4]));
        let mut g = lm.zeros_like();
        lm.sequence_loss(&seq, Some(5), Some(&mut g));
        let loss = |p: &[f64]| {
            let mut m = lm.clone();
            m.set_flat(p);
            lm.loss_difference(&m, &seq, Some(5))
        };
        let sample = ParamSample { count: 400, seed: 1 };
        let report = finite_diff_check(loss, &lm.flatten(), &g.flatten(), 1e-5, Some(sample));
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
