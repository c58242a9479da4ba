//! Mini-batch training with Adam, best-dev checkpointing and early stopping.
//!
//! Batches are cut into fixed-size chunks whose gradients are computed in
//! parallel and summed in chunk order, so results do not depend on the
//! number of worker threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState, Parameters};

/// Examples per gradient chunk. Part of the numerical contract: changing it
/// changes floating-point summation order.
pub const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Stop after this many epochs without a dev-loss improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Learning rate multiplier applied after every epoch.
    #[serde(default = "no_decay")]
    pub lr_decay: f64,
}

fn no_decay() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 512,
            clip_norm: 10.0,
            patience: 3,
            max_epochs: 50,
            seed: 0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size, max_epochs and patience must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: Some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

/// A model trainable by [`fit`]. Losses are sums over examples together
/// with the number of scored units (examples or tokens), so that batch and
/// dev losses are per-unit means.
pub trait Trainable: Parameters + Send + Sync {
    type Example: Sync;

    /// Adds the gradient of the summed loss over `batch` into `grads` and
    /// returns `(summed loss, units)`. `noise_seed` drives any stochastic
    /// regularization; `None` means evaluation mode.
    fn accumulate(&self, batch: &[&Self::Example], grads: &mut Self, noise_seed: Option<u64>) -> (f64, usize);

    /// Summed evaluation loss and unit count.
    fn evaluate(&self, batch: &[&Self::Example]) -> (f64, usize);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// Mean loss per unit over `examples`, computed in parallel chunks.
pub fn mean_loss<M: Trainable>(model: &M, examples: &[M::Example]) -> f64 {
    let refs: Vec<&M::Example> = examples.iter().collect();
    let parts: Vec<(f64, usize)> = refs.par_chunks(CHUNK).map(|c| model.evaluate(c)).collect();
    let (loss, units) = parts
        .into_iter()
        .fold((0.0, 0), |(l, u), (pl, pu)| (l + pl, u + pu));
    if units == 0 {
        0.0
    } else {
        loss / units as f64
    }
}

/// Gradient of the mean loss over `batch`, plus that mean.
pub fn batch_gradient<M: Trainable>(model: &M, batch: &[&M::Example], noise_seed: Option<u64>) -> (M, f64) {
    let parts: Vec<(M, f64, usize)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = model.zeros_like();
            let seed = noise_seed.map(|s| s.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(ci as u64));
            let (l, u) = model.accumulate(chunk, &mut g, seed);
            (g, l, u)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut grads, mut loss, mut units) = iter.next().expect("non-empty batch");
    for (g, l, u) in iter {
        grads.add_assign(&g);
        loss += l;
        units += u;
    }
    let units = units.max(1) as f64;
    grads.scale(1.0 / units);
    (grads, loss / units)
}

/// Trains `model` and returns the checkpoint with the lowest dev loss.
///
/// Training stops when the dev loss has not improved for `patience`
/// consecutive epochs or after `max_epochs`. With an empty dev set the
/// training loss is used for model selection.
pub fn fit<M: Trainable + Clone>(
    mut model: M,
    train: &[M::Example],
    dev: &[M::Example],
    config: &TrainConfig,
    progress: Option<&(dyn Fn(&EpochRecord) + Sync)>,
) -> Result<(M, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut adam = AdamState::new(config.adam(), model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&M::Example> = idx.iter().map(|&i| &train[i]).collect();
            let noise = config
                .seed
                .wrapping_add((epoch as u64) << 32)
                .wrapping_add(bi as u64);
            let (grads, loss) = batch_gradient(&model, &batch, Some(noise));
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            adam.update(&mut model, &grads)?;
            total += loss;
            batches += 1;
        }
        adam.config.lr *= config.lr_decay;
        let train_loss = total / batches as f64;
        let dev_loss = if dev.is_empty() {
            mean_loss(&model, train)
        } else {
            mean_loss(&model, dev)
        };
        if !dev_loss.is_finite() {
            return Err(Error::NonFinite(format!("dev loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
        };
        if let Some(cb) = progress {
            cb(&record);
        }
        epochs.push(record);
        if dev_loss < best_loss {
            best_loss = dev_loss;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            best_dev_loss: best_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    /// Least squares on a single weight: loss = (w x − y)².
    #[derive(Clone)]
    struct Line(Vec<Tensor>);

    impl Parameters for Line {
        fn tensors(&self) -> Vec<(String, &Tensor)> {
            self.0.tensors()
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            self.0.tensors_mut()
        }
    }

    impl Trainable for Line {
        type Example = (f64, f64);

        fn accumulate(&self, batch: &[&(f64, f64)], grads: &mut Self, _: Option<u64>) -> (f64, usize) {
            let w = self.0[0].data()[0];
            let mut loss = 0.0;
            for &&(x, y) in batch {
                let r = w * x - y;
                loss += r * r;
                grads.0[0].data_mut()[0] += 2.0 * r * x;
            }
            (loss, batch.len())
        }

        fn evaluate(&self, batch: &[&(f64, f64)]) -> (f64, usize) {
            let w = self.0[0].data()[0];
            (batch.iter().map(|(x, y)| (w * x - y).powi(2)).sum(), batch.len())
        }
    }

    #[test]
    fn fits_a_line_and_keeps_best_checkpoint() {
        let data: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 / 100.0, 3.0 * i as f64 / 100.0)).collect();
        let model = Line(vec![Tensor::zeros(&[1])]);
        let config = TrainConfig {
            lr: 0.05,
            batch_size: 16,
            max_epochs: 200,
            patience: 3,
            ..TrainConfig::default()
        };
        let (best, report) = fit(model, &data, &data[..20], &config, None).unwrap();
        assert!((best.0[0].data()[0] - 3.0).abs() < 0.05);
        let best_loss = report.epochs[report.best_epoch - 1].dev_loss;
        assert_eq!(best_loss, report.best_dev_loss);
        assert!(report.epochs.iter().all(|e| e.dev_loss >= best_loss));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let model = Line(vec![Tensor::zeros(&[1])]);
        assert!(fit(model, &[], &[], &TrainConfig::default(), None).is_err());
    }
}
