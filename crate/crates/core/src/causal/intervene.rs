//! Plug-in estimate of `p(e_i | do(e_{i-1} = k))` by averaging the
//! conditional model over a fixed sample of observed contexts.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::model::{ConditionalContext, ConditionalModel, TrainingInstance};
use crate::error::{Error, Result};
use crate::event::{EventId, Vocabulary};
use crate::neural::softmax;

const TABLE_MAGIC: &str = "#scriptcausal-itable v1";

/// Contexts over which the intervention is averaged. Each keeps its
/// history, text and out-of-text events; `prev` is replaced by the
/// intervened event.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSet {
    pub contexts: Vec<ConditionalContext>,
    pub seed: u64,
}

impl AdjustmentSet {
    /// Up to `n` contexts drawn without replacement, kept in corpus order.
    pub fn sample(instances: &[TrainingInstance], n: usize, seed: u64) -> Result<Self> {
        if instances.is_empty() || n == 0 {
            return Err(Error::invalid("adjustment set needs at least one context"));
        }
        let mut idx = if n >= instances.len() {
            (0..instances.len()).collect()
        } else {
            sample(&mut ChaCha8Rng::seed_from_u64(seed), instances.len(), n).into_vec()
        };
        idx.sort_unstable();
        Ok(AdjustmentSet {
            contexts: idx.into_iter().map(|i| instances[i].context.clone()).collect(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Hex SHA-256 prefix of a model's serialized bytes.
pub fn model_id(model: &ConditionalModel) -> String {
    let digest = Sha256::digest(model.to_model_file().to_bytes());
    hex::encode(&digest[..8])
}

/// Row `k` is the estimated `p(· | do(k))` over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionTable {
    size: usize,
    effect: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub model_id: String,
}

impl InterventionTable {
    pub fn from_rows(rows: Vec<Vec<f64>>, samples: usize, seed: u64, model_id: impl Into<String>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Dimension(format!("intervention table must be {size}x{size}")));
        }
        let effect: Vec<f64> = rows.into_iter().flatten().collect();
        if effect.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("intervention table".into()));
        }
        Ok(InterventionTable {
            size,
            effect,
            samples,
            seed,
            model_id: model_id.into(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, k: EventId) -> &[f64] {
        &self.effect[k.index() * self.size..(k.index() + 1) * self.size]
    }

    pub fn get(&self, k: EventId, l: EventId) -> f64 {
        self.effect[k.index() * self.size + l.index()]
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = format!(
            "{TABLE_MAGIC} {} {} {} {}\n",
            self.size, self.samples, self.seed, self.model_id
        )
        .into_bytes();
        buf.reserve(self.effect.len() * 8);
        for p in &self.effect {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|_| Error::format("intervention table header is not text"))?;
        let rest = header
            .trim_end()
            .strip_prefix(TABLE_MAGIC)
            .ok_or_else(|| Error::format("not an intervention table"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let [size, samples, seed, id] = fields[..] else {
            return Err(Error::format("intervention table header needs size, samples, seed and model id"));
        };
        let num = |s: &str| s.parse::<u64>().map_err(|_| Error::format(format!("bad header field {s:?}")));
        let size = num(size)? as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::format(format!("reading table data: {e}")))?;
        if bytes.len() != size * size * 8 {
            return Err(Error::format(format!(
                "expected {} bytes of table data, found {}",
                size * size * 8,
                bytes.len()
            )));
        }
        let rows = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>()
            .chunks(size.max(1))
            .map(<[f64]>::to_vec)
            .collect();
        let rows = if size == 0 { Vec::new() } else { rows };
        Self::from_rows(rows, num(samples)? as usize, num(seed)?, id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f)).map_err(|e| e.in_file(path))
    }

    /// TSV with a `k` column and one column per event key.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        write!(w, "k")?;
        for l in 0..self.size {
            write!(w, "\t{}", vocab.key_of(EventId(l as u32)))?;
        }
        writeln!(w)?;
        for k in 0..self.size {
            write!(w, "{}", vocab.key_of(EventId(k as u32)))?;
            for p in self.row(EventId(k as u32)) {
                write!(w, "\t{p:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `p̂(e | do(k)) = (1/N) Σ_j p(e | k, context_j)` for every vocabulary id
/// `k`. Each context's GRU state over its history and its text and
/// out-of-text terms are computed once; rows run in parallel and each sums
/// its contexts in order, so the result is independent of the thread count
/// and equal bit for bit to averaging [`conditional_distribution`] calls.
///
/// [`conditional_distribution`]: super::model::conditional_distribution
pub fn estimate_interventions(model: &ConditionalModel, adjustment: &AdjustmentSet) -> Result<InterventionTable> {
    if adjustment.is_empty() {
        return Err(Error::invalid("empty adjustment set"));
    }
    for ctx in &adjustment.contexts {
        model.check_context(ctx)?;
    }
    let v = model.vocab_size();
    let cached: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = adjustment
        .contexts
        .par_iter()
        .map(|ctx| {
            let (bt, wo) = model.static_terms(ctx);
            (model.history_state(&ctx.history), bt, wo)
        })
        .collect();
    let n = cached.len() as f64;
    let rows: Vec<Vec<f64>> = (0..v)
        .into_par_iter()
        .map(|k| {
            let x = model.embed.row(k);
            let mut acc = vec![0.0; v];
            for (h, bt, wo) in &cached {
                let v_e = model.gru.step_cached(x, h).h;
                let p = softmax(&model.logits_from(&v_e, bt, wo.as_deref()));
                for (a, q) in acc.iter_mut().zip(p) {
                    *a += q;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    InterventionTable::from_rows(rows, adjustment.len(), adjustment.seed, model_id(model))
}
