//! Encoders mapping a token sequence to a fixed-width vector.
//!
//! `mean` averages token embeddings. `cnn` runs one convolution per n-gram
//! width in [`CNN_WINDOWS`] with `d/4` filters each, applies `tanh`,
//! max-pools over positions, concatenates, and projects back to width `d`.
//! Inputs shorter than a window are zero-padded to the window length. Both
//! modes map an empty token list to the zero vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::diff::{bias_diff, linear_diff, row_diff, tanh_diff};
use super::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc, Parameters, Tensor};
use crate::error::{Error, Result};

pub const CNN_WINDOWS: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    #[default]
    Mean,
    Cnn,
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TextMode::Mean),
            "cnn" => Ok(TextMode::Cnn),
            other => Err(Error::invalid(format!("unknown text encoder mode {other:?}"))),
        }
    }
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::Mean => "mean",
            TextMode::Cnn => "cnn",
        })
    }
}

pub fn filters_per_window(dim: usize) -> usize {
    (dim / 4).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub mode: TextMode,
    pub token_emb: Tensor,
    pub conv_w: Vec<Tensor>,
    pub conv_b: Vec<Tensor>,
    pub proj: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    ids: Vec<u32>,
    // per window: winning position per filter and pooled activation
    argmax: Vec<Vec<usize>>,
    pooled: Vec<f64>,
}

impl TextEncoder {
    pub fn init<R: Rng>(mode: TextMode, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let token_emb = Tensor::uniform(&[vocab, dim], 0.1, rng);
        let (conv_w, conv_b, proj) = match mode {
            TextMode::Mean => (Vec::new(), Vec::new(), None),
            TextMode::Cnn => {
                let f = filters_per_window(dim);
                let w = CNN_WINDOWS
                    .iter()
                    .map(|&n| Tensor::xavier(f, n * dim, rng))
                    .collect();
                let b = CNN_WINDOWS.iter().map(|_| Tensor::zeros(&[f])).collect();
                (w, b, Some(Tensor::xavier(dim, f * CNN_WINDOWS.len(), rng)))
            }
        };
        TextEncoder {
            mode,
            token_emb,
            conv_w,
            conv_b,
            proj,
        }
    }

    pub fn dim(&self) -> usize {
        self.token_emb.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.rows()
    }

    pub fn encode(&self, ids: &[u32]) -> Vec<f64> {
        self.forward(ids).0
    }

    pub fn forward(&self, ids: &[u32]) -> (Vec<f64>, TextCache) {
        let dim = self.dim();
        let mut cache = TextCache {
            ids: ids.to_vec(),
            argmax: Vec::new(),
            pooled: Vec::new(),
        };
        if ids.is_empty() {
            return (vec![0.0; dim], cache);
        }
        match self.mode {
            TextMode::Mean => {
                let mut v = vec![0.0; dim];
                let scale = 1.0 / ids.len() as f64;
                for &t in ids {
                    axpy(scale, self.token_emb.row(t as usize), &mut v);
                }
                (v, cache)
            }
            TextMode::Cnn => {
                for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
                    let n = w.cols() / dim;
                    let positions = ids.len().max(n) - n + 1;
                    let f = b.len();
                    let mut best = vec![f64::NEG_INFINITY; f];
                    let mut arg = vec![0; f];
                    for p in 0..positions {
                        let x = self.window(ids, p, n);
                        let mut a = b.data().to_vec();
                        matvec_acc(w, &x, &mut a);
                        for k in 0..f {
                            let act = a[k].tanh();
                            if act > best[k] {
                                best[k] = act;
                                arg[k] = p;
                            }
                        }
                    }
                    cache.pooled.extend_from_slice(&best);
                    cache.argmax.push(arg);
                }
                let proj = self.proj.as_ref().expect("cnn encoder has a projection");
                let mut v = vec![0.0; dim];
                matvec_acc(proj, &cache.pooled, &mut v);
                (v, cache)
            }
        }
    }

    /// Encoding under `self` and its exact change when the parameters
    /// become `other` (same mode and shapes).
    pub fn encode_diff(&self, other: &TextEncoder, ids: &[u32]) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        if ids.is_empty() {
            return (vec![0.0; dim], vec![0.0; dim]);
        }
        match self.mode {
            TextMode::Mean => {
                let (mut v, mut dv) = (vec![0.0; dim], vec![0.0; dim]);
                let scale = 1.0 / ids.len() as f64;
                for &t in ids {
                    let (e, de) = row_diff(&self.token_emb, &other.token_emb, t as usize);
                    axpy(scale, &e, &mut v);
                    axpy(scale, &de, &mut dv);
                }
                (v, dv)
            }
            TextMode::Cnn => {
                let (mut pooled, mut dpooled) = (Vec::new(), Vec::new());
                for wi in 0..self.conv_w.len() {
                    let (w0, w1) = (&self.conv_w[wi], &other.conv_w[wi]);
                    let n = w0.cols() / dim;
                    let f = self.conv_b[wi].len();
                    let positions = ids.len().max(n) - n + 1;
                    let acts: Vec<(Vec<f64>, Vec<f64>)> = (0..positions)
                        .map(|p| {
                            let (x0, x1) = (self.window(ids, p, n), other.window(ids, p, n));
                            let dx: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
                            let (mut a, mut da) = bias_diff(&self.conv_b[wi], &other.conv_b[wi]);
                            linear_diff(w0, w1, &x0, &dx, &mut a, &mut da);
                            a.iter().zip(&da).map(|(&a, &d)| tanh_diff(a, d)).unzip()
                        })
                        .collect();
                    for k in 0..f {
                        // Same first-maximum rule as `forward`, at both points.
                        let arg0 = (0..positions).fold(0, |b, p| if acts[p].0[k] > acts[b].0[k] { p } else { b });
                        let moved = |p: usize| acts[p].0[k] + acts[p].1[k];
                        let arg1 = (0..positions).fold(0, |b, p| if moved(p) > moved(b) { p } else { b });
                        let base = acts[arg0].0[k];
                        pooled.push(base);
                        dpooled.push(if arg1 == arg0 {
                            acts[arg0].1[k]
                        } else {
                            (acts[arg1].0[k] - base) + acts[arg1].1[k]
                        });
                    }
                }
                let (p0, p1) = (
                    self.proj.as_ref().expect("cnn encoder has a projection"),
                    other.proj.as_ref().expect("cnn encoder has a projection"),
                );
                let (mut v, mut dv) = (vec![0.0; dim], vec![0.0; dim]);
                linear_diff(p0, p1, &pooled, &dpooled, &mut v, &mut dv);
                (v, dv)
            }
        }
    }

    /// Concatenated embeddings for the width-`n` window starting at `p`,
    /// zeros past the end of the sequence.
    fn window(&self, ids: &[u32], p: usize, n: usize) -> Vec<f64> {
        let dim = self.dim();
        let mut x = vec![0.0; n * dim];
        for q in 0..n {
            if let Some(&t) = ids.get(p + q) {
                x[q * dim..(q + 1) * dim].copy_from_slice(self.token_emb.row(t as usize));
            }
        }
        x
    }

    /// Accumulates gradients for `dv`, the loss gradient of the output.
    pub fn backward(&self, cache: &TextCache, dv: &[f64], grads: &mut TextEncoder) {
        let ids = &cache.ids;
        if ids.is_empty() {
            return;
        }
        let dim = self.dim();
        match self.mode {
            TextMode::Mean => {
                let scale = 1.0 / ids.len() as f64;
                for &t in ids {
                    axpy(scale, dv, grads.token_emb.row_mut(t as usize));
                }
            }
            TextMode::Cnn => {
                let proj = self.proj.as_ref().expect("cnn encoder has a projection");
                outer_acc(grads.proj.as_mut().expect("cnn grads"), dv, &cache.pooled);
                let mut dpooled = vec![0.0; cache.pooled.len()];
                matvec_t_acc(proj, dv, &mut dpooled);

                let mut offset = 0;
                for (wi, w) in self.conv_w.iter().enumerate() {
                    let n = w.cols() / dim;
                    let f = self.conv_b[wi].len();
                    for k in 0..f {
                        let act = cache.pooled[offset + k];
                        let da = dpooled[offset + k] * (1.0 - act * act);
                        if da == 0.0 {
                            continue;
                        }
                        let p = cache.argmax[wi][k];
                        let x = self.window(ids, p, n);
                        axpy(da, &x, grads.conv_w[wi].row_mut(k));
                        grads.conv_b[wi].data_mut()[k] += da;
                        let wrow = w.row(k);
                        for q in 0..n {
                            if let Some(&t) = ids.get(p + q) {
                                axpy(
                                    da,
                                    &wrow[q * dim..(q + 1) * dim],
                                    grads.token_emb.row_mut(t as usize),
                                );
                            }
                        }
                    }
                    offset += f;
                }
            }
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}token_emb"), &self.token_emb));
        for (n, (w, b)) in CNN_WINDOWS.iter().zip(self.conv_w.iter().zip(&self.conv_b)) {
            out.push((format!("{prefix}conv{n}_w"), w));
            out.push((format!("{prefix}conv{n}_b"), b));
        }
        if let Some(p) = &self.proj {
            out.push((format!("{prefix}proj"), p));
        }
    }

    pub(crate) fn named_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.token_emb);
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        if let Some(p) = &mut self.proj {
            out.push(p);
        }
    }
}

impl Parameters for TextEncoder {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.named("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.named_mut(&mut out);
        out
    }
}

/// Encodes `token_ids` with `encoder`, checking ids against its table.
pub fn encode_text(encoder: &TextEncoder, token_ids: &[u32]) -> Result<Vec<f64>> {
    if let Some(&bad) = token_ids.iter().find(|&&t| t as usize >= encoder.vocab_size()) {
        return Err(Error::invalid(format!("token id {bad} outside embedding table")));
    }
    Ok(encoder.encode(token_ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_diff_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [TextMode::Mean, TextMode::Cnn] {
            let e0 = TextEncoder::init(mode, 6, 8, &mut rng);
            let mut e1 = e0.clone();
            for t in e1.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
            }
            for ids in [vec![], vec![2], vec![1, 4, 4, 0, 5, 3, 2]] {
                let (v, dv) = e0.encode_diff(&e1, &ids);
                let (a, b) = (e0.encode(&ids), e1.encode(&ids));
                for i in 0..8 {
                    assert!((v[i] - a[i]).abs() < 1e-15);
                    assert!((dv[i] - (b[i] - a[i])).abs() < 1e-14, "{mode:?} {ids:?}");
                }
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cnn".parse::<TextMode>().unwrap(), TextMode::Cnn);
        assert!("rnn".parse::<TextMode>().is_err());
    }

    #[test]
    fn mean_of_identical_tokens_is_the_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = TextEncoder::init(TextMode::Mean, 4, 6, &mut rng);
        let v = encode_text(&enc, &[2, 2]).unwrap();
        for (a, b) in v.iter().zip(enc.token_emb.row(2)) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(encode_text(&enc, &[]).unwrap(), vec![0.0; 6]);
        assert!(encode_text(&enc, &[9]).is_err());
    }

    #[test]
    fn cnn_single_token_matches_padded_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = TextEncoder::init(TextMode::Cnn, 5, 8, &mut rng);
        for b in enc.conv_b.iter_mut() {
            *b = Tensor::uniform(&[2], 0.3, &mut rng);
        }
        let d = 8;
        let f = 2;
        let e = enc.token_emb.row(3).to_vec();
        // one position per window: the token followed by zero padding, so
        // each filter sees only its first d weights
        let mut pooled = Vec::new();
        for (w, b) in enc.conv_w.iter().zip(&enc.conv_b) {
            for k in 0..f {
                let mut a = b.data()[k];
                for j in 0..d {
                    a += w.row(k)[j] * e[j];
                }
                pooled.push(a.tanh());
            }
        }
        let proj = enc.proj.as_ref().unwrap();
        let want: Vec<f64> = (0..d)
            .map(|i| (0..pooled.len()).map(|j| proj.row(i)[j] * pooled[j]).sum())
            .collect();
        let got = encode_text(&enc, &[3]).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(encode_text(&enc, &[]).unwrap(), vec![0.0; 8]);
    }

    fn check_mode(mode: TextMode, ids: &[u32]) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TextEncoder::init(mode, 6, 8, &mut rng);
        let target = Tensor::uniform(&[8], 1.0, &mut rng);
        let loss = |e: &TextEncoder| -> f64 {
            e.encode(ids).iter().zip(target.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = enc.forward(ids);
        let mut grads = enc.zeros_like();
        enc.backward(&cache, target.data(), &mut grads);
        let base = enc.flatten();
        let err = finite_diff_check(
            |p| {
                let mut e = enc.clone();
                e.set_flat(p);
                loss(&e)
            },
            &base,
            &grads.flatten(),
            1e-5,
            None,
        );
        assert!(err.max_rel_error < 1e-6, "{mode}: {err:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_mode(TextMode::Mean, &[1, 4, 4, 2]);
        check_mode(TextMode::Cnn, &[1, 4, 2, 5, 3, 0, 2]);
        check_mode(TextMode::Cnn, &[3]);
    }
}
