//! Gated recurrent unit with hand-derived backpropagation through time.
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! c  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```

use rand::Rng;

use super::diff::{bias_diff, linear_diff, product_diff, sigmoid_diff, tanh_diff};
use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::event::EventId;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Activations kept from one forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, input]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    /// Xavier matrices, zero biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruParams {
            w_z: Tensor::xavier(hidden, input, rng),
            w_r: Tensor::xavier(hidden, input, rng),
            w_h: Tensor::xavier(hidden, input, rng),
            u_z: Tensor::xavier(hidden, hidden, rng),
            u_r: Tensor::xavier(hidden, hidden, rng),
            u_h: Tensor::xavier(hidden, hidden, rng),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ] {
            out.push((format!("{prefix}{name}"), t));
        }
    }

    pub(crate) fn named_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]);
    }

    /// One forward step, keeping what backward needs.
    pub fn step_cached(&self, x: &[f64], h_prev: &[f64]) -> GruStepCache {
        let hidden = self.hidden_dim();
        let mut z = self.b_z.data().to_vec();
        matvec_acc(&self.w_z, x, &mut z);
        matvec_acc(&self.u_z, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.b_r.data().to_vec();
        matvec_acc(&self.w_r, x, &mut r);
        matvec_acc(&self.u_r, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut c = self.b_h.data().to_vec();
        matvec_acc(&self.w_h, x, &mut c);
        matvec_acc(&self.u_h, &rh, &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());

        let h = (0..hidden)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i])
            .collect();
        GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            c,
            h,
        }
    }

    /// One step under `self` and the exact change in the new state when the
    /// parameters become `other`, the input `x + dx` and the state `h + dh`.
    pub fn step_diff(&self, other: &GruParams, x: &[f64], dx: &[f64], h: &[f64], dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gate = |b0: &Tensor, b1: &Tensor, w0: &Tensor, w1: &Tensor, u0: &Tensor, u1: &Tensor, hin: &[f64], dhin: &[f64]| {
            let (mut a, mut da) = bias_diff(b0, b1);
            linear_diff(w0, w1, x, dx, &mut a, &mut da);
            linear_diff(u0, u1, hin, dhin, &mut a, &mut da);
            (a, da)
        };
        let (az, daz) = gate(&self.b_z, &other.b_z, &self.w_z, &other.w_z, &self.u_z, &other.u_z, h, dh);
        let (ar, dar) = gate(&self.b_r, &other.b_r, &self.w_r, &other.w_r, &self.u_r, &other.u_r, h, dh);
        let (z, dz): (Vec<f64>, Vec<f64>) = az.iter().zip(&daz).map(|(&a, &d)| sigmoid_diff(a, d)).unzip();
        let (r, dr): (Vec<f64>, Vec<f64>) = ar.iter().zip(&dar).map(|(&a, &d)| sigmoid_diff(a, d)).unzip();
        let (rh, drh): (Vec<f64>, Vec<f64>) = (0..h.len()).map(|i| product_diff(r[i], dr[i], h[i], dh[i])).unzip();
        let (ac, dac) = gate(&self.b_h, &other.b_h, &self.w_h, &other.w_h, &self.u_h, &other.u_h, &rh, &drh);
        let (c, dc): (Vec<f64>, Vec<f64>) = ac.iter().zip(&dac).map(|(&a, &d)| tanh_diff(a, d)).unzip();
        (0..h.len())
            .map(|i| {
                // h' = h + z (c − h)
                let (u, du) = (c[i] - h[i], dc[i] - dh[i]);
                let (_, dzu) = product_diff(z[i], dz[i], u, du);
                ((1.0 - z[i]) * h[i] + z[i] * c[i], dh[i] + dzu)
            })
            .unzip()
    }

    /// Backward through one step. Accumulates parameter gradients into
    /// `grads` and adds input/state gradients into `dx` and `dh_prev`.
    pub fn backward_step(
        &self,
        cache: &GruStepCache,
        dh: &[f64],
        grads: &mut GruParams,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hidden = self.hidden_dim();
        let mut da_z = vec![0.0; hidden];
        let mut da_h = vec![0.0; hidden];
        for i in 0..hidden {
            let (z, c, hp) = (cache.z[i], cache.c[i], cache.h_prev[i]);
            dh_prev[i] += dh[i] * (1.0 - z);
            da_z[i] = dh[i] * (c - hp) * z * (1.0 - z);
            da_h[i] = dh[i] * z * (1.0 - c * c);
        }

        // candidate branch
        let rh: Vec<f64> = cache.r.iter().zip(&cache.h_prev).map(|(a, b)| a * b).collect();
        outer_acc(&mut grads.w_h, &da_h, &cache.x);
        outer_acc(&mut grads.u_h, &da_h, &rh);
        add(grads.b_h.data_mut(), &da_h);
        matvec_t_acc(&self.w_h, &da_h, dx);
        let mut d_rh = vec![0.0; hidden];
        matvec_t_acc(&self.u_h, &da_h, &mut d_rh);
        let mut da_r = vec![0.0; hidden];
        for i in 0..hidden {
            let r = cache.r[i];
            dh_prev[i] += d_rh[i] * r;
            da_r[i] = d_rh[i] * cache.h_prev[i] * r * (1.0 - r);
        }

        // update gate
        outer_acc(&mut grads.w_z, &da_z, &cache.x);
        outer_acc(&mut grads.u_z, &da_z, &cache.h_prev);
        add(grads.b_z.data_mut(), &da_z);
        matvec_t_acc(&self.w_z, &da_z, dx);
        matvec_t_acc(&self.u_z, &da_z, dh_prev);

        // reset gate
        outer_acc(&mut grads.w_r, &da_r, &cache.x);
        outer_acc(&mut grads.u_r, &da_r, &cache.h_prev);
        add(grads.b_r.data_mut(), &da_r);
        matvec_t_acc(&self.w_r, &da_r, dx);
        matvec_t_acc(&self.u_r, &da_r, dh_prev);
    }

    /// Runs the cell over `inputs` from state `h0`.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>], h0: &[f64]) -> Vec<GruStepCache> {
        let mut caches: Vec<GruStepCache> = Vec::with_capacity(inputs.len());
        for x in inputs {
            let cache = match caches.last() {
                Some(prev) => self.step_cached(x, &prev.h),
                None => self.step_cached(x, h0),
            };
            caches.push(cache);
        }
        caches
    }

    /// [`forward_sequence`](Self::forward_sequence) with exact state
    /// changes, see [`step_diff`](Self::step_diff). Returns every state and
    /// its change.
    pub fn sequence_diff(
        &self,
        other: &GruParams,
        inputs: &[(Vec<f64>, Vec<f64>)],
        h0: &[f64],
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(inputs.len());
        let zero = vec![0.0; h0.len()];
        for (x, dx) in inputs {
            let next = match out.last() {
                Some((h, dh)) => self.step_diff(other, x, dx, h, dh),
                None => self.step_diff(other, x, dx, h0, &zero),
            };
            out.push(next);
        }
        out
    }

    /// Backpropagation through time. `dh_out[t]` is the loss gradient with
    /// respect to the output state of step `t`. Returns the per-step input
    /// gradients and the gradient with respect to the initial state.
    pub fn backward_sequence(
        &self,
        caches: &[GruStepCache],
        dh_out: &[Vec<f64>],
        grads: &mut GruParams,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let hidden = self.hidden_dim();
        let input = self.input_dim();
        let mut dxs = vec![vec![0.0; input]; caches.len()];
        let mut carry = vec![0.0; hidden];
        for t in (0..caches.len()).rev() {
            let mut dh = dh_out[t].clone();
            add(&mut dh, &carry);
            let mut dh_prev = vec![0.0; hidden];
            self.backward_step(&caches[t], &dh, grads, &mut dxs[t], &mut dh_prev);
            carry = dh_prev;
        }
        (dxs, carry)
    }
}

impl Parameters for GruParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(9);
        self.named("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(9);
        self.named_mut(&mut out);
        out
    }
}

#[inline]
fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// One GRU step with dimension checks.
pub fn gru_step(params: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() || h_prev.len() != params.hidden_dim() {
        return Err(Error::Dimension(format!(
            "gru expects input {} and state {}, got {} and {}",
            params.input_dim(),
            params.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(params.step_cached(x, h_prev).h)
}

/// Folds the cell over the embedded id sequence from a zero state and
/// returns the final hidden state.
pub fn encode_sequence(params: &GruParams, embeddings: &Tensor, ids: &[EventId]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot encode an empty sequence"));
    }
    if embeddings.cols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "embedding width {} does not match gru input {}",
            embeddings.cols(),
            params.input_dim()
        )));
    }
    let mut h = vec![0.0; params.hidden_dim()];
    for id in ids {
        if id.index() >= embeddings.rows() {
            return Err(Error::invalid(format!("event id {id} outside embedding table")));
        }
        h = params.step_cached(embeddings.row(id.index()), &h).h;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar re-implementation of the cell equations, indexed loops only.
    fn reference_step(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = p.hidden_dim();
        let id = p.input_dim();
        let at = |t: &Tensor, i: usize, j: usize, cols: usize| t.data()[i * cols + j];
        let mut out = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        for i in 0..hd {
            let mut az = p.b_z.data()[i];
            let mut ar = p.b_r.data()[i];
            for j in 0..id {
                az += at(&p.w_z, i, j, id) * x[j];
                ar += at(&p.w_r, i, j, id) * x[j];
            }
            for j in 0..hd {
                az += at(&p.u_z, i, j, hd) * h[j];
                ar += at(&p.u_r, i, j, hd) * h[j];
            }
            z[i] = 1.0 / (1.0 + (-az).exp());
            r[i] = 1.0 / (1.0 + (-ar).exp());
        }
        for i in 0..hd {
            let mut ah = p.b_h.data()[i];
            for j in 0..id {
                ah += at(&p.w_h, i, j, id) * x[j];
            }
            for j in 0..hd {
                ah += at(&p.u_h, i, j, hd) * r[j] * h[j];
            }
            out[i] = (1.0 - z[i]) * h[i] + z[i] * ah.tanh();
        }
        out
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruParams::zeros(3, 4);
        let h = gru_step(&p, &[1.0, -2.0, 0.5], &[0.2, -0.4, 1.0, 0.0]).unwrap();
        assert_eq!(h, [0.1, -0.2, 0.5, 0.0]);
        let h0 = gru_step(&p, &[1.0, 1.0, 1.0], &[0.0; 4]).unwrap();
        assert_eq!(h0, [0.0; 4]);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = GruParams::init(4, 4, &mut rng);
        for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            *b = Tensor::uniform(&[4], 0.5, &mut rng);
        }
        let x = Tensor::uniform(&[4], 1.0, &mut rng);
        let h = Tensor::uniform(&[4], 1.0, &mut rng);
        let got = gru_step(&p, x.data(), h.data()).unwrap();
        let want = reference_step(&p, x.data(), h.data());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = GruParams::zeros(3, 2);
        assert!(gru_step(&p, &[0.0; 2], &[0.0; 2]).is_err());
        assert!(gru_step(&p, &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn sequence_encoding_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParams::init(3, 5, &mut rng);
        let emb = Tensor::uniform(&[6, 3], 1.0, &mut rng);
        let one = encode_sequence(&p, &emb, &[EventId(4)]).unwrap();
        assert_eq!(one, gru_step(&p, emb.row(4), &[0.0; 5]).unwrap());

        let abc = encode_sequence(&p, &emb, &[EventId(3), EventId(4), EventId(5)]).unwrap();
        let cba = encode_sequence(&p, &emb, &[EventId(5), EventId(4), EventId(3)]).unwrap();
        assert_ne!(abc, cba);
        let again = encode_sequence(&p, &emb, &[EventId(3), EventId(4), EventId(5)]).unwrap();
        assert_eq!(abc, again);
        assert!(encode_sequence(&p, &emb, &[]).is_err());
    }

    #[test]
    fn step_diff_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p0 = GruParams::init(3, 4, &mut rng);
        let mut p1 = p0.clone();
        for t in p1.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
        let draw = |n: usize, s: f64, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-s..s)).collect() };
        let (x, dx, h, dh) = (draw(3, 1.0, &mut rng), draw(3, 0.3, &mut rng), draw(4, 0.9, &mut rng), draw(4, 0.1, &mut rng));
        let (h_new, d_new) = p0.step_diff(&p1, &x, &dx, &h, &dh);
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + v).collect() };
        let base = p0.step_cached(&x, &h).h;
        let moved = p1.step_cached(&add(&x, &dx), &add(&h, &dh)).h;
        for i in 0..4 {
            assert!((h_new[i] - base[i]).abs() < 1e-15);
            assert!((d_new[i] - (moved[i] - base[i])).abs() < 1e-14);
        }
    }
}
