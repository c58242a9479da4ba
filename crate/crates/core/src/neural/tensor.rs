use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in `(-scale, scale)`.
    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Glorot-style uniform init for a `rows × cols` matrix.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(&[rows, cols], limit, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out += M x`.
#[inline]
pub fn matvec_acc(m: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(m.rows(), out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Mᵀ g`.
#[inline]
pub fn matvec_t_acc(m: &Tensor, g: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    debug_assert_eq!(m.rows(), g.len());
    debug_assert_eq!(cols, out.len());
    for (&gi, row) in g.iter().zip(m.data.chunks_exact(cols)) {
        if gi != 0.0 {
            axpy(gi, row, out);
        }
    }
}

/// `M += g xᵀ`.
#[inline]
pub fn outer_acc(m: &mut Tensor, g: &[f64], x: &[f64]) {
    let cols = m.cols();
    debug_assert_eq!(m.rows(), g.len());
    debug_assert_eq!(cols, x.len());
    for (&gi, row) in g.iter().zip(m.data.chunks_exact_mut(cols)) {
        if gi != 0.0 {
            axpy(gi, x, row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A model whose trainable state is a fixed, ordered list of tensors.
///
/// The order returned by [`tensors`](Parameters::tensors) and
/// [`tensors_mut`](Parameters::tensors_mut) must agree; it defines the flat
/// layout used by the optimizer, the gradient checker and model files.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn add_assign(&mut self, other: &Self) {
        let theirs = other.tensors();
        for (mine, (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, values.len());
    }

    /// Copies named tensors into this model, checking names and shapes.
    fn assign_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != named.len() {
            return Err(Error::format(format!(
                "model has {} tensors, file has {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape), (fname, ft)) in expected.iter().zip(named) {
            if name != fname || shape.as_slice() != ft.shape() {
                return Err(Error::format(format!(
                    "tensor mismatch: expected {name} {shape:?}, found {fname} {:?}",
                    ft.shape()
                )));
            }
        }
        for (t, (_, ft)) in self.tensors_mut().into_iter().zip(named) {
            t.data_mut().copy_from_slice(ft.data());
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

impl Parameters for Vec<Tensor> {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.iter().enumerate().map(|(i, t)| (format!("t{i}"), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_family() {
        let m = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut out = vec![0.0; 2];
        matvec_acc(&m, &[1., 0., -1.], &mut out);
        assert_eq!(out, [-2., -2.]);
        let mut back = vec![0.0; 3];
        matvec_t_acc(&m, &[1., 1.], &mut back);
        assert_eq!(back, [5., 7., 9.]);
        let mut g = Tensor::zeros(&[2, 3]);
        outer_acc(&mut g, &[1., 2.], &[1., 0., 3.]);
        assert_eq!(g.data(), &[1., 0., 3., 2., 0., 6.]);
    }

    #[test]
    fn from_vec_checks_size() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1, 2])];
        p.set_flat(&[1., 2., 3., 4.]);
        assert_eq!(p.flatten(), [1., 2., 3., 4.]);
        assert_eq!(p.zeros_like().flatten(), [0.; 4]);
    }
}
