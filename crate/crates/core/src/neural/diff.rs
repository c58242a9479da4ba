//! Exact differences between two forward passes.
//!
//! Each helper takes a quantity at a base point together with its change
//! `d` at a perturbed point and returns the base output and the change in
//! the output, computed from identities that never subtract two nearly
//! equal outputs. Finite-difference gradient checks use this: for tiny
//! gradients, differencing two separately rounded forward passes loses
//! every significant digit of the change.

use super::tensor::{matvec_acc, sigmoid, Tensor};

/// `y += W₀ x` and `dy += W₁ dx + (W₁ − W₀) x`, so that
/// `W₁ (x + dx) − W₀ x` is accumulated in `dy`.
pub fn linear_diff(w0: &Tensor, w1: &Tensor, x: &[f64], dx: &[f64], y: &mut [f64], dy: &mut [f64]) {
    matvec_acc(w0, x, y);
    matvec_acc(w1, dx, dy);
    let cols = w0.cols();
    for ((d, r0), r1) in dy
        .iter_mut()
        .zip(w0.data().chunks_exact(cols))
        .zip(w1.data().chunks_exact(cols))
    {
        for ((a, b), xi) in r0.iter().zip(r1).zip(x) {
            if a != b {
                *d += (b - a) * xi;
            }
        }
    }
}

/// `b₀` and `b₁ − b₀`.
pub fn bias_diff(b0: &Tensor, b1: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let d = b0.data().iter().zip(b1.data()).map(|(a, b)| b - a).collect();
    (b0.data().to_vec(), d)
}

/// Row `i` of `E₀` and its change.
pub fn row_diff(e0: &Tensor, e1: &Tensor, i: usize) -> (Vec<f64>, Vec<f64>) {
    let d = e0.row(i).iter().zip(e1.row(i)).map(|(a, b)| b - a).collect();
    (e0.row(i).to_vec(), d)
}

/// `σ(a)` and `σ(a + d) − σ(a) = σ(a + d) σ(−a) (1 − e^{−d})`.
pub fn sigmoid_diff(a: f64, d: f64) -> (f64, f64) {
    (sigmoid(a), sigmoid(a + d) * sigmoid(-a) * -(-d).exp_m1())
}

/// `tanh a` and `tanh(a + d) − tanh a = sinh d / (cosh a cosh(a + d))`.
pub fn tanh_diff(a: f64, d: f64) -> (f64, f64) {
    (a.tanh(), d.sinh() / (a.cosh() * (a + d).cosh()))
}

/// `x y` and `(x + dx)(y + dy) − x y`.
pub fn product_diff(x: f64, dx: f64, y: f64, dy: f64) -> (f64, f64) {
    (x * y, x * dy + dx * (y + dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_identities_match_direct_differences() {
        for &(a, d) in &[(0.3, 0.2), (-2.0, 0.7), (4.0, -1.5), (0.0, 1e-3), (-30.0, 2.0)] {
            let (s, ds) = sigmoid_diff(a, d);
            assert!((s - sigmoid(a)).abs() < 1e-15);
            assert!((ds - (sigmoid(a + d) - sigmoid(a))).abs() < 1e-14, "{a} {d}");
            let (t, dt) = tanh_diff(a, d);
            assert!((t - a.tanh()).abs() < 1e-15);
            assert!((dt - ((a + d).tanh() - a.tanh())).abs() < 1e-14, "{a} {d}");
        }
        let (p, dp) = product_diff(1.5, 0.25, -2.0, 0.5);
        assert_eq!(p, -3.0);
        assert!((dp - (1.75 * -1.5 - -3.0)).abs() < 1e-15);
    }

    /// For a tiny step the change is the derivative times the step to
    /// nearly full precision, which direct differencing cannot deliver.
    #[test]
    fn tiny_steps_keep_their_digits() {
        let (a, d) = (0.8, 1e-12);
        let (_, ds) = sigmoid_diff(a, d);
        let slope = sigmoid(a) * sigmoid(-a);
        assert!((ds / d - slope).abs() / slope < 1e-10);
        let (_, dt) = tanh_diff(a, d);
        let slope = 1.0 - a.tanh().powi(2);
        assert!((dt / d - slope).abs() / slope < 1e-10);
    }

    #[test]
    fn linear_diff_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let mut w1 = w0.clone();
        w1.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dx: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (mut y, mut dy) = (vec![0.5; 3], vec![0.0; 3]);
        linear_diff(&w0, &w1, &x, &dx, &mut y, &mut dy);
        let x1: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let (mut y0, mut y1) = (vec![0.5; 3], vec![0.5; 3]);
        matvec_acc(&w0, &x, &mut y0);
        matvec_acc(&w1, &x1, &mut y1);
        for i in 0..3 {
            assert!((y[i] - y0[i]).abs() < 1e-15);
            assert!((dy[i] - (y1[i] - y0[i])).abs() < 1e-14);
        }
    }
}
