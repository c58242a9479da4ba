//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which coordinates to perturb: all of them, or a seeded sample.
#[derive(Debug, Clone, Copy)]
pub struct ParamSample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Compares `analytic` against `(loss(p + eps) − loss(p − eps)) / 2eps`
/// coordinate by coordinate. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    sample_spec: Option<ParamSample>,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let indices: Vec<usize> = match sample_spec {
        Some(s) if s.count < params.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut idx = sample(&mut rng, params.len(), s.count).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..params.len()).collect(),
    };

    let mut point = params.to_vec();
    let mut worst = 0.0;
    let mut worst_index = None;
    for &i in &indices {
        let orig = point[i];
        point[i] = orig + eps;
        let up = loss(&point);
        point[i] = orig - eps;
        let down = loss(&point);
        point[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst || worst_index.is_none() {
            worst = rel;
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error: worst,
        worst_index,
        checked: indices.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let x = [0.5, -1.5, 2.0, 3.25];
        let w = [0.1, 0.2, -0.3, 0.4];
        let loss = |p: &[f64]| p.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let r = finite_diff_check(loss, &w, &x, 1e-5, None);
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn planted_fault_is_detected() {
        // analytic gradient doubled: |2g - g| / |2g| = 0.5
        let loss = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let w = [0.3, -0.7, 1.1];
        let wrong: Vec<f64> = w.iter().map(|v| 2.0 * 2.0 * v).collect();
        let r = finite_diff_check(loss, &w, &wrong, 1e-5, None);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn sampling_is_seeded() {
        let loss = |p: &[f64]| p.iter().map(|v| v.powi(3)).sum::<f64>();
        let w: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let g: Vec<f64> = w.iter().map(|v| 3.0 * v * v).collect();
        let s = Some(ParamSample { count: 10, seed: 4 });
        let a = finite_diff_check(loss, &w, &g, 1e-5, s);
        let b = finite_diff_check(loss, &w, &g, 1e-5, s);
        assert_eq!(a, b);
        assert_eq!(a.checked, 10);
        assert!(a.max_rel_error < 1e-8);
    }
}
