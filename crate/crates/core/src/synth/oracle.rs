//! Exact observational and interventional distributions by enumeration.

use std::io::Write;

use super::cbn::SyntheticCbn;
use crate::error::{Error, Result};

/// `p(e_i | do(e_{i-1} = k)) = Σ_z π(z) g_z(· | k)`. The scenario is the
/// only confounder and is fixed before the chain starts, so the
/// intervention leaves its prior untouched.
pub fn exact_do_distribution(cbn: &SyntheticCbn, k: usize) -> Result<Vec<f64>> {
    cbn.check_event(k)?;
    let mut out = vec![0.0; cbn.num_events()];
    for s in &cbn.scenarios {
        for (o, g) in out.iter_mut().zip(s.row(Some(k))) {
            *o += s.prior * g;
        }
    }
    Ok(out)
}

/// Joint `p(z, e_t = e)` for `t = 1..=L`, indexed `[t - 1][z][e]`.
pub fn forward_marginals(cbn: &SyntheticCbn) -> Vec<Vec<Vec<f64>>> {
    let n = cbn.num_events();
    let mut out = Vec::with_capacity(cbn.length);
    let mut alpha: Vec<Vec<f64>> = cbn
        .scenarios
        .iter()
        .map(|s| s.row(None).iter().map(|g| s.prior * g).collect())
        .collect();
    for _ in 0..cbn.length {
        let next = cbn
            .scenarios
            .iter()
            .zip(&alpha)
            .map(|(s, a)| {
                let mut row = vec![0.0; n];
                for (e, &w) in a.iter().enumerate() {
                    for (r, g) in row.iter_mut().zip(s.row(Some(e))) {
                        *r += w * g;
                    }
                }
                row
            })
            .collect();
        out.push(std::mem::replace(&mut alpha, next));
    }
    out
}

fn mix_by_posterior(cbn: &SyntheticCbn, k: usize, weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid(format!("event {k} has zero probability at this position")));
    }
    let mut out = vec![0.0; cbn.num_events()];
    for (s, w) in cbn.scenarios.iter().zip(weights) {
        for (o, g) in out.iter_mut().zip(s.row(Some(k))) {
            *o += w / total * g;
        }
    }
    Ok(out)
}

/// `p(e_{t+1} | e_t = k)` at position `t ∈ [1, L]`: the scenario posterior
/// `p(z | e_t = k)` from forward enumeration mixes the kernels' `k` rows.
pub fn exact_conditional(cbn: &SyntheticCbn, k: usize, position: usize) -> Result<Vec<f64>> {
    cbn.check_event(k)?;
    if position == 0 || position > cbn.length {
        return Err(Error::invalid(format!(
            "position {position} outside 1..={}",
            cbn.length
        )));
    }
    let alpha = forward_marginals(cbn);
    let w: Vec<f64> = alpha[position - 1].iter().map(|a| a[k]).collect();
    mix_by_posterior(cbn, k, &w)
}

/// `p(e_{t+1} | e_t = k)` pooled over positions `1..L-1`, weighted by how
/// often `k` occurs there. This is the observational conditional seen by a
/// model trained on every adjacent pair of sampled chains.
pub fn pooled_conditional(cbn: &SyntheticCbn, k: usize) -> Result<Vec<f64>> {
    cbn.check_event(k)?;
    if cbn.length < 2 {
        return Err(Error::invalid("chains of length 1 have no adjacent pairs"));
    }
    let alpha = forward_marginals(cbn);
    let mut w = vec![0.0; cbn.scenarios.len()];
    for a in &alpha[..cbn.length - 1] {
        for (wz, az) in w.iter_mut().zip(a) {
            *wz += az[k];
        }
    }
    mix_by_posterior(cbn, k, &w)
}

/// Event marginal averaged over the `L` positions; the expected unigram
/// distribution of a sampled corpus.
pub fn position_marginal(cbn: &SyntheticCbn) -> Vec<f64> {
    let mut out = vec![0.0; cbn.num_events()];
    for a in forward_marginals(cbn) {
        for az in a {
            for (o, p) in out.iter_mut().zip(az) {
                *o += p / cbn.length as f64;
            }
        }
    }
    out
}

/// Every oracle table of a CBN.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDistributions {
    /// `[k][e]`.
    pub interventional: Vec<Vec<f64>>,
    /// `[t - 1][k][e]` for `t = 1..=L`.
    pub observational: Vec<Vec<Vec<f64>>>,
    /// `[k][e]`, pooled over positions `1..L-1`.
    pub pooled: Vec<Vec<f64>>,
}

impl OracleDistributions {
    pub fn compute(cbn: &SyntheticCbn) -> Result<Self> {
        let n = cbn.num_events();
        let interventional = (0..n).map(|k| exact_do_distribution(cbn, k)).collect::<Result<_>>()?;
        let alpha = forward_marginals(cbn);
        let observational = alpha
            .iter()
            .map(|a| {
                (0..n)
                    .map(|k| {
                        let w: Vec<f64> = a.iter().map(|az| az[k]).collect();
                        mix_by_posterior(cbn, k, &w)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let pooled = if cbn.length >= 2 {
            (0..n).map(|k| pooled_conditional(cbn, k)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(OracleDistributions {
            interventional,
            observational,
            pooled,
        })
    }

    /// TSV: header `kind position k <event keys..>`, then one row per
    /// distribution. `kind` is `do`, `obs` (with a position) or `pooled`.
    pub fn write_tsv<W: Write>(&self, cbn: &SyntheticCbn, mut w: W) -> std::io::Result<()> {
        write!(w, "kind\tposition\tk")?;
        for e in cbn.events() {
            write!(w, "\t{}", e.key())?;
        }
        writeln!(w)?;
        let row = |w: &mut W, kind: &str, pos: &str, k: usize, dist: &[f64]| -> std::io::Result<()> {
            write!(w, "{kind}\t{pos}\t{}", cbn.events()[k].key())?;
            for p in dist {
                write!(w, "\t{p:.17e}")?;
            }
            writeln!(w)
        };
        for (k, d) in self.interventional.iter().enumerate() {
            row(&mut w, "do", "-", k, d)?;
        }
        for (t, rows) in self.observational.iter().enumerate() {
            for (k, d) in rows.iter().enumerate() {
                row(&mut w, "obs", &(t + 1).to_string(), k, d)?;
            }
        }
        for (k, d) in self.pooled.iter().enumerate() {
            row(&mut w, "pooled", "-", k, d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::build_fixture;

    fn sum(v: &[f64]) -> f64 {
        v.iter().sum()
    }

    #[test]
    fn uniform_fixture_is_uniform() {
        let cbn = build_fixture("F-UNIFORM").unwrap();
        let n = cbn.num_events() as f64;
        for k in 0..cbn.num_events() {
            let d = exact_do_distribution(&cbn, k).unwrap();
            assert!(d.iter().all(|&p| (p - 1.0 / n).abs() < 1e-15));
        }
    }

    #[test]
    fn det_fixture_concentrates_on_successor() {
        let cbn = build_fixture("F-DET").unwrap();
        let n = cbn.num_events();
        for k in 0..n {
            let d = exact_do_distribution(&cbn, k).unwrap();
            assert!(d[(k + 1) % n] >= 0.98);
        }
    }

    #[test]
    fn single_scenario_conditional_equals_do() {
        let cbn = build_fixture("F-DET").unwrap();
        for k in 0..cbn.num_events() {
            let d = exact_do_distribution(&cbn, k).unwrap();
            for t in 1..=cbn.length {
                let c = exact_conditional(&cbn, k, t).unwrap();
                assert!(c.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn two_scenario_do_is_the_row_mean() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let k = cbn.event_index("buy:nsubj").unwrap();
        let d = exact_do_distribution(&cbn, k).unwrap();
        let (r1, r2) = (cbn.scenarios[0].row(Some(k)), cbn.scenarios[1].row(Some(k)));
        for e in 0..d.len() {
            assert!((d[e] - (r1[e] + r2[e]) / 2.0).abs() < 1e-15);
        }
    }

    /// Independent oracle: enumerate every (z, e_1..e_3) path of a
    /// length-3 copy of the popcorn fixture and read off joint counts.
    #[test]
    fn conditional_matches_path_enumeration() {
        let mut cbn = build_fixture("F-POPCORN").unwrap();
        cbn.length = 3;
        let n = cbn.num_events();
        let eat = cbn.event_index("eat:nsubj").unwrap();
        let mut joint = vec![vec![0.0; n]; 2]; // [t-1][e_{t+1}] with e_t = eat
        let mut mass = [0.0; 2];
        for s in &cbn.scenarios {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let p = s.prior * s.row(None)[a] * s.row(Some(a))[b] * s.row(Some(b))[c];
                        if a == eat {
                            joint[0][b] += p;
                            mass[0] += p;
                        }
                        if b == eat {
                            joint[1][c] += p;
                            mass[1] += p;
                        }
                    }
                }
            }
        }
        for t in 1..=2 {
            let c = exact_conditional(&cbn, eat, t).unwrap();
            for e in 0..n {
                assert!((c[e] - joint[t - 1][e] / mass[t - 1]).abs() < 1e-12);
            }
        }
        let pooled = pooled_conditional(&cbn, eat).unwrap();
        for e in 0..n {
            let want = (joint[0][e] + joint[1][e]) / (mass[0] + mass[1]);
            assert!((pooled[e] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn popcorn_is_confounded_at_every_later_position() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let eat = cbn.role(|r| &r.confounded_sibling).unwrap();
        let cry = cbn.role(|r| &r.effect).unwrap();
        let d = exact_do_distribution(&cbn, eat).unwrap();
        // Smoothed shared eat row: watch .4625, cry .1925, sit .2825, others .0125,
        // then scenario weights and renormalization.
        let cinema = 8.0 * 0.1925 / (0.4625 + 8.0 * 0.1925 + 0.2825 + (1.0 + 6.0 + 1.0 + 1.0 + 1.0) * 0.0125);
        let errand = 0.2 * 0.1925 / (2.0 * 0.4625 + 0.2 * 0.1925 + 0.2825 + (1.0 + 0.5 + 2.0 + 2.0 + 1.0) * 0.0125);
        let by_hand = 0.5 * cinema + 0.5 * errand;
        assert!((d[cry] - by_hand).abs() < 1e-12);
        for t in 2..=cbn.length {
            let c = exact_conditional(&cbn, eat, t).unwrap();
            assert!(c[cry] > d[cry], "position {t}");
        }
        assert!(pooled_conditional(&cbn, eat).unwrap()[cry] > d[cry]);
    }

    #[test]
    fn oracle_rows_are_distributions() {
        for name in ["F-POPCORN", "F-DET", "F-UNIFORM"] {
            let cbn = build_fixture(name).unwrap();
            let o = OracleDistributions::compute(&cbn).unwrap();
            for row in o.interventional.iter().chain(o.observational.iter().flatten()).chain(&o.pooled) {
                assert!((sum(row) - 1.0).abs() < 1e-12);
            }
            assert!((sum(&position_marginal(&cbn)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_arguments() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        assert!(exact_do_distribution(&cbn, 8).is_err());
        assert!(exact_conditional(&cbn, 0, 0).is_err());
        assert!(exact_conditional(&cbn, 0, 7).is_err());
    }
}
