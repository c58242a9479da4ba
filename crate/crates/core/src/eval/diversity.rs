//! How varied a system's outputs are over a sequence of tasks.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityStats {
    pub system: String,
    pub total: usize,
    pub distinct: usize,
    /// Share of emissions that had not been emitted earlier in the sequence.
    pub pct_new: f64,
    /// Up to two most emitted outputs with their usage share; ties go to
    /// the lexicographically smaller output.
    pub top: Vec<(String, f64)>,
}

pub fn diversity_stats(system: &str, emissions: &[String]) -> Result<DiversityStats> {
    if emissions.is_empty() {
        return Err(Error::invalid(format!("{system}: no emissions")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut firsts = 0;
    for e in emissions {
        let c = counts.entry(e).or_insert(0);
        firsts += (*c == 0) as usize;
        *c += 1;
    }
    let total = emissions.len();
    let mut by_use: Vec<(&str, usize)> = counts.iter().map(|(k, &c)| (*k, c)).collect();
    by_use.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(DiversityStats {
        system: system.to_string(),
        total,
        distinct: counts.len(),
        pct_new: 100.0 * firsts as f64 / total as f64,
        top: by_use
            .into_iter()
            .take(2)
            .map(|(k, c)| (k.to_string(), 100.0 * c as f64 / total as f64))
            .collect(),
    })
}

pub fn diversity_report(emissions: &[(String, Vec<String>)]) -> Result<Vec<DiversityStats>> {
    emissions.iter().map(|(s, e)| diversity_stats(s, e)).collect()
}

pub fn write_diversity_tsv<W: Write>(stats: &[DiversityStats], mut w: W) -> std::io::Result<()> {
    writeln!(w, "system\ttotal\tdistinct\tpct_new\ttop1\ttop1_pct\ttop2\ttop2_pct")?;
    for s in stats {
        write!(w, "{}\t{}\t{}\t{:.2}", s.system, s.total, s.distinct, s.pct_new)?;
        for i in 0..2 {
            match s.top.get(i) {
                Some((k, p)) => write!(w, "\t{k}\t{p:.2}")?,
                None => write!(w, "\tNA\tNA")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn percent_new() {
        assert_eq!(diversity_stats("x", &s(&["a", "b", "a", "c"])).unwrap().pct_new, 75.0);
        assert_eq!(diversity_stats("x", &s(&["a"; 4])).unwrap().pct_new, 25.0);
        assert_eq!(diversity_stats("x", &s(&["a", "b", "c"])).unwrap().pct_new, 100.0);
        assert!(diversity_stats("x", &[]).is_err());
    }

    #[test]
    fn top_usage() {
        let d = diversity_stats("x", &s(&["b", "a", "b", "c", "a", "b"])).unwrap();
        assert_eq!(d.distinct, 3);
        assert_eq!(d.top, vec![("b".to_string(), 50.0), ("a".to_string(), 100.0 / 3.0)]);
        let mut out = Vec::new();
        write_diversity_tsv(&[d], &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("x\t6\t3\t50.00\tb\t50.00\ta\t33.33"));
    }
}
