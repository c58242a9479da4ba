//! Infrequent narrative cloze: hold out the next event of a chain prefix and
//! check whether a system lists it among its top N guesses, optionally
//! skipping instances whose answer is a very frequent event.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ranker::CandidateRanker;
use crate::corpus::ChainCorpus;
use crate::error::{Error, Result};
use crate::event::{EventId, FrequencyRank, Vocabulary};

pub const DEFAULT_CUTOFFS: [usize; 7] = [0, 50, 100, 125, 150, 200, 500];
pub const DEFAULT_RECALL_N: usize = 100;
pub const DEFAULT_CLOZE_COUNT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeInstance {
    pub context: Vec<EventId>,
    pub answer: EventId,
    pub chain_id: String,
}

/// A seeded uniform sample of `(chain, split point)` pairs. The answer is
/// the event at the split point and the context is everything before it.
/// Split points whose answer is out of vocabulary are not eligible.
pub fn make_cloze_set(corpus: &ChainCorpus, vocab: &Vocabulary, count: usize, seed: u64) -> Result<Vec<ClozeInstance>> {
    let ids: Vec<Vec<EventId>> = corpus.to_id_sequences(vocab);
    let mut eligible: Vec<(usize, usize)> = Vec::new();
    for (c, chain) in ids.iter().enumerate() {
        for s in 1..chain.len() {
            if !chain[s].is_special() {
                eligible.push((c, s));
            }
        }
    }
    if count == 0 || count > eligible.len() {
        return Err(Error::invalid(format!(
            "asked for {count} cloze instances but only {} split points are eligible",
            eligible.len()
        )));
    }
    let mut picked = sample(&mut ChaCha8Rng::seed_from_u64(seed), eligible.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let (c, s) = eligible[i];
            ClozeInstance {
                context: ids[c][..s].to_vec(),
                answer: ids[c][s],
                chain_id: corpus.chains[c].chain_id.clone(),
            }
        })
        .collect())
}

/// Drops instances whose answer ranks within the `cutoff` most frequent
/// events. Cutoff 0 keeps everything.
pub fn filter_by_cutoff(instances: &[ClozeInstance], rank: &FrequencyRank, cutoff: usize) -> Vec<ClozeInstance> {
    instances.iter().filter(|i| !rank.in_top(i.answer, cutoff)).cloned().collect()
}

fn hit_flags(ranker: &dyn CandidateRanker, instances: &[ClozeInstance], n: usize) -> Result<Vec<bool>> {
    instances
        .par_iter()
        .map(|inst| Ok(ranker.top_n(&inst.context, 0, n)?.contains(&inst.answer)))
        .collect()
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of instances whose answer is in the system's top `n`.
pub fn recall_at_n(ranker: &dyn CandidateRanker, instances: &[ClozeInstance], n: usize) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::invalid("recall is undefined on an empty instance set"));
    }
    let hits = hit_flags(ranker, instances, n)?.into_iter().filter(|&h| h).count();
    Ok(percent(hits, instances.len()))
}

/// Recall per cutoff and system; `None` where a cutoff leaves no instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClozeReport {
    pub n: usize,
    pub cutoffs: Vec<usize>,
    pub counts: Vec<usize>,
    pub systems: Vec<(String, Vec<Option<f64>>)>,
}

impl ClozeReport {
    pub fn recall(&self, system: &str, cutoff: usize) -> Option<f64> {
        let col = self.cutoffs.iter().position(|&c| c == cutoff)?;
        self.systems.iter().find(|(name, _)| name == system)?.1[col]
    }

    /// Header row of cutoffs, an instance-count row, then one row per
    /// system with recall to two decimals or `NA`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "system")?;
        for c in &self.cutoffs {
            write!(w, "\t<{c}")?;
        }
        writeln!(w)?;
        write!(w, "instances")?;
        for n in &self.counts {
            write!(w, "\t{n}")?;
        }
        writeln!(w)?;
        for (name, row) in &self.systems {
            write!(w, "{name}")?;
            for r in row {
                match r {
                    Some(r) => write!(w, "\t{r:.2}")?,
                    None => write!(w, "\tNA")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Recall@`n` of every system at every cutoff. Each system ranks each
/// instance once; cutoffs only change which instances are counted.
pub fn run_infrequent_cloze(
    systems: &[(&str, &dyn CandidateRanker)],
    instances: &[ClozeInstance],
    rank: &FrequencyRank,
    cutoffs: &[usize],
    n: usize,
) -> Result<ClozeReport> {
    if instances.is_empty() {
        return Err(Error::invalid("no cloze instances"));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    let keep: Vec<Vec<bool>> = cutoffs
        .iter()
        .map(|&c| instances.iter().map(|i| !rank.in_top(i.answer, c)).collect())
        .collect();
    let counts = keep.iter().map(|k| k.iter().filter(|&&x| x).count()).collect();
    let mut rows = Vec::with_capacity(systems.len());
    for (name, ranker) in systems {
        let hits = hit_flags(*ranker, instances, n)?;
        let row = keep
            .iter()
            .map(|k| {
                let total = k.iter().filter(|&&x| x).count();
                let h = k.iter().zip(&hits).filter(|(&kept, &hit)| kept && hit).count();
                (total > 0).then(|| percent(h, total))
            })
            .collect();
        rows.push((name.to_string(), row));
    }
    Ok(ClozeReport {
        n,
        cutoffs,
        counts,
        systems: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab_from, ChainEvent, EventChain};
    use crate::event::{EventType, VocabularyBuilder};

    fn corpus(chains: &[&[&str]]) -> ChainCorpus {
        let chains = chains
            .iter()
            .enumerate()
            .map(|(i, keys)| EventChain {
                chain_id: format!("c{i}"),
                events: keys
                    .iter()
                    .map(|k| ChainEvent::new(EventType::from_key(&format!("{k}:nsubj")).unwrap()))
                    .collect(),
            })
            .collect();
        ChainCorpus::new(chains, "").unwrap()
    }

    /// Always proposes the same ordered list.
    struct Fixed(Vec<EventId>);
    impl CandidateRanker for Fixed {
        fn top_n(&self, _: &[EventId], _: usize, n: usize) -> Result<Vec<EventId>> {
            Ok(self.0.iter().copied().take(n).collect())
        }
    }

    fn inst(answer: u32) -> ClozeInstance {
        ClozeInstance {
            context: vec![EventId(3)],
            answer: EventId(answer),
            chain_id: String::new(),
        }
    }

    fn rank(counts: &[u64]) -> FrequencyRank {
        let mut b = VocabularyBuilder::new();
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                b.intern_key(&format!("e{i}:nsubj")).unwrap();
            }
        }
        b.finalize(1).unwrap().frequency_rank()
    }

    #[test]
    fn two_event_chain_has_one_instance() {
        let c = corpus(&[&["a", "b"]]);
        let v = build_vocab_from(&c, 1).unwrap();
        let set = make_cloze_set(&c, &v, 1, 0).unwrap();
        assert_eq!(set[0].context, vec![v.lookup("a:nsubj")]);
        assert_eq!(set[0].answer, v.lookup("b:nsubj"));
        assert!(make_cloze_set(&c, &v, 2, 0).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_sized() {
        let chains: Vec<Vec<&str>> = (0..500).map(|i| ["a", "b", "c", "d"][..2 + i % 3].to_vec()).collect();
        let refs: Vec<&[&str]> = chains.iter().map(|c| c.as_slice()).collect();
        let c = corpus(&refs);
        let v = build_vocab_from(&c, 1).unwrap();
        let a = make_cloze_set(&c, &v, 200, 4).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a, make_cloze_set(&c, &v, 200, 4).unwrap());
        assert_ne!(a, make_cloze_set(&c, &v, 200, 5).unwrap());
        for i in &a {
            assert!(!i.answer.is_special() && !i.context.is_empty());
        }
    }

    #[test]
    fn cutoff_semantics() {
        // ids 3, 4, 5 ranked 1, 2, 3.
        let r = rank(&[3, 2, 1]);
        let set: Vec<ClozeInstance> = [3, 4, 5, 5].iter().map(|&a| inst(a)).collect();
        assert_eq!(filter_by_cutoff(&set, &r, 0), set);
        assert_eq!(filter_by_cutoff(&set, &r, 2).len(), 2);
        assert!(filter_by_cutoff(&set, &r, 3).is_empty());
        let c1 = filter_by_cutoff(&set, &r, 1);
        assert_eq!(filter_by_cutoff(&c1, &r, 2), filter_by_cutoff(&set, &r, 2));
    }

    #[test]
    fn recall_arithmetic() {
        let set: Vec<ClozeInstance> = [3, 4, 5, 6].iter().map(|&a| inst(a)).collect();
        assert_eq!(recall_at_n(&Fixed(vec![EventId(3), EventId(5)]), &set, 2).unwrap(), 50.0);
        let all: Vec<EventId> = (3..7).map(EventId).collect();
        assert_eq!(recall_at_n(&Fixed(all), &set, 4).unwrap(), 100.0);
        assert_eq!(recall_at_n(&Fixed(vec![EventId(9)]), &set, 1).unwrap(), 0.0);
        assert!(recall_at_n(&Fixed(vec![]), &[], 1).is_err());
    }

    #[test]
    fn report_rows_and_na() {
        let r = rank(&[3, 2, 1, 1]);
        let set: Vec<ClozeInstance> = [3, 3, 4, 6].iter().map(|&a| inst(a)).collect();
        let sys = Fixed(vec![EventId(3), EventId(6)]);
        let rep = run_infrequent_cloze(&[("fixed", &sys)], &set, &r, &DEFAULT_CUTOFFS, 100).unwrap();
        assert_eq!(rep.cutoffs, DEFAULT_CUTOFFS.to_vec());
        assert_eq!(rep.counts, vec![4, 0, 0, 0, 0, 0, 0]);
        assert_eq!(rep.recall("fixed", 0), Some(75.0));
        assert_eq!(rep.recall("fixed", 50), None);
        let mut out = Vec::new();
        rep.write_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("system\t<0\t<50\t<100\t<125\t<150\t<200\t<500\ninstances\t4\t0"));
        assert!(text.contains("fixed\t75.00\tNA"));
        let rep2 = run_infrequent_cloze(&[("fixed", &sys)], &set, &r, &[0, 1, 2, 3], 100).unwrap();
        assert!(rep2.counts.windows(2).all(|w| w[0] >= w[1]));
    }
}
