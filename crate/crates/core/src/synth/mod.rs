//! Synthetic scenario-confounded corpora with exact oracles.

mod cbn;
pub mod oracle;

pub use cbn::{build_fixture, fixture_source, zipf_cbn, Roles, Scenario, SyntheticCbn, ZipfParams, FIXTURE_NAMES};
pub use oracle::{
    exact_conditional, exact_do_distribution, forward_marginals, pooled_conditional, position_marginal,
    OracleDistributions,
};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{ChainCorpus, ChainEvent, EventChain, OotCandidate, MAX_RATING};
use crate::error::{Error, Result};

/// Draws `n` chains. Chain `i` uses its own ChaCha stream of `seed`, so the
/// corpus does not depend on the thread count. With `annotate_scenario`
/// every event carries one out-of-text candidate `<scenario>:scenario`
/// rated 4.
pub fn sample_chains(cbn: &SyntheticCbn, n: usize, seed: u64, annotate_scenario: bool) -> Result<ChainCorpus> {
    if n == 0 {
        return Err(Error::invalid("sample at least one chain"));
    }
    let prior = WeightedIndex::new(cbn.scenarios.iter().map(|s| s.prior))
        .map_err(|e| Error::invalid(format!("scenario prior: {e}")))?;
    let rows: Vec<Vec<WeightedIndex<f64>>> = cbn
        .scenarios
        .iter()
        .map(|s| {
            std::iter::once(None)
                .chain((0..cbn.num_events()).map(Some))
                .map(|prev| WeightedIndex::new(s.row(prev)).expect("rows are positive distributions"))
                .collect()
        })
        .collect();
    let width = n.to_string().len().max(6);
    let chains = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let z = prior.sample(&mut rng);
            let oot = annotate_scenario.then(|| {
                vec![OotCandidate {
                    key: cbn.scenario_key(z),
                    rating: MAX_RATING,
                }]
            });
            let mut prev = 0;
            let events = (0..cbn.length)
                .map(|_| {
                    let e = rows[z][prev].sample(&mut rng);
                    prev = e + 1;
                    ChainEvent {
                        event: cbn.events()[e].clone(),
                        text: None,
                        oot: oot.clone(),
                    }
                })
                .collect();
            EventChain {
                chain_id: format!("{}-{i:0width$}", cbn.name),
                events,
            }
        })
        .collect();
    ChainCorpus::new(chains, format!("synth {} n={n} seed={seed}", cbn.name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let a = sample_chains(&cbn, 50, 7, true).unwrap();
        let b = sample_chains(&cbn, 50, 7, true).unwrap();
        let c = sample_chains(&cbn, 50, 8, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.chains.iter().all(|ch| ch.events.len() == cbn.length));
    }

    #[test]
    fn annotation_adds_one_candidate_per_event() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let on = sample_chains(&cbn, 20, 1, true).unwrap();
        for ev in on.chains.iter().flat_map(|c| &c.events) {
            let oot = ev.oot_candidates();
            assert_eq!(oot.len(), 1);
            assert_eq!(oot[0].rating, 4);
            assert!(oot[0].key.ends_with(":scenario"));
        }
        let off = sample_chains(&cbn, 20, 1, false).unwrap();
        assert!(off.chains.iter().flat_map(|c| &c.events).all(|e| e.oot.is_none()));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_chains(&cbn, 300, 3, true).unwrap());
        let b = four.install(|| sample_chains(&cbn, 300, 3, true).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn unigrams_match_position_marginal() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let corpus = sample_chains(&cbn, 50_000, 11, false).unwrap();
        let mut counts = vec![0.0; cbn.num_events()];
        let mut total = 0.0;
        for ev in corpus.chains.iter().flat_map(|c| &c.events) {
            counts[cbn.event_index(&ev.event.key()).unwrap()] += 1.0;
            total += 1.0;
        }
        let want = position_marginal(&cbn);
        let l1: f64 = counts.iter().zip(&want).map(|(c, w)| (c / total - w).abs()).sum();
        assert!(l1 <= 0.02, "L1 {l1}");
    }
}
