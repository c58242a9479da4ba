//! Comparison systems: ordered skip-bigram PMI and a recurrent event LM.

pub mod lm;
pub mod pmi;

pub use lm::{
    frame, lm_chain_score, lm_log_distribution, lm_next_distribution, lm_perplexity, train_event_lm,
    train_on_sequences, EventLm, LmConfig, LmPairScorer,
};
pub use pmi::{count_sequences, count_skip_bigrams, ordered_pmi, OrderedCounts, PmiScorer, SkipBigramConfig};
