//! A common "top-N next events" interface over the LM and pairwise scorers.

use crate::baseline::{lm_log_distribution, EventLm};
use crate::causal::{rank_candidates, PairScorer};
use crate::error::Result;
use crate::event::{EventId, FrequencyRank};

pub trait CandidateRanker: Sync {
    /// The `n` best next events after `context`, skipping the `exclude_top`
    /// most frequent events. Specials are never returned.
    fn top_n(&self, context: &[EventId], exclude_top: usize, n: usize) -> Result<Vec<EventId>>;
}

/// Ranks by `log p(candidate | START, context)`.
pub struct LmRanker<'a> {
    pub lm: &'a EventLm,
    pub rank: &'a FrequencyRank,
}

impl CandidateRanker for LmRanker<'_> {
    fn top_n(&self, context: &[EventId], exclude_top: usize, n: usize) -> Result<Vec<EventId>> {
        let logp = lm_log_distribution(self.lm, context)?;
        let mut scored: Vec<(EventId, f64)> = (EventId::FIRST.index()..logp.len())
            .map(|i| EventId(i as u32))
            .filter(|&id| exclude_top == 0 || !self.rank.in_top(id, exclude_top))
            .map(|id| (id, logp[id.index()]))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(n).map(|(id, _)| id).collect())
    }
}

/// Ranks by the mean pairwise score against every context event.
pub struct PairRanker<'a> {
    pub scorer: &'a dyn PairScorer,
    pub vocab_len: usize,
    pub rank: &'a FrequencyRank,
}

impl CandidateRanker for PairRanker<'_> {
    fn top_n(&self, context: &[EventId], exclude_top: usize, n: usize) -> Result<Vec<EventId>> {
        rank_candidates(self.scorer, context, self.vocab_len, exclude_top, self.rank, n)
    }
}

/// One completion per context; `None` when every candidate was excluded.
pub fn run_completions(
    ranker: &dyn CandidateRanker,
    contexts: &[Vec<EventId>],
    exclude_top: usize,
) -> Result<Vec<Option<EventId>>> {
    use rayon::prelude::*;
    contexts
        .par_iter()
        .map(|c| Ok(ranker.top_n(c, exclude_top, 1)?.into_iter().next()))
        .collect()
}
