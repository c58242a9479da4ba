//! Causal script compatibility and the ranking operations built on it.

use super::intervene::InterventionTable;
use crate::error::{Error, Result};
use crate::event::{EventId, FrequencyRank};

/// A directed compatibility score for `prev` followed by `next`.
pub trait PairScorer: Sync {
    fn score(&self, prev: EventId, next: EventId) -> f64;
}

/// `effect[k][l] / Σ_j effect[j][l]` over every row of a square matrix;
/// 0 for a column without mass.
pub fn normalized_effect(effect: &[Vec<f64>], k: usize, l: usize) -> Result<f64> {
    if k >= effect.len() || effect.iter().any(|r| l >= r.len()) {
        return Err(Error::invalid(format!("index ({k}, {l}) outside the effect matrix")));
    }
    let column: f64 = effect.iter().map(|r| r[l]).sum();
    Ok(ratio(effect[k][l], column))
}

fn ratio(x: f64, column: f64) -> f64 {
    if column > 0.0 {
        x / column
    } else {
        0.0
    }
}

/// `S(k, l) = p(l | do(k)) / Σ_j p(l | do(j))`, with `j` ranging over
/// non-special events, and 0 when that column has no mass. Its scale is
/// comparable across `k` for a fixed `l`.
pub fn script_score(table: &InterventionTable, k: EventId, l: EventId) -> Result<f64> {
    let size = table.size();
    for id in [k, l] {
        if id.is_special() || id.index() >= size {
            return Err(Error::invalid(format!("{id} is not a scoreable event")));
        }
    }
    let column: f64 = (EventId::FIRST.index()..size).map(|j| table.get(EventId(j as u32), l)).sum();
    Ok(ratio(table.get(k, l), column))
}

/// Precomputed `S(k, l)` for every event pair of a table; specials score
/// `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptScorer {
    size: usize,
    scores: Vec<f64>,
}

impl ScriptScorer {
    pub fn new(table: &InterventionTable) -> Self {
        let size = table.size();
        let first = EventId::FIRST.index().min(size);
        let mut column = vec![0.0; size];
        for j in first..size {
            for (c, p) in column.iter_mut().zip(table.row(EventId(j as u32))) {
                *c += p;
            }
        }
        let mut scores = vec![f64::NEG_INFINITY; size * size];
        for k in first..size {
            let row = table.row(EventId(k as u32));
            for l in first..size {
                scores[k * size + l] = ratio(row[l], column[l]);
            }
        }
        ScriptScorer { size, scores }
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

impl PairScorer for ScriptScorer {
    fn score(&self, prev: EventId, next: EventId) -> f64 {
        if prev.index() >= self.size || next.index() >= self.size {
            return f64::NEG_INFINITY;
        }
        self.scores[prev.index() * self.size + next.index()]
    }
}

/// Candidates for ranking: non-special ids below `vocab_len` outside the
/// `exclude_top` most frequent events.
fn candidates(vocab_len: usize, exclude_top: usize, rank: &FrequencyRank) -> impl Iterator<Item = EventId> + '_ {
    (EventId::FIRST.0..vocab_len as u32)
        .map(EventId)
        .filter(move |&id| exclude_top == 0 || !rank.in_top(id, exclude_top))
}

/// Sorts by score descending, ties by ascending id, and keeps `n`.
fn top_n(mut scored: Vec<(EventId, f64)>, n: usize) -> Vec<EventId> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(n).map(|(id, _)| id).collect()
}

/// The `n` best next events for a context, scored by the mean of
/// `score(c, candidate)` over context events `c`.
pub fn rank_candidates(
    scorer: &dyn PairScorer,
    context: &[EventId],
    vocab_len: usize,
    exclude_top: usize,
    rank: &FrequencyRank,
    n: usize,
) -> Result<Vec<EventId>> {
    if context.is_empty() {
        return Err(Error::invalid("empty context"));
    }
    let scored = candidates(vocab_len, exclude_top, rank)
        .map(|cand| {
            let s = context.iter().map(|&c| scorer.score(c, cand)).sum::<f64>() / context.len() as f64;
            (cand, if s.is_nan() { f64::NEG_INFINITY } else { s })
        })
        .collect();
    Ok(top_n(scored, n))
}

/// The single most compatible next event, or `None` when no candidate
/// remains after exclusion.
pub fn complete_chain(
    scorer: &dyn PairScorer,
    context: &[EventId],
    vocab_len: usize,
    exclude_top: usize,
    rank: &FrequencyRank,
) -> Result<Option<EventId>> {
    Ok(rank_candidates(scorer, context, vocab_len, exclude_top, rank, 1)?.into_iter().next())
}

/// The `n` events `k` with the highest `score(k, target)`.
pub fn top_predecessors(
    scorer: &dyn PairScorer,
    target: EventId,
    vocab_len: usize,
    exclude_top: usize,
    rank: &FrequencyRank,
    n: usize,
) -> Vec<EventId> {
    let scored = candidates(vocab_len, exclude_top, rank)
        .map(|k| (k, scorer.score(k, target)))
        .collect();
    top_n(scored, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::VocabularyBuilder;

    fn table(rows: Vec<Vec<f64>>) -> InterventionTable {
        InterventionTable::from_rows(rows, 1, 0, "t").unwrap()
    }

    /// Three specials followed by the given event rows; specials put all
    /// their mass on the first event.
    fn padded(events: &[Vec<f64>]) -> InterventionTable {
        let n = events.len() + 3;
        let mut rows = Vec::new();
        for _ in 0..3 {
            let mut r = vec![0.0; n];
            r[3] = 1.0;
            rows.push(r);
        }
        for e in events {
            let mut r = vec![0.0; 3];
            r.extend(e);
            rows.push(r);
        }
        table(rows)
    }

    fn rank_of(counts: &[u64]) -> FrequencyRank {
        let mut b = VocabularyBuilder::new();
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                b.intern_key(&format!("e{i}:nsubj")).unwrap();
            }
        }
        b.finalize(1).unwrap().frequency_rank()
    }

    #[test]
    fn two_by_two_normalization() {
        let m = vec![vec![0.7, 0.3], vec![0.5, 0.5]];
        assert!((normalized_effect(&m, 0, 0).unwrap() - 0.7 / 1.2).abs() < 1e-15);
        assert!((normalized_effect(&m, 1, 1).unwrap() - 0.5 / 0.8).abs() < 1e-15);
        let t = padded(&m);
        let (a, b) = (EventId(3), EventId(4));
        assert!((script_score(&t, a, a).unwrap() - 0.7 / 1.2).abs() < 1e-15);
        assert!((script_score(&t, b, a).unwrap() - 0.5 / 1.2).abs() < 1e-15);
        let s = ScriptScorer::new(&t);
        assert_eq!(s.score(a, a), script_score(&t, a, a).unwrap());
        assert_eq!(s.score(EventId::START, a), f64::NEG_INFINITY);
        assert!(script_score(&t, EventId::UNK, a).is_err());
    }

    #[test]
    fn columns_sum_to_one_over_events() {
        let t = padded(&[vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3], vec![0.1, 0.1, 0.8]]);
        let s = ScriptScorer::new(&t);
        for l in 3..6 {
            let col: f64 = (3..6).map(|k| s.score(EventId(k), EventId(l))).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_scores_zero() {
        let t = padded(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(script_score(&t, EventId(3), EventId(4)).unwrap(), 0.0);
        assert_eq!(ScriptScorer::new(&t).score(EventId(3), EventId(4)), 0.0);
        assert_eq!(normalized_effect(&[vec![1.0, 0.0], vec![1.0, 0.0]], 0, 1).unwrap(), 0.0);
        assert!(normalized_effect(&[vec![1.0, 0.0], vec![1.0, 0.0]], 2, 0).is_err());
    }

    #[test]
    fn column_scale_invariance() {
        let m = vec![vec![0.2, 0.8, 0.1], vec![0.5, 0.5, 0.3], vec![0.3, 0.1, 0.6]];
        let mut scaled = m.clone();
        for r in &mut scaled {
            r[1] *= 7.5;
        }
        for k in 0..3 {
            let (a, b) = (normalized_effect(&m, k, 1).unwrap(), normalized_effect(&scaled, k, 1).unwrap());
            assert!((a - b).abs() < 1e-15);
        }
    }

    struct Table(Vec<Vec<f64>>);
    impl PairScorer for Table {
        fn score(&self, prev: EventId, next: EventId) -> f64 {
            self.0[prev.index()][next.index()]
        }
    }

    #[test]
    fn ranking_excludes_frequent_events_and_breaks_ties_by_id() {
        // e0 (id 3) is most frequent, then e1 (4), then e2 (5) and e3 (6).
        let rank = rank_of(&[5, 4, 1, 1]);
        let mut rows = vec![vec![0.0; 7]; 3];
        rows.extend(std::iter::repeat_n(vec![0.0, 0.0, 0.0, 9.0, 1.0, 2.0, 2.0], 4));
        let s = Table(rows);
        let ctx = [EventId(3)];
        assert_eq!(rank_candidates(&s, &ctx, 7, 0, &rank, 4).unwrap(), vec![EventId(3), EventId(5), EventId(6), EventId(4)]);
        assert_eq!(complete_chain(&s, &ctx, 7, 1, &rank).unwrap(), Some(EventId(5)));
        assert_eq!(complete_chain(&s, &ctx, 7, 4, &rank).unwrap(), None);
        assert!(rank_candidates(&s, &[], 7, 0, &rank, 1).is_err());
    }

    #[test]
    fn predecessors_rank_by_column() {
        let rank = rank_of(&[1, 1, 1]);
        let mut rows = vec![vec![0.0; 6]; 6];
        rows[3][5] = 0.1;
        rows[4][5] = 0.7;
        rows[5][5] = 0.2;
        let s = Table(rows);
        assert_eq!(top_predecessors(&s, EventId(5), 6, 0, &rank, 2), vec![EventId(4), EventId(5)]);
    }
}
