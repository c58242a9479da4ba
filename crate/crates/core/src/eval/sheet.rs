//! Pairwise judgement sheets: for each target event, every system proposes
//! its best predecessors; rows are shuffled so annotators cannot tell which
//! system produced which pair. Filled sheets are summarized per system.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::causal::{top_predecessors, PairScorer};
use crate::error::{Error, Result};
use crate::event::{EventId, FrequencyRank, Vocabulary};

pub const DEFAULT_TARGETS: usize = 150;
pub const DEFAULT_PER_SYSTEM: usize = 2;
pub const DEFAULT_EXCLUDE_TOP: usize = 20;
/// Candidate placeholder for a slot a system could not fill.
pub const SHORT: &str = "<short>";
const HEADER: &str = "task_id\ttarget_event\tcandidate_event\thidden_system_key\tscore";

/// Seeded sample of `count` non-special targets (all of them if fewer).
pub fn sample_targets(vocab: &Vocabulary, count: usize, seed: u64) -> Vec<EventId> {
    let ids: Vec<EventId> = vocab.event_ids().collect();
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), ids.len(), count.min(ids.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| ids[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetRow {
    pub task_id: usize,
    pub target: EventId,
    /// `None` marks a short slot.
    pub candidate: Option<EventId>,
    pub system: String,
}

/// One task per target with `per_system` rows from each system, shuffled by
/// a per-task stream of `seed`. Predecessors among the `exclude_top` most
/// frequent events, or with a non-finite score, are never proposed.
pub fn pairwise_sheet(
    systems: &[(&str, &dyn PairScorer)],
    targets: &[EventId],
    vocab_len: usize,
    per_system: usize,
    exclude_top: usize,
    rank: &FrequencyRank,
    seed: u64,
) -> Vec<SheetRow> {
    let mut out = Vec::new();
    for (task_id, &target) in targets.iter().enumerate() {
        let mut rows = Vec::new();
        for (name, scorer) in systems {
            let mut picks: Vec<Option<EventId>> =
                top_predecessors(*scorer, target, vocab_len, exclude_top, rank, vocab_len)
                    .into_iter()
                    .filter(|&k| scorer.score(k, target).is_finite())
                    .take(per_system)
                    .map(Some)
                    .collect();
            picks.resize(per_system, None);
            rows.extend(picks.into_iter().map(|candidate| SheetRow {
                task_id,
                target,
                candidate,
                system: name.to_string(),
            }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(task_id as u64);
        rows.shuffle(&mut rng);
        out.extend(rows);
    }
    out
}

pub fn write_sheet<W: Write>(rows: &[SheetRow], vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in rows {
        let cand = r.candidate.map_or(SHORT, |c| vocab.key_of(c));
        writeln!(w, "{}\t{}\t{}\t{}\t", r.task_id, vocab.key_of(r.target), cand, r.system)?;
    }
    Ok(())
}

/// One judged row of a filled sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct Judgement {
    pub task_id: usize,
    pub system: String,
    pub score: f64,
}

/// Reads a filled sheet. Short rows are skipped; every other row needs a
/// score in `[0, 100]`.
pub fn read_filled_sheet<R: BufRead>(r: R) -> Result<Vec<Judgement>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == HEADER => {}
        _ => return Err(Error::format_at(1, format!("expected header {HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| Error::format_at(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::format_at(n, format!("expected 5 columns, found {}", f.len())));
        }
        if f[2] == SHORT {
            continue;
        }
        let task_id = f[0]
            .parse()
            .map_err(|_| Error::format_at(n, format!("bad task id {:?}", f[0])))?;
        let score: f64 = f[4]
            .trim()
            .parse()
            .map_err(|_| Error::format_at(n, format!("missing or non-numeric score {:?}", f[4])))?;
        if !(0.0..=100.0).contains(&score) {
            return Err(Error::format_at(n, format!("score {score} outside 0..=100")));
        }
        out.push(Judgement {
            task_id,
            system: f[3].to_string(),
            score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSummary {
    pub system: String,
    pub judged: usize,
    pub mean_score: f64,
    /// Mean within-task rank, 1 = highest score, ties share the mean rank.
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub systems: Vec<SystemSummary>,
    /// Per task, each system's mean score (in `systems` order), for paired
    /// tests run elsewhere.
    pub paired: Vec<(usize, Vec<Option<f64>>)>,
}

pub fn summarize_scores(judgements: &[Judgement]) -> Result<ScoreSummary> {
    if judgements.is_empty() {
        return Err(Error::invalid("no judged rows"));
    }
    let mut tasks: BTreeMap<usize, Vec<&Judgement>> = BTreeMap::new();
    for j in judgements {
        tasks.entry(j.task_id).or_default().push(j);
    }
    let names: Vec<String> = {
        let mut n: Vec<String> = judgements.iter().map(|j| j.system.clone()).collect();
        n.sort();
        n.dedup();
        n
    };
    let idx = |s: &str| names.binary_search_by(|n| n.as_str().cmp(s)).unwrap();
    let mut score_sum = vec![0.0; names.len()];
    let mut rank_sum = vec![0.0; names.len()];
    let mut count = vec![0usize; names.len()];
    let mut paired = Vec::with_capacity(tasks.len());
    for (&task, rows) in &tasks {
        let mut per = vec![(0.0, 0usize); names.len()];
        for j in rows {
            // Rank among this task's rows; ties get the average position.
            let above = rows.iter().filter(|o| o.score > j.score).count() as f64;
            let equal = rows.iter().filter(|o| o.score == j.score).count() as f64;
            let s = idx(&j.system);
            score_sum[s] += j.score;
            rank_sum[s] += above + (equal + 1.0) / 2.0;
            count[s] += 1;
            per[s].0 += j.score;
            per[s].1 += 1;
        }
        paired.push((task, per.iter().map(|&(sum, n)| (n > 0).then(|| sum / n as f64)).collect()));
    }
    let systems = names
        .into_iter()
        .enumerate()
        .map(|(i, system)| SystemSummary {
            system,
            judged: count[i],
            mean_score: score_sum[i] / count[i] as f64,
            mean_rank: rank_sum[i] / count[i] as f64,
        })
        .collect();
    Ok(ScoreSummary { systems, paired })
}

impl ScoreSummary {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "system\tjudged\tavg_score\tavg_rank")?;
        for s in &self.systems {
            writeln!(w, "{}\t{}\t{:.2}\t{:.2}", s.system, s.judged, s.mean_score, s.mean_rank)?;
        }
        Ok(())
    }

    pub fn write_paired_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "task_id")?;
        for s in &self.systems {
            write!(w, "\t{}", s.system)?;
        }
        writeln!(w)?;
        for (task, row) in &self.paired {
            write!(w, "{task}")?;
            for v in row {
                match v {
                    Some(v) => write!(w, "\t{v}")?,
                    None => write!(w, "\tNA")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
