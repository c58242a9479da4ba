//! Evaluation protocols: infrequent narrative cloze, pairwise judgement
//! sheets with score summaries, chain completion and output diversity.

pub mod cloze;
pub mod diversity;
pub mod ranker;
pub mod sheet;

pub use cloze::{
    filter_by_cutoff, make_cloze_set, recall_at_n, run_infrequent_cloze, ClozeInstance, ClozeReport,
    DEFAULT_CLOZE_COUNT, DEFAULT_CUTOFFS, DEFAULT_RECALL_N,
};
pub use diversity::{diversity_report, diversity_stats, write_diversity_tsv, DiversityStats};
pub use ranker::{run_completions, CandidateRanker, LmRanker, PairRanker};
pub use sheet::{
    pairwise_sheet, read_filled_sheet, sample_targets, summarize_scores, write_sheet, Judgement, ScoreSummary,
    SheetRow, SystemSummary, DEFAULT_EXCLUDE_TOP, DEFAULT_PER_SYSTEM, DEFAULT_TARGETS,
};
