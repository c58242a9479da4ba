//! Causal script learning: a conditional next-event model, plug-in
//! interventional estimates over it, and the scores derived from them.

pub mod intervene;
pub mod model;
pub mod score;

pub use intervene::{estimate_interventions, model_id, AdjustmentSet, InterventionTable};
pub use model::{
    conditional_distribution, extract_training_instances, finetune_defaults, finetune_with_oot, split_for_finetuning,
    train_conditional, ConditionalConfig, ConditionalContext, ConditionalModel, TrainingInstance,
    DEFAULT_OOT_THRESHOLD, HISTORY_WINDOW,
};
pub use score::{
    complete_chain, normalized_effect, rank_candidates, script_score, top_predecessors, PairScorer, ScriptScorer,
};
