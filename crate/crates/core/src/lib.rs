//! Script knowledge induction from narrative event chains.
//!
//! The crate estimates how much forcing one event changes the distribution of
//! the next one, `p(e_i | do(e_{i-1} = k))`, by plugging a learned conditional
//! model into the back-door adjustment formula. Ordered skip-bigram PMI and a
//! recurrent event language model are provided as comparison systems, and a
//! synthetic scenario-confounded generator supplies exact ground truth.
//!
//! Module map:
//!
//! - [`event`]: event types, vocabulary interning, frequency ranks
//! - [`corpus`]: chain files, factuality filtering, splits
//! - [`neural`]: tensors, GRU, text encoders, Adam, gradient checking
//! - [`baseline`]: ordered PMI and the event language model
//! - [`causal`]: conditional model, intervention tables, script scores
//! - [`synth`]: synthetic causal generator and exact oracles
//! - [`eval`]: narrative cloze, annotation sheets, diversity statistics

// Negated comparisons such as `!(x > 0.0)` reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod causal;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod event;
pub mod neural;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use event::{EventId, EventType, Factuality, FrequencyRank, Vocabulary, VocabularyBuilder};
