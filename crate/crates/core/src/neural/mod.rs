//! Differentiable building blocks with hand-derived gradients.

pub mod adam;
pub mod diff;
pub mod gradcheck;
pub mod gru;
pub mod loss;
pub mod model_file;
pub mod tensor;
pub mod text;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport, ParamSample};
pub use gru::{encode_sequence, gru_step, GruParams, GruStepCache};
pub use loss::{log_softmax, softmax, softmax_xent, xent_delta, xent_shift};
pub use model_file::ModelFile;
pub use tensor::{Parameters, Tensor};
pub use text::{encode_text, TextEncoder, TextMode};
