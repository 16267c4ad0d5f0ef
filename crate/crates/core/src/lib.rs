//! Opinion question answering over product reviews.
//!
//! Review sentences act as experts in a mixture model: a softmax over
//! relevance scores weighs each sentence, and each sentence votes through
//! a sigmoid. Yes/no questions are trained against noisy crowd labels
//! with EM; open-ended questions are trained to prefer true answers over
//! answers sampled from other questions.

pub mod artifact;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod moe;
pub mod similarity;
pub mod synth;
pub mod train;

pub use artifact::ModelArtifact;
pub use error::{Error, Result};
