//! Next-term course combination success prediction.
//!
//! Grade transcripts are bucketed into four categories, encoded as one
//! multi-label vector per term and fed chronologically to a bidirectional
//! LSTM. A second branch embeds the candidate course combination; the model
//! outputs the probability of passing every course in that combination.
//!
//! - [`transcript`]: CSV parsing, grade buckets, course catalog
//! - [`encoder`]: term vectors, per-student examples, train/validation split
//! - [`nnet`]: LSTM, model, gradients, checkpoints
//! - [`trainer`]: Adam, clipping, early stopping on validation AUC
//! - [`synthdata`]: synthetic corpora with a known success probability
//! - [`metrics`]: exact AUC, GPA bands, difficulty tiers, the GPA x difficulty grid
//! - [`planner`]: ranking candidate combinations and the HTTP service
//! - [`pipeline`]: transcript to checkpoint to evaluation, as the CLI runs it

pub mod encoder;
pub mod error;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod planner;
pub mod synthdata;
pub mod trainer;
pub mod transcript;

pub use error::{Error, Result};
