//! Dense numerical core: matrices, the LSTM cell, the two-branch model with
//! hand-derived backpropagation through time, and checkpoints. Everything is `f64`.

pub mod checkpoint;
pub mod lstm;
pub mod matrix;
pub mod model;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, sigmoid, CellCache, CellInput, Gate, LstmCellParams};
pub use matrix::Matrix;
pub use model::{
    backward, backward_into, bce_loss, bidi_forward, encode_history, head_forward, predict, Dense, Dims,
    ForwardTrace, HeadTrace, HistoryTrace, ModelParams, BCE_EPSILON,
};
