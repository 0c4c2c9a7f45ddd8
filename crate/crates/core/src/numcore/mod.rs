//! Reverse-mode automatic differentiation over dense `f64` tensors, ADAM and
//! a central-difference gradient checker.

mod adam;
mod gradcheck;
mod lstm;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheckReport};
pub use lstm::{lstm_cell, LstmVars};
pub use params::{init_uniform, ParamSet};
pub(crate) use tape::gemm;
pub use tape::{log_softmax, sigmoid, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index {index} out of range for size {bound}")]
    Index { index: usize, bound: usize },
    #[error("window of width {window} exceeds feature map of width {len}")]
    WindowTooWide { window: usize, len: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid tape state: {0}")]
    State(String),
}
