//! Dense matrix autodiff: tensors, a recorded tape, parameters and Adam.

mod checkpoint;
mod fastmath;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{entries, load_into, read_checkpoint, write_checkpoint, CheckpointEntry, FORMAT_VERSION};
pub use fastmath::tanh;
pub use graph::{Graph, Var};
pub use params::{Adam, Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;

fn fmt_shape(s: &(usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {} and {}", fmt_shape(.left), fmt_shape(.right))]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor data of length {len} does not fit {rows}x{cols}")]
    BadData { rows: usize, cols: usize, len: usize },
    #[error("mask length {found} does not match {expected}")]
    MaskLength { expected: usize, found: usize },
    #[error("softmax row {row} has every entry masked")]
    FullyMaskedRow { row: usize },
    #[error("action {action} in row {row} is outside 0..{choices}")]
    ActionOutOfRange { row: usize, action: usize, choices: usize },
    #[error("backward needs a 1x1 loss, got {}", fmt_shape(.shape))]
    NotScalar { shape: (usize, usize) },
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` has shape {}, got {}", fmt_shape(.expected), fmt_shape(.found))]
    ParameterShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl AutodiffError {
    fn io(e: std::io::Error) -> Self {
        Self::Checkpoint(e.to_string())
    }
}
