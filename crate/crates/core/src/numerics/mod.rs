//! Minimal 64-bit reverse-mode autodiff with the layers the map encoder and
//! policy heads need, an Adam/AdamW optimizer, and a finite-difference checker.

mod checkpoint;
mod gemm;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod suite;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{central_difference, check_graph_gradients, grad_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{log_softmax, sigmoid, softmax, BnMode, Gradients, Graph, Var};
pub use layers::{batchnorm_layer, BnPass};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{ParamBlock, ParamGrads, ParamId, ParamStore, RunningStats};
pub use suite::primitive_gradient_suite;
pub use tensor::Tensor;

pub(crate) use params::hex;

/// Batch-norm running-stat momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}
