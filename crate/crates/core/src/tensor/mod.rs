//! Dense `f64` arrays and a define-by-run tape for reverse-mode gradients.
//!
//! All model math is expressed as tape operations on 2-D arrays whose first
//! axis is the batch. A fresh [`Tape`] is built for every forward pass;
//! parameters enter it as leaves via [`Tape::param`] and receive their
//! gradients from [`Tape::backward`].

mod array;
mod gradcheck;
mod param;
mod tape;

pub use array::NumArray;
pub use gradcheck::{finite_diff_check, relative_error, CheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use param::{ParamSet, Parameter};
pub use tape::{ElemKind, NodeId, Tape};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("{op}: empty axis")]
    EmptyAxis { op: &'static str },
    #[error("{op}: expected {expected} arguments, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("node is not on this tape")]
    UnknownNode,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("no parameter named `{0}`")]
    MissingParameter(String),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("forward is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
}

#[cfg(test)]
mod tests;
