//! f64 numerics: tensors, a reverse-mode tape, initializers, the optimizer,
//! and the finite-difference gradient checker that anchors the test suite.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use ops::{ffn, gru_cell, linear, sinusoidal_matrix, sinusoidal_position, softmax, GruNodes};
pub use optim::noam_lr;
pub use param::{
    register_embed, register_glorot, register_glorot_vector, register_identity, register_vector,
    Ctx, ParamId, ParamStore, Parameter,
};
pub use tape::{log_softmax_row, NodeId, Tape};
pub use tensor::Tensor;
