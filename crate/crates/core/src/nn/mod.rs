//! Numerical substrate: dense matrices, activations, seeded initializers,
//! the parameter store with Adam, losses and the finite-difference oracle.

mod checkpoint;
mod gradcheck;
pub mod init;
mod loss;
mod matrix;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_gradient, max_relative_error, GradientCheck};
pub use init::{init_he, init_orthogonal, init_xavier, seeded_rng, SeededRng};
pub use loss::{mae_loss, mse_loss, LossKind};
pub use matrix::{
    axpy, dot, matvec_acc, matvec_block_acc, matvec_t_acc, outer_acc, outer_block_acc, sigmoid,
    softmax, Activation, Matrix,
};
pub use params::{adam_step, AdamConfig, Gradients, ParamId, ParamStore, Slot};
