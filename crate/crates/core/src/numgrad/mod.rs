//! Dense numeric backbone: tensors, parameter storage, reverse-mode
//! differentiation, layers, SGD, checkpoints and gradient checking.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, relative_error, GradCheckReport, ParamCheck, REL_FLOOR};
pub use layers::{affine, Activation, Affine, BatchNorm, Mode};
pub use params::{sgd_step, BufferId, ParamId, ParamStore, Sgd};
pub use real::Real;
pub use tape::{Gradients, NormStats, Tape, Var};
pub use tensor::Tensor;
