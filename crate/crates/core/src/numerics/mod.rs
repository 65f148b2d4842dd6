//! Dense linear algebra, losses, divergences and optimization primitives.
//!
//! All arithmetic is `f64`; checkpoints narrow to `f32` on write.

mod gradcheck;
mod matrix;
mod ops;
mod optim;
pub mod probe;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{matmul, Matrix};
pub use ops::{
    cross_entropy_logits, gelu, gelu_grad, js_divergence, log_sigmoid, sigmoid, softmax_rows,
};
pub(crate) use ops::{
    cross_entropy_row_grad, js_grad_wrt_first, js_unchecked, softmax_backward,
    softmax_in_place,
};
pub use optim::{adamw_step, lr_at_step, AdamWConfig, AdamWState, LrSchedule};
