//! Dense matrices, a reverse-mode tape over them, and gradient checking.

pub mod gradcheck;
pub mod matrix;
pub mod param;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use matrix::{cross_entropy, scaled_dot_attention, softmax, softmax_rows, Matrix};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};
