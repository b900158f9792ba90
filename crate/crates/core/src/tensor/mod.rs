//! Dense matrices, a reverse-mode tape over the operators the diagnosis
//! models use, an Adam optimizer with non-negativity projection and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, FD_STEP, REL_FLOOR};
pub use matrix::{sigmoid, Matrix};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, Param, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape, BCE_EPS};

pub(crate) use tape::check_dropout_rate;
