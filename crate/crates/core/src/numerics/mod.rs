//! Dense arrays, reverse-mode differentiation, optimisation and gradient
//! verification.

mod array;
pub mod gradcheck;
pub mod nn;
mod optim;
mod param;
mod tape;

pub use array::DenseArray;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Grads, Tape, Var};
pub(crate) use tape::sigmoid;
