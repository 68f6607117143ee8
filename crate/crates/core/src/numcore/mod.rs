//! Dense matrices, the gradient tape, RMSProp and weight clipping.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::{dot, squared_distance, Matrix};
pub use optim::{clip_in_place, clip_weights, rmsprop_step, RmsPropConfig, RmsPropState};
pub use tape::{logistic, softplus, Gradients, Tape, Var};
