//! Dense matrices, a reverse-mode tape, seeded parameters, and Adam.

mod adam;
mod gradcheck;
mod layers;
mod matrix;
pub(crate) mod params;
mod tape;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use layers::Mlp;
pub use matrix::{affine_forward, Matrix};
pub use params::{splitmix64, stream_rng, Grads, ParamStore};
pub use tape::{activation, bce_loss, sigmoid, Activation, Segment, Tape, Var, PROB_EPS};
