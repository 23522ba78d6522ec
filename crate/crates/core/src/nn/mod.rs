//! Dense matrices, parameter storage and a reverse-mode tape.

mod layers;
mod matrix;
mod params;
pub mod tape;

pub use layers::{attention, dropout, feed_forward, layer_norm, linear};
pub use matrix::{argmax, Matrix};
pub use params::{gaussian, Param, ParamStore};
pub use tape::{log_sum_exp, softmax_in_place, Gradients, NodeGrads, RopeTable, Tape, Var};
