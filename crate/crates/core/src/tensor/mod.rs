//! Dense arrays and the reverse-mode engine used for training.

mod array;
pub mod conv;
mod gradcheck;
mod graph;
mod ops;
mod optim;
mod params;

pub use array::Tensor;
pub use conv::{count_macs, Padding};
pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{Gradients, Graph, Var};
pub use ops::{Activation, BatchStats, BnMode, Reduce};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
