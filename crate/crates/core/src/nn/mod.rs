//! Dense networks, backpropagation, Adam and EMA target parameters.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::Checkpoint;
pub use mlp::{
    batch_from_rows, log_softmax_rows, place_columns, softmax, softmax_cross_entropy, Activation,
    ForwardCache, Mlp,
};
pub use optim::{Adam, EmaShadow};
