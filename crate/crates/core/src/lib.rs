//! Recurrent networks with activation-norm penalties.
//!
//! The crate provides SRNN (tanh, ReLU, TRec, IRNN) and LSTM cells with
//! exact backpropagation through time, the norm-stabilizer penalty and a
//! family of alternative stability penalties, SGD/Adam training with a
//! NaN-rollback protocol, the adding task and character-level language
//! modelling, and diagnostics for behaviour beyond the training horizon.

pub mod analysis;
pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod params;
pub mod regularizers;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use model::Model;
pub use params::Parameters;
pub use rng::Rng;
pub use tensor::Tensor;
