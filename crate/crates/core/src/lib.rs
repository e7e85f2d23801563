//! Clustering with a joint energy-based objective: a generative term trained
//! with SGLD, an augmentation-invariance term and a uniform cluster prior.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod ebm;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
