pub mod em;
pub mod inarma;
pub mod error;
pub mod events;
pub mod kernels;
pub mod mcem;
pub mod mcmc;
pub mod model;
pub mod moments;
mod optim;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use optim::TriggerSet;
