pub mod analytic;
pub mod dataset;
pub mod error;
pub mod labctl;
pub mod model;
pub mod numkit;
pub mod optim;
pub mod phases;
pub mod pruning;
pub mod reports;
pub mod spectral;

pub use error::{Error, Result};
