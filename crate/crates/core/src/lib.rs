pub mod calibration;
pub mod cm;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod kernel;
pub mod market;
pub mod settings;
pub mod swm;

pub use error::{ClearError, Result};
