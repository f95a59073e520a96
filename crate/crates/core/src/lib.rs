pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
