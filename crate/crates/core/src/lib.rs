pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod model;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{EmgfError, Result};
