pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod mcb;
pub mod networks;
pub mod nn;
pub mod perception;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
