//! Parameter storage, layer building blocks and optimizers.

pub mod layers;
pub mod optim;
pub mod params;

pub use layers::{describe, ConvBlock, LayerKind, LayerSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamStore, Pass};
