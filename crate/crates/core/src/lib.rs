pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod forge;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod pack;
pub mod rng;
pub mod tensor;
pub mod vq;

pub use error::{Error, Result};
