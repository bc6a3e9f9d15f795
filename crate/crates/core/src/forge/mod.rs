//! Synthetic visual data and the visual-sentence layouts built from it.

mod annotate;
mod corpus;
mod manifest;
mod scene;
mod sentence;

pub use annotate::*;
pub use corpus::*;
pub use manifest::*;
pub use scene::*;
pub use sentence::*;
