//! Desk-scale fused single-view/multi-view depth estimation.

pub mod backbone;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod head;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synth;

pub use error::{CoreError, Result};
pub use params::ParamStore;
