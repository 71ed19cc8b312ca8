pub mod checkpoint;
pub mod critique;
pub mod dataio;
pub mod error;
pub mod evalsim;
pub mod model;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
