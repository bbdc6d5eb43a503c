pub mod combiner;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod interpret;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod vocab;

pub use error::{Error, ErrorKind, Result};
