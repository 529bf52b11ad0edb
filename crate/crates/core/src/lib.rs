pub mod augment;
pub mod error;
pub mod grid;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pieceid;
pub mod retrieval;
pub mod rng;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
