pub mod backbone;
pub mod checkpoint;
pub mod diffcore;
pub mod engine;
pub mod env;
pub mod error;
pub mod harness;
pub mod seed;
pub mod voting;
pub mod zoo;

pub use error::{Error, Result};
