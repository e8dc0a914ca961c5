pub mod block;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod graph;
pub mod kv;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
