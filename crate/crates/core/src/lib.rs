pub mod config;
pub mod diffcore;
pub mod error;
pub mod evalmetrics;
pub mod explain;
pub mod geometry;
pub mod metaenc;
pub mod par;
pub mod pipeline;
pub mod surrogate;
pub mod synthbench;

pub use error::{Error, Result};
