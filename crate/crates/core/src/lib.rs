pub mod entropy;
pub mod error;
pub mod geometry;
pub mod infodim;
pub mod quantizer_bench;
pub mod rd_solver;
pub mod rng;
pub mod shannon_bound;
pub mod sources;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
