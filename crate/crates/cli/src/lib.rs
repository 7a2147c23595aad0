//! Batch experiment runner: config parsing, dispatch and CSV output.
//!
//! Random streams follow the core convention: grid point or worker `i`
//! of master seed `s` draws from ChaCha8 stream `(s, i)`, so results do not
//! depend on the thread count.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use output::{write_csv, Table, Value};
