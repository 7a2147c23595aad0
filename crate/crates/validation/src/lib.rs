//! Acceptance suite for the workspace; the checks live in `tests/acceptance.rs`.
//!
//! The package is named so that `cargo test --workspace` runs it after
//! every other test target.
