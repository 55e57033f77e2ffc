//! Acceptance checks for `mvinfer`, kept in their own package so that
//! `cargo test --workspace` runs them after every other suite.
//!
//! The checks live in `tests/acceptance.rs`; run them alone with
//! `cargo test -p mvinfer-validation`.
