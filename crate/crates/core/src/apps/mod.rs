//! Reference applications: a barrier loop, the nested-checkpoint scenario
//! and a distributed Lanczos eigensolver, plus their reports.

pub mod barrier;
pub mod nested;
pub mod lanczos;
pub mod matrix;
pub mod report;
pub mod tridiag;
