//! Convergence studies, solver comparisons and field export for the model
//! elliptic problem, driven by the `slatefem` binary.

pub mod config;
pub mod problem;
pub mod study;
