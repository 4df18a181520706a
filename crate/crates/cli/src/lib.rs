//! Harness behind the `pmean-arena` binary: runs, sweeps, regime bounds and certificate suites.

pub mod exec;
pub mod regime;
pub mod report;
pub mod suite;
pub mod sweep;
