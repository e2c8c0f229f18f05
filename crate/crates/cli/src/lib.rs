//! Harness around the freeway control library: scenario files, trajectory
//! CSV/SVG emission, convergence-rate estimation, and batch execution with
//! per-run assertions.

pub mod analysis;
pub mod battery;
pub mod csv_io;
pub mod run;
pub mod scenario_file;
pub mod svg;
