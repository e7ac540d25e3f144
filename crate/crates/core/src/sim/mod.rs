//! Configuration, the event loop, and run statistics.

mod config;
mod engine;
mod stats;

pub use config::{Capacity, ConfigError, SimConfig};
pub use engine::{
    compare, footprint_pages, run, run_with, sweep, CostEvent, CostLog, RunOptions, RunReport, SimError, SweepAxis,
    SweepPoint,
};
pub use stats::Stats;
