//! Scenario definitions, Monte Carlo sweeps, aggregation and output.

pub mod config;
pub mod output;
pub mod runner;
pub mod stats;
pub mod sweep;

pub use config::{Grid, ModelSpec, ScenarioConfig, BUILTIN_SCENARIOS};
pub use runner::{run_scenario, Cell, RunFailure, RunMetrics, TraceSink};
pub use sweep::{aggregate, cells, run_seed, sweep, CellSummary, Gain, SweepResult};
