use std::time::Instant;

use serde::Serialize;

use crate::error::{OutputError, SimError};
use crate::incident::NoiseSpec;
use crate::road::VehicleClass;
use crate::sim::{SimConfig, Simulation};

use super::config::{ModelSpec, ScenarioConfig};

/// Coordinates of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub model_index: usize,
    pub model: ModelSpec,
    pub inflow_index: usize,
    pub inflow: f64,
    pub p_cav: f64,
    pub noise_index: usize,
    pub noise: NoiseSpec,
}

impl Cell {
    /// Simulation settings for this cell with the given run seed.
    pub fn sim_config(&self, base: &SimConfig, seed: u64) -> SimConfig {
        let mut config = base.clone();
        config.seed = seed;
        config.inflow_per_lane = self.inflow;
        config.p_cav = self.p_cav;
        if let Some(cav) = self.model.cav {
            config.model_cav = cav;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub mean_speed_all: f64,
    /// Absent when no CAV was ever on the road.
    pub mean_speed_cav: Option<f64>,
    pub offramp_attempts: u64,
    pub offramp_failures: u64,
    pub human_attempts: u64,
    pub human_failures: u64,
    pub cav_attempts: u64,
    pub cav_failures: u64,
    pub steps: u64,
    pub wall_time_s: f64,
}

impl RunMetrics {
    pub fn human_failure_rate(&self) -> Option<f64> {
        rate(self.human_failures, self.human_attempts)
    }

    pub fn cav_failure_rate(&self) -> Option<f64> {
        rate(self.cav_failures, self.cav_attempts)
    }
}

pub fn rate(failures: u64, attempts: u64) -> Option<f64> {
    (attempts > 0).then(|| failures as f64 / attempts as f64)
}

/// A run that aborted, with enough context to replay it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub seed: u64,
    pub step: u64,
    pub message: String,
}

/// Receives the world after every step.
pub trait TraceSink {
    fn record(&mut self, sim: &Simulation) -> Result<(), OutputError>;
}

#[derive(Debug, Default)]
struct SpeedAverager {
    sum: f64,
    samples: u64,
}

impl SpeedAverager {
    fn push(&mut self, mean: Option<f64>) {
        if let Some(m) = mean {
            self.sum += m;
            self.samples += 1;
        }
    }

    fn value(&self) -> Option<f64> {
        (self.samples > 0).then(|| self.sum / self.samples as f64)
    }
}

fn instantaneous_mean(sim: &Simulation, keep: impl Fn(VehicleClass) -> bool) -> Option<f64> {
    let (sum, n) = sim
        .world()
        .vehicles()
        .iter()
        .filter(|v| keep(v.class))
        .fold((0.0, 0u64), |(s, n), v| (s + v.speed, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs one simulation of `scenario` in `cell` with `seed` to termination.
pub fn run_scenario(
    scenario: &ScenarioConfig,
    cell: &Cell,
    seed: u64,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<RunMetrics, RunFailure> {
    let started = Instant::now();
    let fail = |step: u64, message: String| RunFailure { seed, step, message };
    let config = cell.sim_config(&scenario.sim, seed);
    let mut sim = Simulation::new(scenario.segment.clone(), scenario.incident, config, cell.noise)
        .map_err(|e| fail(0, e.to_string()))?;

    let mut all = SpeedAverager::default();
    let mut cav = SpeedAverager::default();
    while !sim.is_finished() {
        sim.step().map_err(|e: SimError| fail(sim.steps(), e.to_string()))?;
        all.push(instantaneous_mean(&sim, |c| c != VehicleClass::Incident));
        cav.push(instantaneous_mean(&sim, |c| c == VehicleClass::Cav));
        if let Some(sink) = trace.as_deref_mut() {
            sink.record(&sim).map_err(|e| fail(sim.steps(), e.to_string()))?;
        }
    }

    let human = sim.ramp_tally(VehicleClass::Human);
    let cavs = sim.ramp_tally(VehicleClass::Cav);
    Ok(RunMetrics {
        seed,
        mean_speed_all: all.value().unwrap_or(0.0),
        mean_speed_cav: cav.value(),
        offramp_attempts: human.attempts + cavs.attempts,
        offramp_failures: human.failures + cavs.failures,
        human_attempts: human.attempts,
        human_failures: human.failures,
        cav_attempts: cavs.attempts,
        cav_failures: cavs.failures,
        steps: sim.steps(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
