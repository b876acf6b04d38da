use rayon::prelude::*;
use serde::Serialize;

use crate::incident::NoiseSpec;
use crate::rng::derive_seed;

use super::config::ScenarioConfig;
use super::runner::{rate, run_scenario, Cell, RunFailure, RunMetrics};
use super::stats::Summary;

/// Every cell of the grid, in output order. The human-only model appears
/// once per inflow at zero penetration and zero noise.
pub fn cells(config: &ScenarioConfig) -> Vec<Cell> {
    let g = &config.grid;
    let mut out = Vec::new();
    for (model_index, model) in g.models.iter().enumerate() {
        for (inflow_index, &inflow) in g.inflows.iter().enumerate() {
            if model.is_baseline() {
                out.push(Cell {
                    model_index,
                    model: model.clone(),
                    inflow_index,
                    inflow,
                    p_cav: 0.0,
                    noise_index: 0,
                    noise: NoiseSpec::default(),
                });
                continue;
            }
            for &p_cav in &g.penetrations {
                for (noise_index, &noise) in g.noise.iter().enumerate() {
                    out.push(Cell {
                        model_index,
                        model: model.clone(),
                        inflow_index,
                        inflow,
                        p_cav,
                        noise_index,
                        noise,
                    });
                }
            }
        }
    }
    out
}

/// Run seeds depend only on the inflow and run index, so every model and
/// penetration level sees the same random arrivals.
pub fn run_seed(base: u64, inflow_index: usize, run: u32) -> u64 {
    derive_seed(base, &[inflow_index as u64, run as u64])
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub cell: usize,
    pub run: u32,
    pub result: Result<RunMetrics, RunFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub scenario: String,
    pub cells: Vec<Cell>,
    /// Ordered by cell, then run index.
    pub runs: Vec<RunRecord>,
}

impl SweepResult {
    pub fn cell_runs(&self, cell: usize) -> impl Iterator<Item = &RunMetrics> {
        self.runs
            .iter()
            .filter(move |r| r.cell == cell)
            .filter_map(|r| r.result.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&Cell, &RunFailure)> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().err().map(|e| (&self.cells[r.cell], e)))
    }
}

/// Runs the whole grid. `workers = 0` uses one thread per core.
pub fn sweep(config: &ScenarioConfig, workers: usize) -> SweepResult {
    let cells = cells(config);
    let jobs: Vec<(usize, u32)> = (0..cells.len())
        .flat_map(|c| (0..config.n_runs).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, run)| {
                let cell = &cells[c];
                let seed = run_seed(config.sim.seed, cell.inflow_index, run);
                RunRecord {
                    cell: c,
                    run,
                    result: run_scenario(config, cell, seed, None),
                }
            })
            .collect()
    });
    SweepResult {
        scenario: config.name.clone(),
        cells,
        runs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gain {
    pub abs: f64,
    pub pct: f64,
}

impl Gain {
    fn between(value: f64, baseline: f64) -> Self {
        Gain {
            abs: value - baseline,
            pct: 100.0 * (value - baseline) / baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub model: String,
    /// `None` for rows pooled across all inflows.
    pub inflow: Option<f64>,
    pub p_cav: f64,
    pub sigma_x: f64,
    pub sigma_v: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub speed_all: Option<Summary>,
    pub speed_cav: Option<Summary>,
    pub offramp_attempts: u64,
    pub offramp_failures: u64,
    pub failure_rate: Option<f64>,
    pub human_failure_rate: Option<f64>,
    pub cav_failure_rate: Option<f64>,
    /// Against the human-only cell at the same inflow.
    pub gain_all: Option<Gain>,
    /// CAV speed against the human-only network speed.
    pub gain_cav: Option<Gain>,
}

fn summarize(result: &SweepResult, cell_ids: &[usize], inflow: Option<f64>) -> CellSummary {
    let first = &result.cells[cell_ids[0]];
    let runs: Vec<&RunMetrics> = cell_ids.iter().flat_map(|&c| result.cell_runs(c)).collect();
    let n_total = cell_ids.len() * result.runs.iter().filter(|r| r.cell == cell_ids[0]).count();
    let all: Vec<f64> = runs.iter().map(|m| m.mean_speed_all).collect();
    let cav: Vec<f64> = runs.iter().filter_map(|m| m.mean_speed_cav).collect();
    let sum = |f: fn(&RunMetrics) -> u64| runs.iter().map(|m| f(m)).sum::<u64>();
    let attempts = sum(|m| m.offramp_attempts);
    let failures = sum(|m| m.offramp_failures);
    CellSummary {
        model: first.model.id.clone(),
        inflow,
        p_cav: first.p_cav,
        sigma_x: first.noise.sigma_x,
        sigma_v: first.noise.sigma_v,
        n_ok: runs.len(),
        n_failed: n_total - runs.len(),
        speed_all: Summary::of(&all),
        speed_cav: Summary::of(&cav),
        offramp_attempts: attempts,
        offramp_failures: failures,
        failure_rate: rate(failures, attempts),
        human_failure_rate: rate(sum(|m| m.human_failures), sum(|m| m.human_attempts)),
        cav_failure_rate: rate(sum(|m| m.cav_failures), sum(|m| m.cav_attempts)),
        gain_all: None,
        gain_cav: None,
    }
}

fn attach_gains(row: &mut CellSummary, baseline: Option<&CellSummary>) {
    let Some(base) = baseline.and_then(|b| b.speed_all) else {
        return;
    };
    row.gain_all = row.speed_all.map(|s| Gain::between(s.mean, base.mean));
    row.gain_cav = row.speed_cav.map(|s| Gain::between(s.mean, base.mean));
}

/// Per-cell rows in cell order, followed by rows pooled across inflows.
pub fn aggregate(config: &ScenarioConfig, result: &SweepResult) -> Vec<CellSummary> {
    let baseline = config.baseline_index();
    let mut rows: Vec<CellSummary> = (0..result.cells.len())
        .map(|c| summarize(result, &[c], Some(result.cells[c].inflow)))
        .collect();
    let base_rows: Vec<Option<CellSummary>> = (0..config.grid.inflows.len())
        .map(|i| {
            result
                .cells
                .iter()
                .position(|c| Some(c.model_index) == baseline && c.inflow_index == i)
                .map(|c| rows[c].clone())
        })
        .collect();
    for (row, cell) in rows.iter_mut().zip(&result.cells) {
        attach_gains(row, base_rows[cell.inflow_index].as_ref());
    }

    // Pool each (model, penetration, noise) combination across inflows.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (c, cell) in result.cells.iter().enumerate() {
        let key = |x: &Cell| (x.model_index, x.p_cav.to_bits(), x.noise_index);
        match groups.iter_mut().find(|g| key(&result.cells[g[0]]) == key(cell)) {
            Some(g) => g.push(c),
            None => groups.push(vec![c]),
        }
    }
    let mut pooled: Vec<CellSummary> = groups.iter().map(|g| summarize(result, g, None)).collect();
    let pooled_base = groups
        .iter()
        .position(|g| Some(result.cells[g[0]].model_index) == baseline)
        .map(|i| pooled[i].clone());
    for row in &mut pooled {
        attach_gains(row, pooled_base.as_ref());
    }
    rows.extend(pooled);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::ModelSpec;
    use crate::sim::DriverModel;

    fn small() -> ScenarioConfig {
        let mut s = ScenarioConfig::builtin("disc-slow").unwrap();
        s.n_runs = 2;
        s.sim.horizon = 20.0;
        s.grid.inflows = vec![800.0, 1400.0];
        s.grid.penetrations = vec![0.2, 0.6];
        s.grid.models = vec![
            ModelSpec::baseline(),
            ModelSpec {
                id: "neo".into(),
                cav: Some(DriverModel::neo(1.0)),
            },
        ];
        s
    }

    #[test]
    fn cell_counts() {
        let s = small();
        // 2 baseline cells + 2 inflows x 2 penetrations x 1 noise
        assert_eq!(cells(&s).len(), 6);
        let mut s4 = ScenarioConfig::builtin("disc-slow").unwrap();
        s4.grid.models = vec![s4.grid.models[3].clone()];
        s4.grid.penetrations = vec![0.2];
        assert_eq!(cells(&s4).len(), 4);
    }

    #[test]
    fn seeds_are_shared_across_models_only() {
        assert_eq!(run_seed(1, 0, 3), run_seed(1, 0, 3));
        assert_ne!(run_seed(1, 0, 3), run_seed(1, 1, 3));
        assert_ne!(run_seed(1, 0, 3), run_seed(1, 0, 4));
    }

    #[test]
    fn sweep_covers_the_grid_and_aggregates() {
        let s = small();
        let r = sweep(&s, 2);
        assert_eq!(r.runs.len(), 12);
        assert_eq!(r.failures().count(), 0);
        let rows = aggregate(&s, &r);
        // 6 cells + pooled: baseline, neo@0.2, neo@0.6
        assert_eq!(rows.len(), 9);
        for row in rows.iter().filter(|r| r.model == "human-only") {
            let g = row.gain_all.unwrap();
            assert_eq!(g.abs, 0.0);
            assert_eq!(g.pct, 0.0);
        }
        let pooled = rows.iter().find(|r| r.inflow.is_none() && r.model == "neo").unwrap();
        assert_eq!(pooled.n_ok, 4);
        let per_run: Vec<f64> = r
            .runs
            .iter()
            .filter(|x| r.cells[x.cell].model_index == 1 && r.cells[x.cell].p_cav == 0.2)
            .map(|x| x.result.as_ref().unwrap().mean_speed_all)
            .collect();
        let expected = per_run.iter().sum::<f64>() / per_run.len() as f64;
        assert!((pooled.speed_all.unwrap().mean - expected).abs() < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = small();
        let strip = |r: SweepResult| -> Vec<(usize, u32, f64, Option<f64>)> {
            r.runs
                .into_iter()
                .map(|x| {
                    let m = x.result.unwrap();
                    (x.cell, x.run, m.mean_speed_all, m.mean_speed_cav)
                })
                .collect()
        };
        assert_eq!(strip(sweep(&s, 1)), strip(sweep(&s, 3)));
    }
}
