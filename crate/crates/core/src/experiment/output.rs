use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::OutputError;
use crate::sim::Simulation;

use super::config::ScenarioConfig;
use super::runner::TraceSink;
use super::sweep::{CellSummary, SweepResult};

pub const RUNS_HEADER: [&str; 11] = [
    "scenario",
    "model",
    "inflow",
    "p_cav",
    "sigma_x",
    "sigma_v",
    "seed",
    "mean_speed_all",
    "mean_speed_cav",
    "offramp_attempts",
    "offramp_failures",
];

/// `%g`-style rendering with 6 significant digits.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Creates `dir` if needed and proves it is writable before any work starts.
pub fn prepare_out_dir(dir: &Path) -> Result<(), OutputError> {
    let unwritable = |source| OutputError::Unwritable {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(".neosim-write-probe");
    File::create(&probe).map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)?;
    Ok(())
}

pub fn write_runs_csv<W: Write>(out: W, result: &SweepResult) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for run in &result.runs {
        let Ok(m) = &run.result else { continue };
        let cell = &result.cells[run.cell];
        w.write_record([
            result.scenario.clone(),
            cell.model.id.clone(),
            format_g(cell.inflow),
            format_g(cell.p_cav),
            format_g(cell.noise.sigma_x),
            format_g(cell.noise.sigma_v),
            m.seed.to_string(),
            format_g(m.mean_speed_all),
            m.mean_speed_cav.map(format_g).unwrap_or_default(),
            m.offramp_attempts.to_string(),
            m.offramp_failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FailureRow<'a> {
    model: &'a str,
    inflow: f64,
    p_cav: f64,
    sigma_x: f64,
    sigma_v: f64,
    seed: u64,
    step: u64,
    message: &'a str,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    scenario: &'a str,
    n_runs: u32,
    base_seed: u64,
    rows: &'a [CellSummary],
    failures: Vec<FailureRow<'a>>,
}

pub fn write_summary_json<W: Write>(
    out: W,
    config: &ScenarioConfig,
    result: &SweepResult,
    rows: &[CellSummary],
) -> Result<(), OutputError> {
    let failures = result
        .failures()
        .map(|(cell, f)| FailureRow {
            model: &cell.model.id,
            inflow: cell.inflow,
            p_cav: cell.p_cav,
            sigma_x: cell.noise.sigma_x,
            sigma_v: cell.noise.sigma_v,
            seed: f.seed,
            step: f.step,
            message: &f.message,
        })
        .collect();
    let doc = SummaryDoc {
        scenario: &config.name,
        n_runs: config.n_runs,
        base_seed: config.sim.seed,
        rows,
        failures,
    };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes `runs.csv` and `summary.json` into `dir`.
pub fn emit(dir: &Path, config: &ScenarioConfig, result: &SweepResult, rows: &[CellSummary]) -> Result<(), OutputError> {
    let runs = BufWriter::new(create(&dir.join("runs.csv"))?);
    write_runs_csv(runs, result)?;
    let summary = BufWriter::new(create(&dir.join("summary.json"))?);
    write_summary_json(summary, config, result, rows)
}

fn create(path: &Path) -> Result<File, OutputError> {
    File::create(path).map_err(|source| OutputError::Unwritable {
        path: path.display().to_string(),
        source,
    })
}

/// Per-step trace: one row per vehicle in `<stem>_vehicles.csv`, and report
/// plus lane-change events in `<stem>_events.csv`.
pub struct CsvTrace {
    vehicles: csv::Writer<BufWriter<File>>,
    events: csv::Writer<BufWriter<File>>,
}

impl CsvTrace {
    pub fn create(dir: &Path, stem: &str) -> Result<Self, OutputError> {
        let open = |suffix: &str| -> Result<csv::Writer<BufWriter<File>>, OutputError> {
            let path: PathBuf = dir.join(format!("{stem}_{suffix}.csv"));
            Ok(csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(BufWriter::new(create(&path)?)))
        };
        let mut vehicles = open("vehicles")?;
        vehicles.write_record(["time", "id", "class", "route", "lane", "position", "speed"])?;
        let mut events = open("events")?;
        events.write_record(["time", "kind", "id", "from", "to", "value", "x_h", "x_t"])?;
        Ok(CsvTrace { vehicles, events })
    }

    pub fn finish(mut self) -> Result<(), OutputError> {
        self.vehicles.flush()?;
        self.events.flush()?;
        Ok(())
    }
}

impl TraceSink for CsvTrace {
    fn record(&mut self, sim: &Simulation) -> Result<(), OutputError> {
        let t = format_g(sim.time());
        for v in sim.world().vehicles() {
            self.vehicles.write_record([
                t.as_str(),
                &v.id.0.to_string(),
                v.class.as_str(),
                v.route.as_str(),
                &v.lane.to_string(),
                &format_g(v.position),
                &format_g(v.speed),
            ])?;
        }
        if let Some(r) = sim.last_report() {
            self.events.write_record([
                t.as_str(),
                "report",
                "",
                &r.lane.to_string(),
                "",
                "",
                &format_g(r.x_h),
                &format_g(r.x_t),
            ])?;
        }
        for c in sim.last_changes() {
            self.events.write_record([
                t.as_str(),
                "lane_change",
                &c.id.0.to_string(),
                &c.from.to_string(),
                &c.to.to_string(),
                &format_g(c.breakdown.weighted_total),
                "",
                "",
            ])?;
        }
        Ok(())
    }
}
