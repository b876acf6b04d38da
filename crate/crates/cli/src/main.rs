use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use neosim::experiment::output::{emit, prepare_out_dir, CsvTrace};
use neosim::experiment::{aggregate, cells, run_scenario, run_seed, sweep, Cell, ScenarioConfig, TraceSink};

#[derive(Parser)]
#[command(name = "neosim", version, about = "Mixed human/CAV highway simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one grid cell with one seed.
    Run(RunArgs),
    /// Run the full grid and write runs.csv and summary.json.
    Sweep(SweepArgs),
    /// Check a config and report the grid size.
    Validate(Source),
    /// Print a built-in scenario as a config file.
    Show {
        #[arg(long, value_name = "NAME")]
        scenario: String,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario config file (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario: disc-stopped, disc-slow or mand-overtake.
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig> {
        match (&self.config, &self.scenario) {
            (Some(path), _) => Ok(ScenarioConfig::load(path)?),
            (None, Some(name)) => Ok(ScenarioConfig::builtin(name)?),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Model id from the grid (default: first model).
    #[arg(long)]
    model: Option<String>,
    /// Inflow in veh/hr/lane (default: first grid inflow).
    #[arg(long)]
    inflow: Option<f64>,
    /// CAV penetration (default: first grid value; 0 for human-only).
    #[arg(long)]
    p_cav: Option<f64>,
    /// Run seed (default: the seed of run 0 in a sweep).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for run.json and trace files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write per-step trace CSVs (needs --out).
    #[arg(long, requires = "out")]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Base seed (overrides sim.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Override n_runs.
    #[arg(long)]
    runs: Option<u32>,
    /// Also write a per-step trace of run 0 in every cell.
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    match Cli::parse().command.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

impl Command {
    fn execute(self) -> Result<()> {
        match self {
            Command::Run(args) => run(args),
            Command::Sweep(args) => run_sweep(args),
            Command::Validate(source) => {
                let config = source.load()?;
                let n = cells(&config).len();
                println!(
                    "ok: {} ({n} cells x {} runs = {} simulations)",
                    config.name,
                    config.n_runs,
                    n as u64 * config.n_runs as u64
                );
                Ok(())
            }
            Command::Show { scenario } => {
                print!("{}", ScenarioConfig::builtin(&scenario)?.to_toml());
                Ok(())
            }
        }
    }
}

fn pick_cell(config: &ScenarioConfig, args: &RunArgs) -> Result<Cell> {
    let model = match &args.model {
        Some(id) => config
            .grid
            .models
            .iter()
            .position(|m| &m.id == id)
            .with_context(|| format!("model {id:?} not in grid"))?,
        None => 0,
    };
    let spec = config.grid.models[model].clone();
    let inflow = args.inflow.unwrap_or(config.grid.inflows[0]);
    let inflow_index = config.grid.inflows.iter().position(|&q| q == inflow).unwrap_or(0);
    let p_cav = if spec.is_baseline() {
        0.0
    } else {
        args.p_cav.unwrap_or(config.grid.penetrations[0])
    };
    if spec.is_baseline() && args.p_cav.is_some_and(|p| p != 0.0) {
        bail!("model {:?} is human-only; --p-cav must be 0", spec.id);
    }
    if !(0.0..=1.0).contains(&p_cav) || !(inflow >= 0.0) {
        bail!("invalid cell: inflow {inflow}, p_cav {p_cav}");
    }
    let noise = if spec.is_baseline() { Default::default() } else { config.grid.noise[0] };
    Ok(Cell {
        model_index: model,
        model: spec,
        inflow_index,
        inflow,
        p_cav,
        noise_index: 0,
        noise,
    })
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.source.load()?;
    let cell = pick_cell(&config, &args)?;
    let seed = args.seed.unwrap_or_else(|| run_seed(config.sim.seed, cell.inflow_index, 0));
    if let Some(dir) = &args.out {
        prepare_out_dir(dir)?;
    }
    let mut trace = match (&args.out, args.trace) {
        (Some(dir), true) => Some(CsvTrace::create(dir, "trace")?),
        _ => None,
    };
    let metrics = run_scenario(
        &config,
        &cell,
        seed,
        trace.as_mut().map(|t| t as &mut dyn TraceSink),
    )
    .map_err(|f| anyhow::anyhow!("run failed (seed {}, step {}): {}", f.seed, f.step, f.message))?;
    if let Some(t) = trace {
        t.finish()?;
    }
    let json = serde_json::json!({
        "scenario": config.name,
        "model": cell.model.id,
        "inflow": cell.inflow,
        "p_cav": cell.p_cav,
        "sigma_x": cell.noise.sigma_x,
        "sigma_v": cell.noise.sigma_v,
        "metrics": metrics,
    });
    let text = serde_json::to_string_pretty(&json)?;
    match &args.out {
        Some(dir) => write_file(&dir.join("run.json"), &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let mut config = args.source.load()?;
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    if let Some(runs) = args.runs {
        config.n_runs = runs;
    }
    config.validate()?;
    prepare_out_dir(&args.out)?;

    let started = Instant::now();
    let total = cells(&config).len() as u64 * config.n_runs as u64;
    eprintln!("{}: {total} runs", config.name);
    let result = sweep(&config, args.workers);
    let rows = aggregate(&config, &result);
    emit(&args.out, &config, &result, &rows)?;

    if args.trace {
        for (i, cell) in result.cells.iter().enumerate() {
            let seed = run_seed(config.sim.seed, cell.inflow_index, 0);
            let mut trace = CsvTrace::create(&args.out, &format!("trace_cell{i:03}"))?;
            // Aborted runs are already listed in summary.json.
            let _ = run_scenario(&config, cell, seed, Some(&mut trace));
            trace.finish()?;
        }
    }

    let failed = result.failures().count();
    eprintln!(
        "done in {:.1} s; {failed} failed run(s); wrote {}",
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    for (cell, f) in result.failures().take(5) {
        eprintln!("  {} inflow {} p_cav {}: {}", cell.model.id, cell.inflow, cell.p_cav, f.message);
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?);
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
