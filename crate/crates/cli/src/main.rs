//! `coefid`: forward solves, recoveries and the canned experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coefid::data_pipeline::{synthesize, ExperimentSpec, PipelineError, Synthesized};
use coefid::descent::{self, DescentConfig, DescentError, TraceRow};
use coefid::functionals::{Component, CoefficientTriple, FunctionalError};
use coefid::grid::{io, Field2D};
use coefid::pde_solver::SolverConfig;
use serde_json::{json, Value};

const REPRODUCE_SNAPSHOTS: [usize; 6] = [10, 20, 50, 500, 1000, 2000];
/// Per-iteration relative decrease of G below which an iteration counts as slow.
const STALL_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "coefid", version, about = "Coefficient recovery for -div(p grad u) + lambda q u = f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Noise seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize data for an experiment spec.
    Forward {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recover p (and optionally q, f) for an experiment spec.
    Recover {
        #[arg(long)]
        spec: PathBuf,
        /// Descent configuration (JSON); missing fields take defaults.
        #[arg(long)]
        descent: Option<PathBuf>,
        /// Iterations at which to write p, comma separated.
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the four built-in examples.
    Reproduce {
        #[arg(value_parser = clap::value_parser!(u32).range(1..=4))]
        example: u32,
        #[arg(long)]
        descent: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    fn render(self, f: &Field2D) -> String {
        match self {
            Format::Csv => io::to_csv(f),
            Format::Json => io::to_json(f),
        }
    }
}

enum Failure {
    Invalid(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownExample(_) | PipelineError::InvalidSpec { .. } | PipelineError::Grid(_) => {
                Failure::Invalid(e.to_string())
            }
            PipelineError::Functional(FunctionalError::Invalid(_)) => Failure::Invalid(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<DescentError> for Failure {
    fn from(e: DescentError) -> Self {
        match e {
            DescentError::InvalidConfig(_) | DescentError::Functional(FunctionalError::Invalid(_)) => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec, Failure> {
    let mut spec = ExperimentSpec::from_json(&read(path)?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// Descent settings from an optional JSON file. `max_iters` and `functional`
/// come from the experiment spec unless the file sets them.
fn load_descent(path: Option<&Path>, spec: &ExperimentSpec) -> Result<DescentConfig, Failure> {
    let raw: Value = match path {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| Failure::Invalid(format!("descent config {}: {e}", p.display())))?,
        None => json!({}),
    };
    let obj = raw
        .as_object()
        .ok_or_else(|| Failure::Invalid("descent config must be a JSON object".into()))?;
    let mut cfg: DescentConfig = serde_json::from_value(raw.clone())
        .map_err(|e| Failure::Invalid(format!("descent config: {e}")))?;
    if !obj.contains_key("max_iters") {
        cfg.max_iters = spec.max_iters;
    }
    if !obj.contains_key("functional") {
        cfg.functional = spec.functional;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

fn metadata(s: &Synthesized, files: &[String]) -> Value {
    let (x0, x1, y0, y1) = s.instance.grid().bounds();
    json!({
        "spec": s.spec,
        "grid": { "x0": x0, "x1": x1, "y0": y0, "y1": y1, "nx": s.spec.nx, "ny": s.spec.ny },
        "lambda": s.spec.lambda,
        "realized_noise": s.realized_noise,
        "solver_residuals": s.solver_residuals,
        "notes": s.notes,
        "files": files,
    })
}

fn write_data(dir: &Path, s: &Synthesized, fmt: Format) -> Result<(), Failure> {
    let mut files = Vec::new();
    for (k, obs) in s.instance.observations.iter().enumerate() {
        for (stem, field) in [("clean", &s.clean[k]), ("data", &s.noisy[k]), ("smoothed", &obs.u)] {
            let name = format!("u_{stem}_{k}.{}", fmt.ext());
            write(dir, &name, &fmt.render(field))?;
            files.push(name);
        }
    }
    write(dir, "metadata.json", &pretty(&metadata(s, &files)))
}

fn forward(spec: &Path, common: &Common) -> Result<(), Failure> {
    let spec = load_spec(spec, common.seed)?;
    let s = synthesize(&spec, &SolverConfig::default())?;
    prepare(&common.out)?;
    write_data(&common.out, &s, common.format)?;
    println!(
        "example {}: {} field(s) written to {}",
        spec.example,
        spec.lambda.len(),
        common.out.display()
    );
    Ok(())
}

fn trace_csv(rows: &[TraceRow]) -> String {
    descent::DescentTrace { rows: rows.to_vec() }.to_csv()
}

fn recover(
    spec: ExperimentSpec,
    descent_path: Option<&Path>,
    snapshots: &[usize],
    common: &Common,
) -> Result<(), Failure> {
    let s = synthesize(&spec, &SolverConfig::default())?;
    let cfg = load_descent(descent_path, &spec)?;
    let dir = &common.out;
    let fmt = common.format;
    prepare(dir)?;
    write_data(dir, &s, fmt)?;
    let c0 = descent::initial_guess(&s.instance.p_boundary, &cfg.solver)
        .map_err(|e| Failure::Numerical(e.to_string()))?;

    let mut wanted: Vec<usize> = snapshots.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let mut rows = Vec::new();
    let mut written = Vec::new();
    let mut io_error = None;
    let result = descent::run_with(c0, &s.instance, &cfg, |row, c| {
        rows.push(*row);
        if wanted.binary_search(&row.iter).is_ok() {
            if let Err(e) = write(dir, &snapshot_name(row.iter, fmt), &fmt.render(&c.p)) {
                io_error.get_or_insert(e);
            }
            written.push(row.iter);
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            write(dir, "trace.csv", &trace_csv(&rows))?;
            return Err(e.into());
        }
    };
    for &k in wanted.iter().filter(|k| !written.contains(k)) {
        write(dir, &snapshot_name(k, fmt), &fmt.render(&result.c.p))?;
    }
    write(dir, "trace.csv", &result.trace.to_csv())?;
    write_coefficients(dir, &result.c, fmt)?;

    let last = result.trace.rows.last().expect("trace has the initial row");
    let stall = result.trace.stall_rate(STALL_THRESHOLD);
    let warnings = s.instance.warnings([cfg.recover_p, cfg.recover_q, cfg.recover_f]);
    let summary = json!({
        "example": spec.example,
        "functional": cfg.functional,
        "relerr_p": last.relerr[0],
        "relerr_q": last.relerr[1],
        "relerr_f": last.relerr[2],
        "final_value": last.g,
        "iterations": last.iter,
        "stopped_reason": result.stopped.as_str(),
        "realized_noise": s.realized_noise,
        "stall_rate": stall,
        "stall_threshold": STALL_THRESHOLD,
        "min_p": result.c.p.min(),
        "warnings": warnings,
        "notes": s.notes,
    });
    write(dir, "summary.json", &pretty(&summary))?;
    println!(
        "example {}: relerr_p {:.4} after {} iterations ({}), stall rate {:.3}",
        spec.example,
        last.relerr[0],
        last.iter,
        result.stopped.as_str(),
        stall
    );
    Ok(())
}

fn snapshot_name(k: usize, fmt: Format) -> String {
    format!("p_iter_{k:04}.{}", fmt.ext())
}

fn write_coefficients(dir: &Path, c: &CoefficientTriple, fmt: Format) -> Result<(), Failure> {
    for comp in Component::ALL {
        write(dir, &format!("{}.{}", comp.name(), fmt.ext()), &fmt.render(c.get(comp)))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Forward { spec, common } => forward(&spec, &common),
        Command::Recover { spec, descent, snapshots, common } => {
            let spec = load_spec(&spec, common.seed)?;
            recover(spec, descent.as_deref(), &snapshots, &common)
        }
        Command::Reproduce { example, descent, snapshots, common } => {
            let mut spec = ExperimentSpec::paper(example)?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let snaps = if snapshots.is_empty() { REPRODUCE_SNAPSHOTS.to_vec() } else { snapshots };
            recover(spec, descent.as_deref(), &snaps, &common)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
