//! `analyse`: validate scenarios, expand experiments, execute runs and
//! report on run logs.
//!
//! Exit codes: 0 ok, 2 validation, 3 simulation abort, 4 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use analyse_core::design::{expand_runs, index_document, parse_experiment, Experiment, ExperimentDocument, RunDefinition};
use analyse_core::run::{run_to_dir, RunError};
use analyse_core::scenario::{self, load_document_value, load_scenario, to_yaml, ScenarioError};
use analyse_core::telemetry::{compare, summaries_to_csv, summarize, RunSummary, TelemetryError};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "analyse", version, about = "Co-simulation of grid, market and network with learning attackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario or experiment document and list every violation.
    Validate { file: PathBuf },
    /// Expand an experiment into one run file per run plus index.yaml.
    Design {
        experiment: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Replace run files already present in the output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Execute a run file, or every run file in a directory.
    Run {
        path: PathBuf,
        /// Replaces the document seed; recorded in the log header.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, env = "ANALYSE_LOG_DIR", default_value = "logs")]
        out: PathBuf,
        /// Concurrent runs when `path` is a directory.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Summarize a log, or compare the logs in a directory.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        group_by: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match &e {
        ScenarioError::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
        _ => {
            let lines: Vec<String> = e
                .diagnostics()
                .iter()
                .map(|d| if d.path.is_empty() { d.message.clone() } else { format!("{}: {}", d.path, d.message) })
                .collect();
            Failure::new(EXIT_VALIDATION, lines.join("\n"))
        }
    }
}

fn telemetry_failure(e: TelemetryError) -> Failure {
    match e {
        TelemetryError::Io(_) => Failure::new(EXIT_IO, e.to_string()),
        _ => Failure::new(EXIT_VALIDATION, e.to_string()),
    }
}

fn run_failure(e: RunError) -> Failure {
    match e {
        RunError::Validation(e) => scenario_failure(e),
        RunError::Simulation(_) => Failure::new(EXIT_ABORT, e.to_string()),
        RunError::Telemetry(e) => telemetry_failure(e),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn is_experiment(value: &serde_yaml::Value) -> bool {
    value.get("base_scenario").is_some()
}

/// Loads an experiment and its expanded runs; every run document is
/// validated as a scenario.
fn load_experiment(path: &Path) -> Result<(Experiment, Vec<RunDefinition>), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let doc = ExperimentDocument::parse(&text).map_err(|e| Failure::new(EXIT_VALIDATION, e.to_string()))?;
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&doc.base_scenario);
    let base = load_document_value(&base_path).map_err(scenario_failure)?;
    let experiment = parse_experiment(doc, base).map_err(|e| Failure::new(EXIT_VALIDATION, e.to_string()))?;
    let runs = expand_runs(&experiment);
    let mut problems = Vec::new();
    for r in &runs {
        if let Err(e) = scenario::from_value(r.document.clone()) {
            for d in e.diagnostics() {
                problems.push(format!("{}: {}: {}", r.run_id, d.path, d.message));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Failure::new(EXIT_VALIDATION, problems.join("\n")));
    }
    Ok((experiment, runs))
}

fn cmd_validate(file: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(file).map_err(|e| io_failure(file, e))?;
    let probe: serde_yaml::Value = serde_yaml::from_str(&text).unwrap_or(serde_yaml::Value::Null);
    if is_experiment(&probe) {
        let (_, runs) = load_experiment(file)?;
        println!("ok: {} ({} runs)", file.display(), runs.len());
    } else {
        load_scenario(file).map_err(scenario_failure)?;
        println!("ok: {}", file.display());
    }
    Ok(())
}

fn cmd_design(experiment: &Path, out: &Path, overwrite: bool) -> Result<(), Failure> {
    let (experiment, runs) = load_experiment(experiment)?;
    let mut files: Vec<(PathBuf, String)> = runs
        .iter()
        .map(|r| (out.join(format!("{}.yaml", r.run_id)), to_yaml(&r.document)))
        .collect();
    files.push((out.join("index.yaml"), to_yaml(&index_document(&experiment, &runs))));
    if !overwrite {
        if let Some((p, _)) = files.iter().find(|(p, _)| p.exists()) {
            return Err(Failure::new(
                EXIT_IO,
                format!("{} already exists; pass --overwrite to replace", p.display()),
            ));
        }
    }
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    for (p, text) in &files {
        fs::write(p, text).map_err(|e| io_failure(p, e))?;
    }
    println!("{} runs written to {}", runs.len(), out.display());
    Ok(())
}

fn run_one(path: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let scenario = load_scenario(path).map_err(scenario_failure)?;
    let outcome = run_to_dir(&scenario, seed, out).map_err(run_failure)?;
    let log = outcome.log_path.map(|p| p.display().to_string()).unwrap_or_default();
    println!("{}: seed {} -> {} ({} records)", outcome.run_id, outcome.seed, log, outcome.records);
    Ok(())
}

fn run_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_failure(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("yaml" | "yml"))
                && p.file_stem().and_then(|s| s.to_str()) != Some("index")
        })
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_run(path: &Path, seed: Option<u64>, out: &Path, parallel: usize) -> Result<(), Failure> {
    if !path.is_dir() {
        return run_one(path, seed, out);
    }
    let files = run_files(path)?;
    if files.is_empty() {
        return Err(Failure::new(EXIT_IO, format!("no run files in {}", path.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let results: Vec<Result<(), Failure>> = pool.install(|| files.par_iter().map(|f| run_one(f, seed, out)).collect());
    let mut worst: Option<Failure> = None;
    for (f, r) in files.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("{}: {}", f.display(), e.message);
            if worst.as_ref().map_or(true, |w| e.code > w.code) {
                worst = Some(e);
            }
        }
    }
    match worst {
        Some(w) => Err(Failure::new(w.code, "one or more runs failed")),
        None => Ok(()),
    }
}

fn log_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_failure(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_report(path: &Path, format: Format, group_by: Option<&str>) -> Result<(), Failure> {
    let files = if path.is_dir() {
        log_files(path)?
    } else if path.exists() {
        vec![path.to_path_buf()]
    } else {
        return Err(Failure::new(EXIT_IO, format!("{}: no such file or directory", path.display())));
    };
    if files.is_empty() {
        return Err(Failure::new(EXIT_IO, format!("no logs found in {}", path.display())));
    }
    let summaries: Vec<RunSummary> = files
        .iter()
        .map(|f| summarize(f).map_err(|e| telemetry_failure(e).with_context(f)))
        .collect::<Result<_, _>>()?;
    let text = match group_by {
        Some(factor) => {
            let table = compare(&summaries, factor).map_err(telemetry_failure)?;
            match format {
                Format::Text => table.render_text(),
                Format::Csv => table.render_csv(),
            }
        }
        None => match format {
            Format::Csv => summaries_to_csv(&summaries),
            Format::Text => summaries.iter().map(RunSummary::render_text).collect::<Vec<_>>().join("\n"),
        },
    };
    print!("{text}");
    Ok(())
}

impl Failure {
    fn with_context(self, path: &Path) -> Self {
        Self {
            code: self.code,
            message: format!("{}: {}", path.display(), self.message),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { file } => cmd_validate(file),
        Command::Design {
            experiment,
            out,
            overwrite,
        } => cmd_design(experiment, out, *overwrite),
        Command::Run {
            path,
            seed,
            out,
            parallel,
        } => cmd_run(path, *seed, out, *parallel),
        Command::Report { path, format, group_by } => cmd_report(path, *format, group_by.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
