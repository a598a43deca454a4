use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irtsim_core::design::{parse_design, Condition, GeneratorKind, SimulationDesign, DEFAULT_MASTER_SEED};
use irtsim_core::estimation::{eap_scores, fit_mml, AbilityEstimates, IrtModel, ItemEstimates};
use irtsim_core::generators::{simulate_dataset, ResponseMatrix, TrueParametersRecord};
use irtsim_core::harness::{
    reaggregate, run_study, summary_csv, validate_dataset, write_reports, write_timing, Settings,
    StudyReport, Timing,
};
use irtsim_core::IrtError;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_IO: u8 = 3;

/// Simulate, estimate and validate dichotomous 2PL item response data.
#[derive(Parser)]
#[command(name = "irtsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulation study and write its reports.
    Run(RunArgs),
    /// Generate one dataset as CSV.
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset.
    Estimate(EstimateArgs),
    /// Run the diagnostic battery on a CSV dataset.
    Validate(ValidateArgs),
    /// Re-aggregate the replication files of a previous run.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonFit {
    /// Quadrature points.
    #[arg(long, default_value_t = 61)]
    quadpts: usize,
}

#[derive(Args)]
struct RunArgs {
    /// JSON design file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated generators, e.g. a1,a3.
    #[arg(long, value_delimiter = ',')]
    generators: Option<Vec<GeneratorKind>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, default_value = "irtsim-out")]
    out: PathBuf,
    /// Also write every response matrix as CSV.
    #[arg(long)]
    keep_data: bool,
    /// Report estimated intercepts in the difficulty slot.
    #[arg(long)]
    compat_intercept_difficulty: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    fit: CommonFit,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    generator: GeneratorKind,
    #[arg(long)]
    items: usize,
    #[arg(long)]
    sample: usize,
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file for the generating parameters.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "2pl")]
    model: IrtModel,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: CommonFit,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the parallel-analysis permutations.
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    fit: CommonFit,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Core(IrtError),
    Partial(String),
}

impl From<IrtError> for Failure {
    fn from(e: IrtError) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, IrtError> {
    fs::read_to_string(path).map_err(|e| IrtError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), IrtError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IrtError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| IrtError::io(path, e))
}

fn read_data(path: &Path) -> Result<ResponseMatrix, IrtError> {
    ResponseMatrix::from_csv(&read_text(path)?)
}

fn check_unreliable(report: &StudyReport) -> CliResult {
    let bad: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.summary.unreliable)
        .map(|r| r.summary.condition_id.as_str())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!(
            "more than 20% of replications failed in: {}",
            bad.join(", ")
        )))
    }
}

fn run(args: RunArgs) -> CliResult {
    let mut design = match &args.config {
        Some(path) => parse_design(&read_text(path)?)?,
        None => SimulationDesign::default(),
    };
    if let Some(g) = args.generators {
        design.generator_kinds = g.into_iter().collect();
    }
    if let Some(r) = args.reps {
        design.replications = r;
    }
    if let Some(s) = args.seed {
        design.master_seed = s;
    }
    design.validate()?;
    let settings = Settings {
        quad_points: args.fit.quadpts,
        alpha: args.alpha,
        intercept_as_difficulty: args.compat_intercept_difficulty,
        keep_data: args.keep_data,
        ..Settings::default()
    };
    settings.validate()?;
    eprintln!(
        "running {} datasets on {} thread(s)",
        design.total_datasets(),
        args.parallel.max(1)
    );
    let study = run_study(&design, &settings, args.parallel)?;
    let written = write_reports(&study.report, &study.artifacts, &args.out)?;
    write_timing(
        &args.out,
        &Timing {
            wall_clock_seconds: study.elapsed_seconds,
            parallelism: args.parallel.max(1),
        },
    )?;
    let failed: usize = study.report.rows.iter().map(|r| r.summary.failed).sum();
    eprintln!(
        "wrote {} files to {} in {:.1}s ({failed} failed replications)",
        written.len() + 1,
        args.out.display(),
        study.elapsed_seconds
    );
    print!("{}", summary_csv(&study.report)?);
    check_unreliable(&study.report)
}

fn generate(args: GenerateArgs) -> CliResult {
    let design = SimulationDesign::default();
    let cond = Condition::new(args.generator, args.items, args.sample);
    if args.items < 2 || args.sample < 2 {
        return Err(IrtError::Config("items and sample must be at least 2".into()).into());
    }
    let (params, data) = simulate_dataset(&cond, &design, args.seed)?;
    write_text(&args.out, &data.to_csv())?;
    if let Some(path) = &args.truth {
        let record = TrueParametersRecord::new(&params, args.seed);
        write_text(path, &serde_json::to_string_pretty(&record).map_err(IrtError::from)?)?;
    }
    eprintln!("{} -> {} (sha256 {})", cond.condition_id, args.out.display(), data.digest());
    Ok(())
}

#[derive(serde::Serialize)]
struct EstimateOutput {
    estimates: ItemEstimates,
    ability: AbilityEstimates,
}

fn estimate(args: EstimateArgs) -> CliResult {
    let data = read_data(&args.data)?;
    let settings = Settings {
        quad_points: args.fit.quadpts,
        ..Settings::default()
    };
    settings.validate()?;
    let grid = settings.grid()?;
    let estimates = fit_mml(&data, args.model, &grid, &settings.fit_settings())?;
    let ability = eap_scores(&data, &estimates, &grid)?;
    if !estimates.converged {
        eprintln!("warning: {} fit stopped at the iteration cap", args.model);
    }
    let out = EstimateOutput { estimates, ability };
    write_text(&args.out, &serde_json::to_string_pretty(&out).map_err(IrtError::from)?)?;
    Ok(())
}

fn validate(args: ValidateArgs) -> CliResult {
    let data = read_data(&args.data)?;
    let settings = Settings {
        quad_points: args.fit.quadpts,
        alpha: args.alpha,
        ..Settings::default()
    };
    let report = validate_dataset(&data, &settings, args.seed)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_text(&args.out, &serde_json::to_string_pretty(&report).map_err(IrtError::from)?)?;
    Ok(())
}

fn report(args: ReportArgs) -> CliResult {
    let report = reaggregate(&args.input)?;
    write_text(&args.out, &summary_csv(&report)?)?;
    check_unreliable(&report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => estimate(a),
        Command::Validate(a) => validate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                IrtError::Io { .. } => ExitCode::from(EXIT_IO),
                _ => ExitCode::from(EXIT_CONFIG),
            }
        }
    }
}
