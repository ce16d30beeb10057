use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regmest::experiments::{self, ExperimentConfig, ExperimentError, ExperimentKind, Record};

/// Regularized M-estimators of scatter: fitting, calibration and robustness sweeps.
#[derive(Parser, Debug)]
#[command(name = "regmest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Divides Monte-Carlo trial counts by 10.
    #[arg(long, global = true)]
    quick: bool,
    /// Omits the generation-time comment line from CSV output.
    #[arg(long, global = true)]
    no_header_timestamp: bool,
    /// Output path prefix; overrides the configured `output`.
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an estimator to a sample matrix (rows are variables, columns samples).
    Estimate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Oracle shrinkage and, with --input, data-driven shrinkage per estimator.
    Calibrate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Expected loss against the shrinkage on clean data.
    LossCurve,
    /// Measure of influence against the contamination rate.
    MiCurve,
    /// Infinitesimal influence against the aspect ratio.
    ImiAspect,
    /// Infinitesimal influence against the shrinkage.
    ImiRho,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    let base = cli.config.as_deref().and_then(Path::parent).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((cfg, base))
}

fn sweep<R: Record>(
    cli: &Cli,
    kind: ExperimentKind,
    run: impl Fn(&experiments::Resolved) -> Result<Vec<R>, ExperimentError>,
    plot: impl Fn(&Path, &[String]) -> String,
) -> Result<(), ExperimentError> {
    let (cfg, base) = load(cli)?;
    let mut resolved = cfg.resolve(kind, &base)?;
    if cli.quick {
        resolved.trials = experiments::quick_trials(resolved.trials);
    }
    log::info!("{kind:?}: N = {}, n = {}, trials = {}, seed = {}", resolved.dim, resolved.n, resolved.trials, resolved.seed);
    let rows = run(&resolved)?;
    let csv = experiments::write_csv_file(&resolved.output, &rows, !cli.no_header_timestamp)?;
    let labels = labels(&resolved);
    let gp = experiments::write_gnuplot(&resolved.output, &plot(&csv, &labels))?;
    println!("{}", csv.display());
    println!("{}", gp.display());
    Ok(())
}

fn labels(r: &experiments::Resolved) -> Vec<String> {
    let c = r.aspect_ratio();
    let mut out: Vec<String> = Vec::new();
    for e in &r.estimators {
        if let Ok(spec) = e.spec(c) {
            let label = spec.label().to_string();
            if !out.contains(&label) {
                out.push(label);
            }
        }
    }
    out
}

fn run(cli: &Cli) -> Result<ExitCode, ExperimentError> {
    use experiments::{gnuplot_script as gp, ImiAspectRow, ImiRhoRow, LossRow, MiRow};
    match &cli.command {
        Command::LossCurve => sweep(cli, ExperimentKind::LossCurve, experiments::run_loss_curve, |csv, l| {
            gp(csv, "expected loss", "rho", &["mean_loss", "loss_of_equivalent"], LossRow::HEADER, l, Some(("kind", "curve")))
        })?,
        Command::MiCurve => sweep(cli, ExperimentKind::MiCurve, experiments::run_mi_curve, |csv, l| {
            gp(csv, "measure of influence", "eps", &["mi_asymptotic", "mi_empirical", "linear_approx"], MiRow::HEADER, l, None)
        })?,
        Command::ImiAspect => sweep(cli, ExperimentKind::ImiVsAspect, experiments::run_imi_vs_aspect, |csv, l| {
            let mut l = l.to_vec();
            l.push("scm".into());
            gp(csv, "infinitesimal influence", "c", &["imi"], ImiAspectRow::HEADER, &l, None)
        })?,
        Command::ImiRho => sweep(cli, ExperimentKind::ImiVsRho, experiments::run_imi_vs_rho, |csv, l| {
            gp(csv, "infinitesimal influence", "rho", &["imi", "imi_small_t"], ImiRhoRow::HEADER, l, Some(("kind", "curve")))
        })?,
        Command::Estimate { input } => {
            let (cfg, base) = load(cli)?;
            let (fit, report) = experiments::run_estimate(&cfg, input, &base)?;
            let prefix = cfg.output.clone().unwrap_or_else(|| "estimate".into());
            let matrix = experiments::write_matrix_file(&prefix, &fit.estimate)?;
            let json = experiments::output_path(&prefix, "report.json");
            std::fs::write(&json, serde_json::to_string_pretty(&report).expect("serializable"))?;
            println!("{}", matrix.display());
            println!("{}", json.display());
            if !report.converged {
                eprintln!("error: solver did not converge after {} iterations (residual {:e})", report.iterations, report.residual);
                return Ok(ExitCode::from(1));
            }
        }
        Command::Calibrate { input } => {
            let (cfg, base) = load(cli)?;
            let summary = experiments::calibrate(&cfg, input.as_deref(), &base)?;
            let text = serde_json::to_string_pretty(&summary).expect("serializable");
            if let Some(prefix) = &cfg.output {
                std::fs::write(experiments::output_path(prefix, "json"), &text)?;
            }
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
