use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irf_bounds::certificates::{certify_empirical, certify_population, invert_epsilon};
use irf_bounds::complexity::{rademacher_auto, rademacher_exact, rademacher_mc, LossMatrix};
use irf_bounds::erm::{erm, WindowMode};
use irf_bounds::error::Error;
use irf_bounds::experiments::{
    read_trajectory_csv, run_coverage, run_simulate, run_sweep, run_validator, Experiment,
    ExperimentConfig, ResultBundle, Validator,
};
use irf_bounds::metric::{MetricSpec, SeedSpec, ZPoint};
use irf_bounds::transport::{w1_exact, EmpiricalMeasure};

const EXIT_INVALID: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_VERDICT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "irfb",
    version,
    about = "Generalization certificates for learning from contractive Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a trajectory and the contraction curve of the generator.
    Simulate {
        #[command(flatten)]
        exp: ExpArgs,
        /// Trajectory length (default 2n).
        #[arg(long)]
        length: Option<usize>,
    },
    /// Exact W1 between two uniform atom lists.
    Wasserstein {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        dim_x: usize,
        #[arg(long)]
        kappa: f64,
    },
    /// Empirical Rademacher complexity of a loss matrix (rows are hypotheses).
    Rademacher {
        matrix: PathBuf,
        #[arg(long, conflicts_with = "draws")]
        exact: bool,
        #[arg(long)]
        draws: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Epsilon-ERM over the configured class on a trajectory CSV.
    Erm {
        #[arg(long)]
        trajectory: PathBuf,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Evaluate a certificate from its ingredients.
    Certify(CertifyArgs),
    /// Monte-Carlo check of one of the bounds.
    Validate {
        #[arg(value_parser = parse_validator)]
        which: Validator,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Coverage of both certificate forms, optionally swept over n.
    Coverage {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in setup: iid, iid_pair, example1, example3, affine, affine_image.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_parser = parse_window)]
    window: Option<WindowMode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// `R_{n,π}` for the population form, `R̂` with --empirical.
    #[arg(long)]
    rademacher: f64,
    #[arg(long)]
    ell_h: f64,
    #[arg(long)]
    ell_f: f64,
    #[arg(long)]
    n: u64,
    #[arg(long, required_unless_present = "delta")]
    epsilon: Option<f64>,
    /// Derive epsilon from the target failure probability.
    #[arg(long, conflicts_with = "epsilon")]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    w_bar: f64,
    #[arg(long)]
    empirical: bool,
}

fn parse_validator(s: &str) -> Result<Validator, String> {
    Ok(match s {
        "lemma1" => Validator::Lemma1,
        "lemma2" => Validator::Lemma2,
        "lemma3" => Validator::Lemma3,
        "coverage" => Validator::Coverage,
        "remark" => Validator::Remark,
        _ => return Err("expected lemma1, lemma2, lemma3, coverage or remark".into()),
    })
}

fn parse_window(s: &str) -> Result<WindowMode, String> {
    match s {
        "delayed" => Ok(WindowMode::Delayed),
        "paper-literal" | "paper_literal" => Ok(WindowMode::PaperLiteral),
        _ => Err("expected delayed or paper-literal".into()),
    }
}

enum Failure {
    Lib(Error),
    Verdict(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidInput(format!("cannot read {}: {e}", path.display()))
}

/// Loads the config (or preset defaults) and applies flag overrides.
fn experiment(args: &ExpArgs) -> Result<Experiment, Error> {
    let (mut cfg, file_hash) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let (cfg, hash) = ExperimentConfig::load(path)?;
            (cfg, Some(hash))
        }
        (None, Some(name)) => (ExperimentConfig::preset(name, 200, 0.1, 100, 0), None),
        (None, None) => return Err(Error::Config("give --config or --preset".into())),
    };
    let before = cfg.clone();
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if args.delta.is_some() {
        cfg.delta = args.delta;
    }
    if let Some(v) = args.window {
        cfg.window_mode = v;
    }
    // The file's own hash only describes the run when nothing was overridden.
    let hash = match file_hash {
        Some(h) if cfg == before => Some(h),
        _ => None,
    };
    Experiment::from_config(cfg, hash)
}

fn out_dir(args: &ExpArgs, exp: &Experiment, command: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| exp.config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("irfb-out").join(command))
}

/// Writes the bundle plus the effective config and prints the summary.
fn finish(bundle: &ResultBundle, exp: &Experiment, dir: &Path) -> Result<(), Failure> {
    bundle.write(dir)?;
    std::fs::write(dir.join("config.json"), exp.config.canonical_json()? + "\n")
        .map_err(Error::Io)?;
    emit(&bundle.summary_json()?);
    let failed: Vec<&String> = bundle
        .summary
        .verdicts
        .iter()
        .filter(|(_, v)| !**v)
        .map(|(k, _)| k)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!(
            "FAIL: {}",
            failed
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

/// Rows of numbers; a first row that does not parse is taken as a header.
fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidInput(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} has no numeric rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn read_atoms(path: &Path, dim_x: usize) -> Result<EmpiricalMeasure, Error> {
    let atoms = read_numeric_csv(path)?
        .iter()
        .map(|r| ZPoint::from_row(r, dim_x))
        .collect::<Result<Vec<_>, _>>()?;
    EmpiricalMeasure::uniform(atoms)
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) -> Result<(), Error> {
    emit(&(serde_json::to_string_pretty(v)? + "\n"));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { exp: args, length } => {
            let exp = experiment(&args)?;
            let bundle = run_simulate(&exp, length)?;
            finish(&bundle, &exp, &out_dir(&args, &exp, "simulate"))
        }
        Command::Wasserstein { a, b, dim_x, kappa } => {
            let mu = read_atoms(&a, dim_x)?;
            let nu = read_atoms(&b, dim_x)?;
            let dim_y = mu.atoms()[0].dim_y();
            let spec = MetricSpec::new(dim_x, dim_y, kappa)?;
            let (cost, plan) = w1_exact(&mu, &nu, &spec)?;
            print_json(&serde_json::json!({ "cost": cost, "plan": plan.entries }))?;
            Ok(())
        }
        Command::Rademacher {
            matrix,
            exact,
            draws,
            seed,
        } => {
            let m = LossMatrix::from_rows(read_numeric_csv(&matrix)?)?;
            let est = match (exact, draws) {
                (true, _) => rademacher_exact(&m)?,
                (false, Some(d)) => rademacher_mc(&m, d, SeedSpec::new(seed))?,
                (false, None) => rademacher_auto(&m, 10_000, SeedSpec::new(seed), false)?,
            };
            print_json(&serde_json::to_value(est).map_err(Error::Json)?)?;
            Ok(())
        }
        Command::Erm {
            trajectory,
            exp: args,
        } => {
            let exp = experiment(&args)?;
            let text = std::fs::read_to_string(&trajectory).map_err(|e| io_err(&trajectory, e))?;
            let points = read_trajectory_csv(&text, exp.generator.metric().dim_x())?;
            let window = exp.config.window_mode.window(exp.config.n);
            if window.1 > points.len() {
                return Err(Error::InvalidInput(format!(
                    "window {window:?} needs {} points, the trajectory has {}",
                    window.1,
                    points.len()
                ))
                .into());
            }
            for z in &points {
                exp.generator.metric().check_point(z)?;
            }
            let traj = irf_bounds::irf::Trajectory::from_points(points)?;
            let report = erm(
                &exp.class,
                &traj,
                window,
                exp.config.epsilon,
                &exp.env,
                exp.settings.tie_break,
            )?;
            print_json(&serde_json::to_value(report).map_err(Error::Json)?)?;
            Ok(())
        }
        Command::Certify(c) => {
            let epsilon = match (c.epsilon, c.delta) {
                (Some(e), _) => e,
                (None, Some(d)) => invert_epsilon(d, c.n, c.ell_h, c.ell_f)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let cert = if c.empirical {
                certify_empirical(c.rademacher, c.ell_h, c.ell_f, c.n, epsilon)?
            } else {
                certify_population(c.rademacher, c.ell_h, c.ell_f, c.w_bar, c.n, epsilon)?
            };
            print_json(&serde_json::to_value(cert).map_err(Error::Json)?)?;
            Ok(())
        }
        Command::Validate { which, exp: args } => {
            let exp = experiment(&args)?;
            let bundle = run_validator(&exp, which)?;
            finish(&bundle, &exp, &out_dir(&args, &exp, which.name()))
        }
        Command::Coverage { exp: args, sweep } => {
            let exp = experiment(&args)?;
            let bundle = match sweep.or_else(|| exp.config.sweep.clone()) {
                Some(ns) => run_sweep(&exp, &ns)?,
                None => run_coverage(&exp)?,
            };
            finish(&bundle, &exp, &out_dir(&args, &exp, "coverage"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_VERDICT)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_assumption_violation() {
                ExitCode::from(EXIT_ASSUMPTION)
            } else {
                ExitCode::from(EXIT_INVALID)
            }
        }
    }
}
