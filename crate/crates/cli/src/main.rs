use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use morphrom::ffd::{apply_parameters, ParameterPoint};
use morphrom::mesh::{check_quality, morph_mesh};
use morphrom::pipeline::{cmd_eval, cmd_offline, cmd_report, Method, OfflineOutcome, ParametricFom, RunConfig, Store};
use morphrom::{Error, Result};

#[derive(Parser)]
#[command(name = "morphrom", version, about = "Shape-parametrised reduced-order models: offline sampling and online evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free-form deformation utilities.
    Ffd {
        #[command(subcommand)]
        action: FfdAction,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
    /// Sample the parameter space, build bases and models into the store.
    Offline(OfflineArgs),
    /// Evaluate one parameter point with a chosen method.
    Eval(EvalArgs),
    /// PODI evaluation (same as `eval --method podi`).
    Podi {
        #[command(subcommand)]
        action: RomAction,
    },
    /// DD-POD evaluation (same as `eval --method ddpod`).
    Ddpod {
        #[command(subcommand)]
        action: RomAction,
    },
    /// Error and speed-up report at the validation points.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum FfdAction {
    /// Morph the configured mesh at `--mu` and write it to `--out`.
    Apply {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_mu)]
        mu: ParameterPoint,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MeshAction {
    /// Quality metrics of the (optionally morphed) mesh; exit 3 on failure.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_mu)]
        mu: Option<ParameterPoint>,
    },
}

#[derive(Subcommand)]
enum RomAction {
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = parse_mu)]
        mu: ParameterPoint,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Args)]
struct OfflineArgs {
    /// Run configuration (the bundled demo when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Store directory (defaults to the config's `output_dir`).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_parser = parse_mu)]
    mu: ParameterPoint,
    #[arg(long, value_parser = parse_method, default_value = "podi")]
    method: Method,
    /// Overrides the Schwarz tolerance (ddpod) or solver tolerance (fom).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Validation points as `a,b;c,d;...` (the config's list when omitted).
    #[arg(long)]
    points: Option<String>,
}

fn parse_mu(s: &str) -> std::result::Result<ParameterPoint, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad parameter value '{t}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(ParameterPoint::new)
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::demo()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable output"));
}

fn eval(store: &Path, mu: &ParameterPoint, method: Method, tol: Option<f64>) -> Result<()> {
    let (record, path) = cmd_eval(store, mu, method, tol)?;
    print_json(&record);
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ffd { action: FfdAction::Apply { config, mu, out } } => {
            let config = load_config(config.as_deref())?;
            let fom = ParametricFom::new(&config)?;
            let lattice = apply_parameters(&config.binding, &mu, &config.lattice()?)?;
            let mesh = morph_mesh(fom.base_mesh(), &lattice);
            mesh.save(&out, "mesh")?;
            print_json(&mesh.header());
        }
        Command::Mesh { action: MeshAction::Check { config, mu } } => {
            let config = load_config(config.as_deref())?;
            let fom = ParametricFom::new(&config)?;
            let mesh = match &mu {
                Some(mu) => morph_mesh(fom.base_mesh(), &apply_parameters(&config.binding, mu, &config.lattice()?)?),
                None => fom.base_mesh().clone(),
            };
            let report = check_quality(&mesh, config.quality.skew_limit, config.quality.ortho_limit);
            print_json(&report);
            if !report.pass {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Offline(args) => {
            let config = load_config(args.config.as_deref())?;
            let root = args.store.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let summary = cmd_offline(&config, &root)?;
            match summary.outcome {
                OfflineOutcome::UpToDate => println!("up to date"),
                OfflineOutcome::Built => println!(
                    "built store at {} with {} snapshots ({} full-order solves)",
                    root.display(),
                    summary.manifest.snapshots.len(),
                    summary.solver_calls
                ),
            }
        }
        Command::Eval(args) => eval(&args.store, &args.mu, args.method, args.tol)?,
        Command::Podi { action: RomAction::Eval { store, mu, tol } } => eval(&store, &mu, Method::Podi, tol)?,
        Command::Ddpod { action: RomAction::Eval { store, mu, tol } } => eval(&store, &mu, Method::Ddpod, tol)?,
        Command::Report(args) => {
            let points = match &args.points {
                Some(text) => Some(
                    text.split(';')
                        .map(|p| parse_mu(p).map_err(Error::Config))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            let report = cmd_report(&args.store, points.as_deref())?;
            print!("{}", String::from_utf8_lossy(&report.to_csv(false)));
            log::info!("wrote {}", Store::new(&args.store).path("report.csv").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
