use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use temu::calibrate::ObservationSet;
use temu::{RngSeed, Tensor, TensorEmulator};
use temu_cli::config::Config;
use temu_cli::{pipelines, tools, CliError};

#[derive(Parser)]
#[command(name = "temu", version, about = "Multi-surrogate tensor emulation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Glacier tensor emulators over design sizes and surrogate combinations.
    GlacierExperiment,
    /// Single surrogates trained on flattened glacier runs.
    FlatBaseline,
    /// Agent-model tensors, emulators and test-case trajectories.
    AbmExperiment,
    /// Fit an emulator to a stored tensor.
    Fit {
        /// Tensor file.
        tensor: PathBuf,
        /// One per mode: `grid` or `<gp|rf|nn>:<inputs.csv>`.
        #[arg(long = "mode", required = true)]
        modes: Vec<String>,
        /// Comma-separated ranks (default: full).
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Emulator file to write.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Point predictions at query rows.
    Predict {
        emulator: PathBuf,
        /// CSV of learned-mode inputs, concatenated in mode order.
        queries: PathBuf,
        /// Output CSV (default: predictions.csv in the output directory).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Residual-bootstrap predictive samples at query rows.
    Bootstrap {
        emulator: PathBuf,
        queries: PathBuf,
        /// Replicates per query.
        #[arg(long = "replicates", short = 'b', default_value_t = 100)]
        b: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Gibbs calibration of the agent model.
    Calibrate {
        /// Observed trajectories `agent_id,time_index,x,y`; synthetic if absent.
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Override the iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the burn-in.
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Describe a tensor or emulator file.
    TensorInfo { path: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Other(e.to_string()))?;
    }
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.to_string_lossy().into_owned();
    }
    if let Command::Calibrate { iterations, burn_in, .. } = &cli.command {
        if let Some(n) = iterations {
            cfg.calibrate.iterations = *n;
        }
        if let Some(n) = burn_in {
            cfg.calibrate.burn_in = *n;
        } else if cfg.calibrate.burn_in >= cfg.calibrate.iterations {
            cfg.calibrate.burn_in = 0;
        }
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out_dir);
    let seed = RngSeed(cfg.seed);

    match cli.command {
        Command::GlacierExperiment => {
            write_resolved(&cfg, &out)?;
            let rows = pipelines::glacier_experiment(&cfg.glacier, seed, Some(&out))?;
            log::info!("{} rows written to {}", rows.len(), out.join("glacier_errors.csv").display());
        }
        Command::FlatBaseline => {
            write_resolved(&cfg, &out)?;
            let rows = pipelines::flat_baseline(&cfg.flat, &cfg.glacier, seed, Some(&out))?;
            for r in rows {
                log::info!("{} replicate {}: MARE {:.5}", r.kind, r.replicate, r.mare);
            }
        }
        Command::AbmExperiment => {
            write_resolved(&cfg, &out)?;
            let rows = pipelines::abm_experiment(&cfg.abm, seed, Some(&out))?;
            for r in rows {
                log::info!(
                    "case {} {}: spread error {:.4}, elongation error {:.4}",
                    r.case,
                    r.emulator.name(),
                    r.spread_error,
                    r.elongation_error
                );
            }
        }
        Command::Fit { tensor, modes, ranks, output } => {
            let t = Tensor::load(&tensor)?;
            let specs = modes.iter().map(|m| tools::parse_mode(m, &cfg.surrogate)).collect::<Result<Vec<_>, _>>()?;
            let e = tools::fit_tensor(&t, ranks.as_deref(), specs, seed)?;
            e.save(&output)?;
            log::info!("emulator written to {}", output.display());
        }
        Command::Predict { emulator, queries, output } => {
            let e = TensorEmulator::load(&emulator)?;
            let q = tools::read_matrix_csv(&queries)?;
            let path = output.unwrap_or_else(|| out.join("predictions.csv"));
            tools::predict(&e, &q, create_file(&path)?)?;
        }
        Command::Bootstrap { emulator, queries, b, output } => {
            if b == 0 {
                return Err(CliError::Config("--replicates must be at least 1".into()));
            }
            let e = TensorEmulator::load(&emulator)?;
            let q = tools::read_matrix_csv(&queries)?;
            let path = output.unwrap_or_else(|| out.join("bootstrap.csv"));
            tools::bootstrap(&e, &q, b, seed, create_file(&path)?)?;
        }
        Command::Calibrate { obs, .. } => {
            write_resolved(&cfg, &out)?;
            let observations = match obs {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?;
                    Some(ObservationSet::from_csv(f)?)
                }
                None => None,
            };
            let run = pipelines::calibrate(&cfg.calibrate, seed, observations, None, Some(&out))?;
            let s = &run.summary;
            if run.observations.is_empty() {
                log::info!("no observations: the chain samples the prior");
            }
            log::info!(
                "rho: mean {:.3}, 95% [{:.3}, {:.3}], mode {:.3}",
                s.rho.mean,
                s.rho.lower,
                s.rho.upper,
                s.rho.mode
            );
            log::info!("v: mean {:.4}, 95% [{:.4}, {:.4}], mode {:.4}", s.v.mean, s.v.lower, s.v.upper, s.v.mode);
        }
        Command::TensorInfo { path } => println!("{}", tools::describe(&path)?),
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    }
    let f = File::create(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_resolved(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let path = out.join("resolved_config.json");
    let json = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
    std::fs::write(&path, json + "\n").map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}
