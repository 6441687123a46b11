use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use blowup_core::profiles::DEFAULT_GROUND_STATE_TOL;
use blowup_core::{Grid, SpatialGrid};
use blowup_lab::commands;
use blowup_lab::config::{parse_config, RunConfig};
use blowup_lab::output::{ground_state_csv, to_json, trajectory_csv};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blowup-lab", version, about = "Numerical lab for minimal-mass blow-up of the mass-critical NLS")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output file or directory (subcommand dependent)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// seed for the random coercivity probe
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for Q and write `x,Q` as CSV
    GroundState {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long = "grid-n")]
        grid_n: Option<usize>,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GROUND_STATE_TOL)]
        tol: f64,
    },
    /// Residuals of the operator identities and the coercivity constant, as JSON
    OperatorsCheck {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long = "grid-n")]
        grid_n: Option<usize>,
        #[arg(long)]
        half_width: Option<f64>,
        /// random perturbations tried by the probe (with --seed)
        #[arg(long, default_value_t = 32)]
        trials: usize,
    },
    /// Evolve the configured initial data; CSV of conserved quantities
    Simulate,
    /// Decompose a field given as `x,re,im` CSV; prints the state as JSON
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        /// initial guess `l,b,g,w` (`l,b,g` on radial meshes)
        #[arg(long, allow_hyphen_values = true)]
        guess: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// time attached to the state
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
    },
    /// Construction run (and limit sequence when `experiment.t_n` is set)
    Experiment,
    /// Construction runs over a list of potential amplitudes
    Sweep {
        /// comma-separated multipliers of the configured potential
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        amplitudes: Vec<f64>,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn grid_from(cfg: &RunConfig, dim: Option<usize>, n: Option<usize>, r: Option<f64>) -> Result<Grid> {
    Ok(SpatialGrid::new(
        dim.unwrap_or(cfg.grid.dim),
        r.unwrap_or(cfg.grid.half_width),
        n.unwrap_or(cfg.grid.points),
    )?)
}

fn out_dir(cli_out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    cli_out.map_or_else(|| PathBuf::from(&cfg.output.directory), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::GroundState { dim, grid_n, half_width, tol } => {
            let g = grid_from(&cfg, dim, grid_n, half_width)?;
            let (q, report) = commands::ground_state(g.dim(), g.points(), g.half_width(), tol)?;
            emit(out, &ground_state_csv(&q))?;
            eprintln!(
                "residual {:.3e} after {} iterations, Q(0) = {:.15}, ||Q||^2 = {:.15}",
                report.residual, report.iterations, report.q0, report.mass
            );
        }
        Command::OperatorsCheck { dim, grid_n, half_width, trials } => {
            let g = grid_from(&cfg, dim, grid_n, half_width)?;
            let report = commands::operators_check(&g, cli.seed, trials)?;
            emit(out, &to_json(&report)?)?;
        }
        Command::Simulate => {
            let traj = commands::simulate(&cfg)?;
            emit(out, &trajectory_csv(&traj))?;
            eprintln!(
                "{} steps, stop {:?}, mass drift {:.3e}, energy drift {:.3e}",
                traj.steps, traj.stop, traj.mass_drift, traj.energy_drift
            );
        }
        Command::Decompose { input, guess, dim, t } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let guess = commands::parse_guess(&guess, dim)?;
            let opts = cfg.experiment_config(blowup_core::coeffs::CoefficientSpec::free()).decompose;
            let state = commands::decompose_csv(&text, dim, &guess, &opts, t)?;
            emit(out, &to_json(&state)?)?;
        }
        Command::Experiment => {
            let dir = out_dir(out, &cfg);
            let files = commands::experiment(&cfg, &dir)?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Sweep { amplitudes } => {
            let dir = out_dir(out, &cfg);
            let files = commands::sweep(&cfg, &amplitudes, &dir)?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
