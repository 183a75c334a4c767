use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlwave::harness::{
    convergence_sweep, load_config, reference_config, run_experiment, ExperimentConfig, SweepAxis, TaskKind,
    WORKERS_ENV,
};

#[derive(Parser)]
#[command(name = "nlwave", version, about = "Recover wave nonlinearities from simulated boundary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// experiment file (TOML); defaults are used when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory, overriding `output` in the config
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// dotted key=value, e.g. `grid.cells=64`; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// validate the configuration and exit
    #[arg(long)]
    check_only: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the semilinear problem and write the boundary trace
    Forward(Common),
    /// Riccati conservation and beam residual slopes
    BeamVerify(Common),
    /// Interaction-sum table over (r0, ς)
    CovectorVerify(Common),
    /// Stencil derivative of the boundary map against the cascade
    LinearizeVerify(Common),
    /// Fit the stationary-phase constant on a reference bump
    Calibrate(Common),
    /// Recover h_k at q0
    Recover(Common),
    /// Recover h_3, h_4, … in turn
    Ladder(Common),
    /// Rerun with a scaled parameter and report observed orders
    Sweep {
        #[command(flatten)]
        common: Common,
        /// grid, rho, epsilon or step
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        factors: Vec<f64>,
    },
    /// Print the default configuration with every field spelled out
    ReferenceConfig,
}

fn load(common: &Common, task: Option<TaskKind>) -> nlwave::Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(t) = task {
        overrides.insert(0, format!("task = \"{}\"", t.name()));
    }
    let cfg = match &common.config {
        Some(p) => load_config(p, &overrides)?,
        None => nlwave::harness::parse_config("", &overrides)?,
    };
    Ok(cfg)
}

fn init_pool(common: &Common, cfg: &ExperimentConfig) {
    if let Some(n) = common.workers.or(cfg.workers) {
        // a second initialisation only happens in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(cli: Cli) -> nlwave::Result<bool> {
    let (common, task) = match &cli.command {
        Command::ReferenceConfig => {
            print!("{}", reference_config());
            return Ok(true);
        }
        Command::Forward(c) => (c, Some(TaskKind::Forward)),
        Command::BeamVerify(c) => (c, Some(TaskKind::BeamVerify)),
        Command::CovectorVerify(c) => (c, Some(TaskKind::CovectorVerify)),
        Command::LinearizeVerify(c) => (c, Some(TaskKind::LinearizeVerify)),
        Command::Calibrate(c) => (c, Some(TaskKind::Calibrate)),
        Command::Recover(c) => (c, Some(TaskKind::Recover)),
        Command::Ladder(c) => (c, Some(TaskKind::Ladder)),
        Command::Sweep { common, .. } => (common, None),
    };
    let cfg = load(common, task)?;
    if common.check_only {
        println!("config ok, fingerprint {}", cfg.fingerprint());
        return Ok(true);
    }
    init_pool(common, &cfg);
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    if let Command::Sweep { axis, factors, .. } = &cli.command {
        let table = convergence_sweep(&cfg, *axis, factors)?;
        std::fs::create_dir_all(&out)?;
        let path = out.join("convergence.csv");
        table.write(&path)?;
        println!("wrote {}", path.display());
        return Ok(true);
    }
    let record = run_experiment(&cfg, &out)?;
    for c in &record.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("outputs in {}", out.display());
    Ok(record.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
