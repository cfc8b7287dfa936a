use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gerber_shiu_cli::{parse_config, run, CliError, ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "gerber-shiu", version, about = "Gerber-Shiu penalty functions by network, Volterra and Monte Carlo solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// Directory for output files
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Overrides `run.seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `method.name`
    #[arg(long)]
    method: Option<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the penalty function with one method
    Solve(Common),
    /// Print the no-barrier value at zero surplus
    InitialValue(Common),
    /// Monte Carlo estimates at `montecarlo.u_values`
    Simulate(Common),
    /// Run two methods and report their relative differences
    Compare(Common),
    /// Run the full grid of claim laws and functionals
    Reproduce(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|source| CliError::Io {
        path: common.config.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(method) = common.method {
        cfg.method = method;
    }
    Ok(cfg)
}

fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Solve(c) => {
            let cfg = load(c)?;
            for p in run::solve(&cfg, &c.output)? {
                println!("wrote {}", p.display());
            }
        }
        Command::InitialValue(c) => {
            let cfg = load(c)?;
            let report = run::initial_value_report(&cfg)?;
            print!("{report}");
            run::write_file(&c.output.join("initial_value.csv"), &report)?;
        }
        Command::Simulate(c) => {
            let cfg = load(c)?;
            let report = run::simulate_report(&cfg)?;
            print!("{report}");
            run::write_file(&c.output.join("simulation.csv"), &report)?;
        }
        Command::Compare(c) => {
            let cfg = load(c)?;
            let cmp = run::compare(&cfg)?;
            let path = c.output.join("compare.csv");
            run::write_file(&path, &cmp.csv)?;
            println!("max_rel_err={:e} ({})", cmp.max_rel_err, path.display());
            if !cmp.converged {
                return Err(CliError::NonConvergence("training stopped before meeting its convergence criteria".into()));
            }
        }
        Command::Reproduce(c) => {
            let cfg = load(c)?;
            let converged = run::reproduce(&cfg, &c.output)?;
            println!("wrote {}", Path::new(&c.output).join("summary.csv").display());
            if !converged {
                return Err(CliError::NonConvergence("some cells stopped before meeting their convergence criteria".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
