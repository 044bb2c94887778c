use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simshield::runner::{self, RunError, RunOutcome, Scenario, EXIT_VALIDATION};
use simshield::SymmetryKind;

/// Decoherence of singly-excited multipartite systems under local pulse modulation.
///
/// Worker threads default to one per core; set SIMSHIELD_THREADS to override.
#[derive(Parser)]
#[command(name = "simshield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fidelity factors and J(t): fidelity.csv, jmatrix.csv.
    Simulate(Common),
    /// Deviation of J(t) from a target symmetry: symmetry.csv.
    Symmetry {
        #[command(flatten)]
        common: Common,
        /// ICP, IIP or IIT; defaults to the scenario's target.
        #[arg(long)]
        target: Option<SymmetryKind>,
    },
    /// Pulse search: optimized.scenario, trace.csv. Exit code 4 if not converged.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<SymmetryKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximal objective evaluations (at least 50).
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
    /// Discretized-bath comparison: oracle.csv.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Bath modes (at least 500).
        #[arg(long, default_value_t = 2000)]
        modes: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped scenario: fig2_global, fig2_iip, fig2_iit, fig2_unmodulated.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<Scenario, RunError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => runner::parse_scenario(path),
            (None, Some(name)) => runner::preset(name),
            (None, None) => Err(RunError::Validation("either --config or --preset is required".into())),
        }
    }
}

fn configure_threads() -> Result<(), RunError> {
    let Ok(v) = std::env::var("SIMSHIELD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| RunError::Validation(format!("SIMSHIELD_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::Validation(e.to_string()))
}

fn run(cli: Cli) -> Result<RunOutcome, RunError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => runner::cmd_simulate(&c.scenario()?, &c.out),
        Command::Symmetry { common, target } => {
            let s = common.scenario()?;
            let target = target.unwrap_or(s.symmetry.target);
            runner::cmd_symmetry(&s, target, &common.out)
        }
        Command::Optimize {
            common,
            target,
            seed,
            budget,
        } => {
            let s = common.scenario()?;
            let target = target.unwrap_or(s.symmetry.target);
            runner::cmd_optimize(&s, target, budget, seed, &common.out)
        }
        Command::Oracle { common, modes } => runner::cmd_oracle(&common.scenario()?, modes, &common.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for p in &outcome.outputs {
                println!("{}", p.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("simshield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
