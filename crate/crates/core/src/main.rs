use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use segregate::cli::{exit_code, run, Config, Experiment};
use segregate::Error;

#[derive(Parser)]
#[command(
    version,
    about = "Phase segregation experiments: vdW coexistence, convex envelopes, nonlocal minimizers, sharp-interface limits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; SEGREGATE_OUT takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for randomized inputs; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Isotherms and Maxwell coexistence for the van der Waals gas.
    Eos,
    /// Convex envelopes of the mixing free energy.
    Envelope,
    /// Local minimizers of the nonlocal energy over an eps sweep.
    Minimize,
    /// Sharp-interface optimum and its continuation to finite eps.
    Gamma,
    /// Elastic-foundation vs nonlocal energy under grid refinement.
    ElasticCheck,
    /// Critical exponent of the interface cost.
    Exponent,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Eos => Experiment::Eos,
            Command::Envelope => Experiment::Envelope,
            Command::Minimize => Experiment::Minimize,
            Command::Gamma => Experiment::Gamma,
            Command::ElasticCheck => Experiment::ElasticCheck,
            Command::Exponent => Experiment::Exponent,
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, Error> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.set("seed", s);
    }
    let out = std::env::var_os("SEGREGATE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| cli.out.clone());
    let exp = Experiment::from(cli.command);
    match cli.workers {
        Some(0) => Err(Error::Config("--workers must be positive".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("--workers: {e}")))?
            .install(|| run(exp, &config, &out)),
        None => run(exp, &config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("segregate: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
