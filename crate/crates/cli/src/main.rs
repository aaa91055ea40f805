//! `metascreen`: capacitance analysis, reflection spectra and shape optimization of periodic
//! resonator screens above a sound-soft wall.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{Context, Failure, SpectrumModel};

#[derive(Parser, Debug)]
#[command(name = "metascreen", version, about)]
struct Cli {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for the CSV output (overrides `output.dir`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Worker threads for parallel sweeps.
    #[arg(long, global = true, env = "METASCREEN_THREADS")]
    threads: Option<usize>,

    /// Optimizer seed (overrides `optimizer.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Capacitance matrix, volumes, moments and generalized eigenpairs.
    Capmat,
    /// Reduced-model resonant frequencies and radiative widths.
    Resonances,
    /// Reflection spectrum over the band.
    Spectrum {
        #[arg(long, value_enum, default_value_t = ModelArg::Rom)]
        model: ModelArg,
    },
    /// Shape optimization of the configured design.
    Optimize,
    /// Analytic shape gradients against central finite differences.
    CheckGrad,
    /// Convergence table of the periodic Green's functions.
    GreensTest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Rom,
    Exact,
    Both,
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    let mut raw = config::load(cli.config.as_deref())?;
    if let Some(dir) = cli.output_dir {
        raw.output.dir = dir;
    }
    if let Some(seed) = cli.seed {
        raw.optimizer.seed = seed;
    }
    let run = config::resolve(raw)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config(config::ConfigError(vec!["--threads must be at least 1".into()])));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let dir = run.config.output.dir.clone();
    commands::ensure_dir(&dir)?;
    let name = match &cli.command {
        Command::Capmat => "capmat",
        Command::Resonances => "resonances",
        Command::Spectrum { .. } => "spectrum",
        Command::Optimize => "optimize",
        Command::CheckGrad => "check-grad",
        Command::GreensTest => "greens-test",
    };
    let ctx = Context { run, dir, command: name.into() };
    match cli.command {
        Command::Capmat => commands::capmat(&ctx),
        Command::Resonances => commands::resonances(&ctx),
        Command::Spectrum { model } => commands::spectrum(
            &ctx,
            match model {
                ModelArg::Rom => SpectrumModel::Rom,
                ModelArg::Exact => SpectrumModel::Exact,
                ModelArg::Both => SpectrumModel::Both,
            },
        ),
        Command::Optimize => commands::optimize(&ctx),
        Command::CheckGrad => commands::check_grad(&ctx),
        Command::GreensTest => commands::greens_test(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
