use clap::{Parser, Subcommand};
use dephasing_runner::{config, exit, oracle, preset, run, RunOptions, RunnerError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dephasing-runner", version, about = "Impurity-qubit thermometry sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow the weak channel at |kFa| > 0.5.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file.
    Run { config: PathBuf },
    /// Run a named preset (fig2, fig3, fig4a-d, figS1-S4).
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the preset config and exit.
        #[arg(long)]
        print: bool,
    },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// Compare the determinant engine with brute-force Fock-space traces.
    OracleCheck,
}

fn finish(result: Result<dephasing_runner::Manifest, RunnerError>) -> i32 {
    match result {
        Ok(m) => {
            for p in m.points.iter().filter(|p| p.error.is_some()) {
                eprintln!(
                    "failed: {} kFa={} T={} {}: {}",
                    p.geometry,
                    p.kfa,
                    p.temperature,
                    p.channel,
                    p.error.as_deref().unwrap_or("")
                );
            }
            println!("{} points, {} failed, {} files", m.points.len(), m.failures(), m.files.len());
            if m.failures() > 0 {
                exit::PARTIAL_FAILURE
            } else {
                exit::OK
            }
        }
        Err(RunnerError::Config(e)) => {
            eprintln!("config error: {e}");
            exit::CONFIG_ERROR
        }
        Err(e) => {
            eprintln!("{e}");
            exit::PARTIAL_FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions {
        workers: cli.workers,
        seed: cli.seed,
        force: cli.force,
        cache_dir: None,
    };
    let code = match cli.command {
        Command::Run { config } => match config::load(&config) {
            Ok(c) => {
                for w in &c.warnings {
                    eprintln!("warning: {w}");
                }
                finish(run(&c, &opts))
            }
            Err(e) => {
                eprintln!("config error: {e}");
                exit::CONFIG_ERROR
            }
        },
        Command::Preset { name, out, print } => match preset::preset(&name) {
            Some(mut c) => {
                if let Some(dir) = out {
                    c.output_dir = dir;
                }
                if print {
                    print!("{}", c.to_ini());
                    exit::OK
                } else {
                    finish(run(&c, &opts))
                }
            }
            None => {
                eprintln!("unknown preset `{name}`; available: {}", preset::PRESETS.join(", "));
                exit::CONFIG_ERROR
            }
        },
        Command::Validate { config } => match config::load(&config).and_then(|c| c.validate(cli.force).map(|_| c)) {
            Ok(c) => {
                let channels = if c.channel == config::ChannelSelection::Both { 2 } else { 1 };
                println!(
                    "ok: {} sweep points",
                    c.geometries.len() * c.couplings.len() * c.temperatures.len() * channels
                );
                exit::OK
            }
            Err(e) => {
                eprintln!("config error: {e}");
                exit::CONFIG_ERROR
            }
        },
        Command::OracleCheck => match oracle::oracle_check(25, 2024) {
            Ok(r) => {
                println!(
                    "{} bases, {} points, max |det - Fock| = {:.2e}",
                    r.bases, r.points, r.max_error
                );
                if r.passed() {
                    exit::OK
                } else {
                    exit::ORACLE_MISMATCH
                }
            }
            Err(e) => {
                eprintln!("oracle check failed: {e}");
                exit::ORACLE_MISMATCH
            }
        },
    };
    ExitCode::from(code as u8)
}
