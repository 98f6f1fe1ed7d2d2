use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use unfitted::experiment::{run_experiment, ExperimentConfig, ExperimentKind, MeshConfig, Preset, RunOptions};

#[derive(Parser)]
#[command(name = "unfitted", version, about = "Unfitted finite-element experiments for elastic inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the mesh section with a preset size.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Progress on stderr and multigrid residual histories.
        #[arg(long)]
        verbose: bool,
    },
    /// Print the default config of an experiment.
    Init {
        #[arg(value_enum)]
        experiment: ExperimentArg,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Convergence,
    Preconditioners,
    MultiInclusion,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Convergence => ExperimentKind::Convergence,
            ExperimentArg::Preconditioners => ExperimentKind::Preconditioners,
            ExperimentArg::MultiInclusion => ExperimentKind::MultiInclusion,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run { config, output_dir, seed, preset, verbose } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output.dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = preset {
                cfg.mesh = MeshConfig::preset(cfg.experiment, p.into());
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg, &RunOptions { verbose })
                .with_context(|| format!("running {}", config.display()))?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
            for msg in &outcome.failures {
                eprintln!("row failed: {msg}");
            }
            Ok(outcome.exit_code())
        }
        Command::Init { experiment, preset } => {
            print!("{}", ExperimentConfig::preset(experiment.into(), preset.into()).to_toml_string());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
