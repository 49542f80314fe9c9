use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eit_cli::commands::{self, Reference};
use eit_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "eit",
    version,
    about = "2D EIT simulation and reconstruction pipeline"
)]
struct Cli {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the forward and inverse meshes with electrodes.
    Mesh,
    /// Simulate reference, object and noisy difference frames.
    Simulate,
    /// Reconstruct from a voltage file.
    Reconstruct {
        /// Voltage frames; defaults to `<out>/dv_noisy.txt`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// RE, PSNR and profiles of a reconstruction history.
    Evaluate {
        /// Element history; defaults to `<out>/recon_history.txt`.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Pixel truth; defaults to `<out>/truth_pixels.txt`.
        #[arg(long, conflicts_with = "reference")]
        truth: Option<PathBuf>,
        /// Compare against the final iterate of another reconstruction.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Reconstruct over the configured λ/ρ × δ grid.
    Sweep,
    /// Render element or pixel values to 16-bit PGM.
    Render {
        /// Defaults to `<out>/recon_field.txt`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load(&cli)?;
    match cli.command {
        Command::Mesh => commands::mesh(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Reconstruct { data } => {
            for (t, reason) in commands::reconstruct(&cfg, data.as_deref())?
                .iter()
                .enumerate()
            {
                eprintln!("frame {t}: stopped by {reason}");
            }
            Ok(())
        }
        Command::Evaluate {
            result,
            truth,
            reference,
        } => {
            let reference = reference
                .map(Reference::Result)
                .or(truth.map(Reference::Truth));
            commands::evaluate(&cfg, result.as_deref(), reference)
        }
        Command::Sweep => {
            let cells = commands::sweep(&cfg)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            if failed > 0 {
                eprintln!(
                    "{failed} of {} sweep cells failed; see sweep.csv",
                    cells.len()
                );
            }
            Ok(())
        }
        Command::Render { input } => {
            for stem in commands::render(&cfg, input.as_deref())? {
                eprintln!("wrote {}", stem.with_extension("pgm").display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
