use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trajstate::{Frame, Scheme};
use trajstate_cli::{prepare, run, CliError, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "trajstate",
    version,
    about = "Traffic state reconstruction from vehicle trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR", env = "TRAJSTATE_OUT_DIR")]
    out: Option<PathBuf>,

    /// Seed for synthetic corpora, probe selection and fold assignment.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,

    #[arg(long, global = true, value_enum)]
    frame: Option<FrameArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write a synthetic corpus and its ground-truth sidecar.
    Generate,
    /// Normalize an external trajectory table.
    Ingest,
    /// Fit the congested-region envelopes from binned data.
    Calibrate,
    /// Export per-point or per-bin estimates.
    Estimate,
    /// Run the sampling-factor x penetration-rate error grid.
    Experiment,
    /// Fit and cross-validate affine corrections of segment rates.
    Correct,
}

#[derive(ValueEnum, Clone, Copy)]
enum SchemeArg {
    Strong,
    Less,
    Nosource,
}

#[derive(ValueEnum, Clone, Copy)]
enum FrameArg {
    Lagrangian,
    Eulerian,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Ingest => Command::Ingest,
        Cmd::Calibrate => Command::Calibrate,
        Cmd::Estimate => Command::Estimate,
        Cmd::Experiment => Command::Experiment,
        Cmd::Correct => Command::Correct,
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        scheme: cli.scheme.map(|s| match s {
            SchemeArg::Strong => Scheme::StronglyStable,
            SchemeArg::Less => Scheme::LessStable,
            SchemeArg::Nosource => Scheme::NoSource,
        }),
        frame: cli.frame.map(|f| match f {
            FrameArg::Lagrangian => Frame::Lagrangian,
            FrameArg::Eulerian => Frame::Eulerian,
        }),
    };
    let result: Result<_, CliError> =
        prepare(cli.config.as_deref(), &overrides).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
