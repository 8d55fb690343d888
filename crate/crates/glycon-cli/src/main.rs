mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "glycon",
    version,
    about = "Model-based glycemic control: virtual trials, retrospective replay, model fitting"
)]
struct Cli {
    /// Worker threads (default: available parallelism). Results are
    /// identical regardless of this setting.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated-cohort experiment from a trial config.
    Simulate {
        /// Trial config file (TOML).
        #[arg(long)]
        config: std::path::PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: std::path::PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict the run to one protocol file.
        #[arg(long)]
        protocol: Option<std::path::PathBuf>,
    },
    /// Replay recorded patient CSVs against a protocol and the controller.
    Retro {
        /// Directory containing bg.csv, insulin.csv, nutrition.csv.
        #[arg(long)]
        data: std::path::PathBuf,
        /// Protocol table (TOML).
        #[arg(long)]
        protocol: std::path::PathBuf,
        /// Output directory.
        #[arg(long)]
        out: std::path::PathBuf,
        /// Optional replay config (TOML).
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        /// Override the replay fit seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the glucose model to one patient's recorded CSVs and print the
    /// result as JSON.
    Fit {
        /// Directory containing bg.csv, insulin.csv, nutrition.csv.
        #[arg(long)]
        data: std::path::PathBuf,
        /// Patient id to fit (defaults to the only patient present).
        #[arg(long)]
        patient: Option<u64>,
        /// Training window length in hours, anchored at the first sample.
        #[arg(long, default_value_t = 24.0)]
        window: f64,
        /// Fit seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            protocol,
        } => commands::simulate(&config, &out, seed, protocol.as_deref()),
        Command::Retro {
            data,
            protocol,
            out,
            config,
            seed,
        } => commands::retro(&data, &protocol, &out, config.as_deref(), seed),
        Command::Fit {
            data,
            patient,
            window,
            seed,
        } => commands::fit(&data, patient, window, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
