//! Library side of the `navsst` command-line pipeline.

pub mod artifact;
pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use commands::Ctx;
use config::RunConfig;
use navsst::Error;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "navsst", version, about = "Navigation-error inference for historical ship tracks")]
pub struct Cli {
    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "navsst-out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, segment and classify tracks; detect fixes.
    Ingest,
    /// Generate a synthetic fleet from the generative model.
    Synth,
    /// Fit the state-space model to every selected track.
    Fit,
    /// Pool per-track scale parameters into population hyperparameters.
    Pool,
    /// Forward-simulate position ensembles for smooth tracks.
    Simulate,
    /// Propagate position ensembles through SST fields and bin maps.
    Sst,
    /// Fit the linearized jump-variance model.
    Lincheck {
        /// Jump record CSV to use instead of the ingested tracks.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Draw posterior predictive replicate tracks.
    Ppc,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Init(_) | Error::Model { .. } | Error::Diagnostics(_) | Error::Fit { .. } => 4,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> navsst::Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::config("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| Error::config(e.to_string()))?;
    }
    let ctx = Ctx::new(cfg, cli.out_dir);
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Pool => commands::pool_cmd(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Sst => commands::sst(&ctx),
        Command::Lincheck { records } => commands::lincheck(&ctx, records.as_deref()),
        Command::Ppc => commands::ppc(&ctx),
    }
}

/// Parse arguments and run; returns the exit code and the message for
/// stdout (success) or stderr (failure).
pub fn run_args<I, T>(args: I) -> (u8, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => return (e.exit_code().clamp(0, 255) as u8, e.to_string()),
    };
    match run(cli) {
        Ok(msg) => (0, msg),
        Err(e) => (exit_code(&e), format!("navsst: {e}")),
    }
}
