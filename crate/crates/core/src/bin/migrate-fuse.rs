use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use migrate_fuse::commands;
use migrate_fuse::config::RunConfig;
use migrate_fuse::Error;

#[derive(Parser)]
#[command(name = "migrate-fuse", version, about = "Block-group migration matrices from address histories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `harmonize.cbg_populations=false`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Address histories to address-level matrices, one file per year
    ProcessRecords(Common),
    /// Crosswalk and harmonize raw matrices against the constraints
    Harmonize(Common),
    /// Compare harmonized matrices with reference matrices
    Validate(Common),
    /// Perturbation recovery experiments on a synthetic world
    SynthEval(Common),
    /// Category, distance, boundary and mobility tables
    Analyze(Common),
    /// Drop mover entries of low-diversity origins
    Redact(Common),
    /// Write a synthetic input set and matching config
    GenFixture(Common),
}

fn threads() -> Result<Option<usize>, Error> {
    match std::env::var("MIGRATE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidInput(format!("MIGRATE_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = threads()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let (common, f): (&Common, fn(&RunConfig) -> migrate_fuse::Result<_>) = match &cli.command {
        Command::ProcessRecords(c) => (c, commands::cmd_process_records),
        Command::Harmonize(c) => (c, commands::cmd_harmonize),
        Command::Validate(c) => (c, commands::cmd_validate),
        Command::SynthEval(c) => (c, commands::cmd_synth_eval),
        Command::Analyze(c) => (c, commands::cmd_analyze),
        Command::Redact(c) => (c, commands::cmd_redact),
        Command::GenFixture(c) => (c, commands::cmd_gen_fixture),
    };
    let config = RunConfig::load(&common.config, &common.overrides)?;
    let m = f(&config)?;
    log::info!("{}: wrote {} files", m.command, m.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
