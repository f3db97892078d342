//! `fire-lp`: config-driven local projections on county panels.

#![allow(clippy::needless_range_loop)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fire_lp::Exec;

use crate::commands::IrfFlags;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Parser, Debug)]
#[command(name = "fire-lp", version, about = "Panel local projections of county outcomes on local shocks")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "fire-lp.toml")]
    config: PathBuf,
    /// Overrides `[run] output_dir`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides `[run] threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every loop sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    /// Overrides the jackknife and synth seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the response path.
    Irf {
        /// State-dependent responses from the `[model.state]` rule.
        #[arg(long)]
        state: bool,
        /// Add first- and second-order neighbor shocks.
        #[arg(long)]
        spatial: bool,
        /// Restrict controls to clean observations.
        #[arg(long)]
        clean_controls: bool,
        /// Estimate separately above and below the attribute's median.
        #[arg(long, value_name = "ATTRIBUTE")]
        split: Option<String>,
        /// Restrict to counties whose region tag matches.
        #[arg(long, value_name = "TAG")]
        region: Option<String>,
        /// Also dump every horizon's design matrix.
        #[arg(long)]
        debug_designs: bool,
        /// Truth table from `synth`; writes a recovery report.
        #[arg(long, value_name = "CSV")]
        truth: Option<PathBuf>,
    },
    /// Point estimate of the cumulative effect.
    Cumulative,
    /// Cumulative effect with county-dropping jackknife inference.
    Jackknife,
    /// Historical employment impacts by region.
    Hei {
        /// Use a response table instead of estimating one.
        #[arg(long, value_name = "CSV")]
        irf: Option<PathBuf>,
        /// Projected burn sequence (last column used).
        #[arg(long, value_name = "CSV")]
        projection: Option<PathBuf>,
    },
    /// Generate a synthetic panel with a planted response.
    Synth {
        /// Also write an annual net-migration panel.
        #[arg(long)]
        migration: bool,
    },
}

fn run(cli: Cli) -> Result<OutputDir, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(dir) = cli.output_dir {
        cfg.run.output_dir = dir;
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = Some(t);
    }
    if cli.sequential {
        cfg.run.exec = Exec::Sequential;
    }
    if let Some(seed) = cli.seed {
        cfg.inference.jackknife.seed = seed;
        if let Some(s) = &mut cfg.synth {
            s.seed = seed;
        } else {
            cfg.synth = Some(fire_lp::synth::DgpConfig {
                seed,
                ..Default::default()
            });
        }
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = cfg.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut out = OutputDir::create(&cfg.run.output_dir)?;
    match cli.command {
        Command::Irf {
            state,
            spatial,
            clean_controls,
            split,
            region,
            debug_designs,
            truth,
        } => {
            let flags = IrfFlags {
                state,
                spatial,
                clean_controls,
                split,
                region,
                debug_designs,
                truth,
            };
            commands::irf(&cfg, &flags, &mut out)?
        }
        Command::Cumulative => commands::cumulative(&cfg, &mut out)?,
        Command::Jackknife => commands::jackknife(&cfg, &mut out)?,
        Command::Hei { irf, projection } => commands::hei(&cfg, irf.as_deref(), projection.as_deref(), &mut out)?,
        Command::Synth { migration } => commands::synth(&cfg, migration, &mut out)?,
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let files: Vec<String> = out.written().iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "status": "ok", "files": files }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
