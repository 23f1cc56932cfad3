//! `surge`: run the post-outage surge pipeline stage by stage.
//!
//! Exit status: 0 success, 1 runtime error, 2 configuration error.

mod config;
mod out;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use surge_core::projection::{TempBin, WindowName};

use config::{ConfigError, RunConfig};
use out::{write_manifest, Layout};
use stages::{Ctx, ProjectArgs};

#[derive(Parser)]
#[command(name = "surge", version, about = "Post-outage load surge analysis pipeline")]
struct Cli {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides SURGE_OUT_DIR and the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker thread cap; overrides SURGE_THREADS and the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic city.
    Synth,
    /// Per-event surge ratios and penetration rates.
    Metrics,
    /// Band statistics, rank tests, thresholds and bootstrap comparisons.
    Empirics,
    /// Causal-forest effects of penetration on surge.
    Causal,
    /// Train the multi-task surge estimator.
    Train,
    /// Estimator responses along configured covariate axes.
    Sweep,
    /// One restoration scenario.
    Project {
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long, value_parser = parse_window)]
        window: Option<WindowName>,
        #[arg(long, value_parser = parse_temp_bin)]
        temp_bin: Option<TempBin>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Estimator file; defaults to model.bin in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Result file; defaults to projection.json in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Apply the per-event mitigation factors.
        #[arg(long)]
        mitigated: bool,
    },
    /// Per-event mitigation factors.
    Mitigate {
        /// Policy file (JSON with `ev`, `thermostat`, `der`); defaults to the config block.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Factor table; defaults to mitigation_factors.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window × duration × α projection table, unmitigated and mitigated.
    Report,
    /// Every stage in order.
    Pipeline,
}

fn parse_window(s: &str) -> std::result::Result<WindowName, String> {
    s.parse().map_err(|e: surge_core::error::Error| e.to_string())
}

fn parse_temp_bin(s: &str) -> std::result::Result<TempBin, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown temperature bin {s:?} (any, cold, cool, mild, hot)"))
}

fn env_override<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    match std::env::var(name) {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map(Some)
            .map_err(|_| ConfigError(format!("{name}: cannot parse {v:?}")).into()),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(d) = cli.out_dir.or(env_override::<PathBuf>("SURGE_OUT_DIR")?) {
        cfg.output_dir = d;
    }
    if let Some(t) = cli.threads.or(env_override::<usize>("SURGE_THREADS")?) {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(ConfigError("thread cap must be >= 1".into()).into());
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let ctx = Ctx {
        layout: Layout::new(cfg.output_dir.clone()),
        cfg,
    };
    let name = match &cli.command {
        Command::Synth => {
            stages::synth(&ctx)?;
            "synth"
        }
        Command::Metrics => {
            stages::metrics(&ctx)?;
            "metrics"
        }
        Command::Empirics => {
            stages::empirics(&ctx)?;
            "empirics"
        }
        Command::Causal => {
            stages::causal(&ctx)?;
            "causal"
        }
        Command::Train => {
            stages::train(&ctx)?;
            "train"
        }
        Command::Sweep => {
            stages::sweep(&ctx)?;
            "sweep"
        }
        Command::Project {
            trajectory,
            window,
            temp_bin,
            duration,
            alpha,
            draws,
            seed,
            model,
            out,
            mitigated,
        } => {
            stages::project_one(
                &ctx,
                &ProjectArgs {
                    trajectory: trajectory.clone(),
                    window: *window,
                    temp_bin: *temp_bin,
                    duration_h: *duration,
                    alpha: *alpha,
                    draws: *draws,
                    seed: *seed,
                    model: model.clone(),
                    out: out.clone(),
                    mitigated: *mitigated,
                },
            )?;
            "project"
        }
        Command::Mitigate { policy, out } => {
            let policies = match policy {
                Some(p) => stages::load_policies(p)?,
                None => ctx.cfg.mitigation,
            };
            stages::mitigate(&ctx, &policies, out.as_deref())?;
            "mitigate"
        }
        Command::Report => {
            stages::report(&ctx)?;
            "report"
        }
        Command::Pipeline => {
            stages::synth(&ctx)?;
            stages::metrics(&ctx)?;
            stages::empirics(&ctx)?;
            stages::causal(&ctx)?;
            stages::train(&ctx)?;
            stages::sweep(&ctx)?;
            stages::mitigate(&ctx, &ctx.cfg.mitigation, None)?;
            stages::project_one(&ctx, &ProjectArgs::defaults())?;
            stages::report(&ctx)?;
            "pipeline"
        }
    };
    write_manifest(&ctx.layout, &ctx.cfg, name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("surge: error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
