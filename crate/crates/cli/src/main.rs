use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hcebnn_cli::commands::{cmd_generate, cmd_invert, cmd_predict, cmd_sweep, cmd_train};
use hcebnn_cli::output::{POSTERIOR_FILE, TRACE_FILE};
use hcebnn_cli::sweep::SweepAxis;
use hcebnn_cli::RunConfig;

#[derive(Parser)]
#[command(name = "hcebnn", version, about = "Physics-regularized Bayesian surrogates for heat conduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the data and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `training.lambda`.
    #[arg(long)]
    lambda: Option<f64>,
    /// Overrides `evaluation.samples`.
    #[arg(long)]
    samples: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.data.seed = s;
            cfg.training.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.training.lambda = l;
        }
        if let Some(s) = self.samples {
            cfg.evaluation.samples = s;
        }
        cfg.validate()?;
        let out = self.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write observation, collocation and truth CSVs.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a posterior and write it with its trace and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding a generated data set; generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predictive mean and std on a grid.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Posterior file; defaults to `<out>/posterior.json`.
        #[arg(long)]
        posterior: Option<PathBuf>,
        /// Truth CSV whose locations replace the configured grid.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Identify boundary fluxes or convection coefficients, or summarize
    /// a diffusivity trace.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        posterior: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Repeat training along one configuration axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// observation_count, placement, collocation_count or noise.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values along the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, out) = common.load()?;
            let dir = cmd_generate(&cfg, &out)?;
            println!("wrote {}", dir.display());
        }
        Command::Train { common, data } => {
            let (cfg, out) = common.load()?;
            let m = cmd_train(&cfg, data.as_deref(), &out)?;
            println!(
                "rmse {:.6} K  r2 {:.6}  coverage {:.3}",
                m.metrics.rmse, m.metrics.r_squared, m.coverage_2sigma
            );
            if let Some(a) = m.alpha {
                println!("alpha {:.6e} +- {:.3e} m2/s", a.mean, a.std);
            }
            println!("wrote {}", out.display());
        }
        Command::Predict { common, posterior, truth } => {
            let (cfg, out) = common.load()?;
            let post = posterior.unwrap_or_else(|| out.join(POSTERIOR_FILE));
            let m = cmd_predict(&cfg, &post, truth.as_deref(), cfg.evaluation.samples, &out)
                .with_context(|| format!("predicting from {}", post.display()))?;
            if let Some(m) = m {
                println!("rmse {:.6} K  r2 {:.6}", m.metrics.rmse, m.metrics.r_squared);
            }
            println!("wrote {}", out.display());
        }
        Command::Invert { common, posterior, trace } => {
            let (cfg, out) = common.load()?;
            let (posterior, trace) = if posterior.is_none() && trace.is_none() {
                let p = existing(out.join(POSTERIOR_FILE)).filter(|_| !cfg.inversion.targets.is_empty());
                let t = existing(out.join(TRACE_FILE)).filter(|_| cfg.training.alpha_mode.scale().is_some());
                (p, t)
            } else {
                (posterior, trace)
            };
            let id = cmd_invert(&cfg, posterior.as_deref(), trace.as_deref(), &out)?;
            for b in &id.boundaries {
                println!("{} {:.6} +- {:.6}", b.facet, b.mean, b.std);
            }
            if let Some(a) = id.alpha {
                println!("alpha {:.6e} +- {:.3e} m2/s", a.mean, a.std);
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { common, axis, values, repeats } => {
            let (cfg, out) = common.load()?;
            let rows = cmd_sweep(&cfg, axis, &values, repeats, &out)?;
            for r in rows {
                println!(
                    "{axis}={} runs {} failed {} median r2 {}",
                    r.value,
                    r.runs,
                    r.failures,
                    r.median_r_squared.map_or("-".into(), |v| format!("{v:.6}"))
                );
            }
            println!("wrote {}", Path::new(&out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
