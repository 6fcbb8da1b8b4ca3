use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tba::config::{RunConfig, CONFIG_ENV};
use tba::pipeline;

#[derive(Parser)]
#[command(name = "tba", version, about = "Task-driven per-CTU QP allocation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    qp_min: Option<u8>,
    #[arg(long, global = true)]
    qp_max: Option<u8>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output location: maps dir for gen-maps, allocation CSV for allocate,
    /// reports dir for train and evaluate
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = all cores
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic importance/instance maps (and frames, if the spec asks)
    GenMaps {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Encode the corpus over the QP sweep, split it and save the cache
    BuildDataset,
    /// Train the agent on the cache's training split
    Train {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Greedy QP allocation for the given frames
    Allocate {
        #[arg(required = true)]
        frames: Vec<PathBuf>,
    },
    /// Compare agent, baselines and oracle on the held-out split
    Evaluate,
}

fn config(c: &Common) -> tba::Result<RunConfig> {
    let mut cfg = RunConfig::resolve(c.config.as_deref())?;
    if let Some(v) = c.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = c.qp_min {
        cfg.qp_min = v;
    }
    if let Some(v) = c.qp_max {
        cfg.qp_max = v;
    }
    if let Some(v) = &c.cache {
        cfg.cache = v.clone();
    }
    if let Some(v) = &c.model {
        cfg.model = v.clone();
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> tba::Result<()> {
    let mut cfg = config(&cli.common)?;
    let out = cli.common.out;
    match cli.command {
        Command::GenMaps { spec } => {
            if spec.is_some() {
                cfg.synth_spec = spec;
            }
            let dir = out.unwrap_or_else(|| cfg.maps.clone());
            pipeline::gen_maps(&cfg, &dir)?;
        }
        Command::BuildDataset => {
            pipeline::build_dataset(&cfg)?;
        }
        Command::Train { steps } => {
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if let Some(o) = out {
                cfg.reports = o;
            }
            pipeline::train_agent(&cfg)?;
        }
        Command::Allocate { frames } => {
            let out = out.unwrap_or_else(|| cfg.allocation_csv());
            pipeline::allocate_frames(&cfg, &frames, &out)?;
        }
        Command::Evaluate => {
            if let Some(o) = out {
                cfg.reports = o;
            }
            let ev = pipeline::evaluate_run(&cfg)?;
            print!("{}", ev.report.to_text()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
