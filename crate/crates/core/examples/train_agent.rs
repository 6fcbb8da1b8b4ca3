//! Trains the Q-network on the cache from `build_dataset` and prints the
//! training log.
//!
//! `cargo run --release --example train_agent [dir] [steps]`

use std::path::PathBuf;

use tba::config::RunConfig;

fn main() -> tba::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/tba-demo".into()));
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let mut cfg = RunConfig {
        seed: Some(7),
        cache: dir.join("tba.csv"),
        model: dir.join("agent.tbaq"),
        reports: dir.join("reports"),
        ..Default::default()
    };
    cfg.train.total_steps = steps;
    cfg.train.epsilon_decay_steps = steps * 2 / 3;
    let out = tba::pipeline::train_agent(&cfg)?;
    for row in out.log.iter().step_by((out.log.len() / 10).max(1)) {
        println!(
            "step {:>6}  epsilon {:.3}  loss {:>9}  mean return {:.3}",
            row.step,
            row.epsilon,
            row.loss.map_or("-".into(), |l| format!("{l:.4}")),
            row.mean_return
        );
    }
    println!("model written to {}", cfg.model.display());
    Ok(())
}
