//! Evaluates the model from `train_agent` on the held-out frames: agent,
//! equivalent-rate and equivalent-distortion baselines, and the oracle.
//!
//! `cargo run --release --example evaluate [dir]`

use std::path::PathBuf;

use tba::config::RunConfig;

fn main() -> tba::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/tba-demo".into()),
    );
    let cfg = RunConfig {
        seed: Some(7),
        cache: dir.join("tba.csv"),
        model: dir.join("agent.tbaq"),
        reports: dir.join("reports"),
        task: "demo".into(),
        ..Default::default()
    };
    let ev = tba::pipeline::evaluate_run(&cfg)?;
    print!("{}", ev.report.to_text()?);
    for r in &ev.proposed {
        println!("{}: QPs {:?}", r.frame_id, r.qps);
    }
    println!("report: {}", cfg.report_csv().display());
    Ok(())
}
