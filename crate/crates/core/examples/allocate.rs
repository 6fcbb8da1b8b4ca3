//! Greedy per-CTU QPs for individual frames, encoded live (no cache).
//! Uses the model from `train_agent`, or an untrained one if absent.
//!
//! `cargo run --release --example allocate [dir] [frame.pgm ...]`

use std::path::PathBuf;

use tba::agent::{load_model, QNetwork};
use tba::dataset::{importance_path, instance_path, load_frame_input};
use tba::env::{FrameContext, LiveSource, RewardParams};

fn main() -> tba::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/tba-demo".into()));
    let mut frames: Vec<PathBuf> = args.map(PathBuf::from).collect();
    if frames.is_empty() {
        frames.push(dir.join("frames/synth_0000.pgm"));
    }
    let model = dir.join("agent.tbaq");
    let net = if model.exists() {
        load_model(&model)?
    } else {
        println!(
            "no model at {}, using an untrained network",
            model.display()
        );
        QNetwork::new(Default::default(), 0)
    };
    let maps = dir.join("maps");
    let contexts = frames
        .iter()
        .map(|p| {
            let id = tba::codec::frame::frame_id_from_path(p);
            let input = load_frame_input(
                p,
                &importance_path(&maps, &id),
                Some(&instance_path(&maps, &id)),
            )?;
            FrameContext::new(input.frame, input.maps)
        })
        .collect::<tba::Result<Vec<_>>>()?;
    let params = RewardParams::new(1.0, 1.0)?;
    for r in tba::eval::agent_run(&net, &contexts, &LiveSource, params)? {
        let cols = contexts
            .iter()
            .find(|c| c.frame_id() == r.frame_id)
            .unwrap()
            .features
            .grid
            .cols;
        println!(
            "{}: {:.4} bpp (anchor {:.4})",
            r.frame_id, r.bpp, r.anchor_bpp
        );
        for row in r.qps.chunks(cols) {
            println!(
                "  {}",
                row.iter()
                    .map(|q| format!("{q:>2}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }
    Ok(())
}
