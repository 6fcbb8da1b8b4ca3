//! Builds the per-CTU rate/distortion cache for a corpus written by the
//! `gen_maps` example, then prints a few records.
//!
//! `cargo run --release --example build_dataset [dir]`

use std::path::PathBuf;

use tba::config::RunConfig;
use tba::dataset::Split;

fn main() -> tba::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/tba-demo".into()),
    );
    let cfg = RunConfig {
        seed: Some(7),
        corpus: dir.join("frames"),
        maps: dir.join("maps"),
        cache: dir.join("tba.csv"),
        ..Default::default()
    };
    let cache = tba::pipeline::build_dataset(&cfg)?;
    let m = cache.manifest();
    println!(
        "{} records, {} train / {} test frames, distortion scale {:.4}",
        cache.len(),
        m.frames_in(Split::Train).len(),
        m.frames_in(Split::Test).len(),
        m.distortion_scale
    );
    let first = &m.frames[0];
    for qp in [22, 32, 42, 51] {
        let r = cache.get(&first.frame_id, 0, qp)?;
        println!(
            "{} CTU 0 QP {qp}: {} bits, MSE {:.3}, weighted {:.3}",
            r.frame_id, r.bits, r.mse, r.wdist
        );
    }
    Ok(())
}
