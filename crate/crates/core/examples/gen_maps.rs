//! Writes a synthetic corpus (frames, importance and instance maps).
//!
//! `cargo run --release --example gen_maps [dir] [count] [side]`

use std::path::PathBuf;

use tba::config::RunConfig;
use tba::synth::SynthSpec;

fn main() -> tba::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/tba-demo".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let side = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);

    std::fs::create_dir_all(&dir).map_err(|e| tba::Error::io(&dir, e))?;
    let spec_path = dir.join("spec.json");
    let spec = serde_json::to_string_pretty(&SynthSpec::corpus(0, count, side)).unwrap();
    tba::io::write_string_atomic(&spec_path, &spec)?;

    let cfg = RunConfig {
        seed: Some(7),
        corpus: dir.join("frames"),
        maps: dir.join("maps"),
        synth_spec: Some(spec_path),
        ..Default::default()
    };
    let n = tba::pipeline::gen_maps(&cfg, &cfg.maps)?;
    println!(
        "{n} frames in {}, maps in {}",
        cfg.corpus.display(),
        cfg.maps.display()
    );
    Ok(())
}
