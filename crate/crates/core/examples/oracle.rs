//! Brute-force oracle allocation on a small in-memory corpus, against the
//! best single fixed QP. Shows how the optimum spends bits on important CTUs.
//!
//! `cargo run --release --example oracle [lambda]`

use tba::dataset::{build_cache_from, FrameInput};
use tba::env::{CacheSource, FrameContext, RewardParams};
use tba::eval::{fixed_qp_run, oracle_allocation};
use tba::synth::{synth_frame, synth_maps, SynthSpec};

fn main() -> tba::Result<()> {
    let lambda = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let spec = SynthSpec::corpus(3, 4, 320);
    let inputs = (0..spec.count)
        .map(|i| {
            Ok(FrameInput::in_memory(
                synth_frame(&spec, i)?,
                synth_maps(&spec, i)?,
            ))
        })
        .collect::<tba::Result<Vec<_>>>()?;
    let cache = build_cache_from(&inputs, 22, 51, 0)?;
    let params = RewardParams::new(lambda, cache.manifest().distortion_scale)?;
    let frames = inputs
        .into_iter()
        .map(|i| FrameContext::new(i.frame, i.maps))
        .collect::<tba::Result<Vec<_>>>()?;
    let src = CacheSource(&cache);

    let oracle = oracle_allocation(&frames, &src, params)?;
    let mut best_fixed = (0u8, f64::NEG_INFINITY);
    for qp in 22..=51 {
        let ret: f64 = fixed_qp_run(&frames, &src, qp)?
            .iter()
            .map(|r| r.episode_return(&params))
            .sum();
        if ret > best_fixed.1 {
            best_fixed = (qp, ret);
        }
    }
    let total: f64 = oracle.iter().map(|r| r.episode_return(&params)).sum();
    println!(
        "lambda {lambda}: oracle return {total:.3}, best fixed QP {} return {:.3}",
        best_fixed.0, best_fixed.1
    );
    for (r, ctx) in oracle.iter().zip(&frames) {
        println!("{} (BR {:.1}%)", r.frame_id, 100.0 * r.br_fraction());
        for (row, masks) in r
            .qps
            .chunks(ctx.features.grid.cols)
            .zip(ctx.features.mask_ratios.chunks(ctx.features.grid.cols))
        {
            let cells: Vec<String> = row
                .iter()
                .zip(masks)
                .map(|(q, m)| format!("{q:>2}{}", if *m > 0.5 { '*' } else { ' ' }))
                .collect();
            println!("  {}", cells.join(" "));
        }
    }
    println!("* marks CTUs with mask ratio > 0.5");
    Ok(())
}
