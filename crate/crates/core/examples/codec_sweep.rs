//! Rate and distortion of one synthetic frame across the QP range.
//!
//! `cargo run --release --example codec_sweep [seed]`

use tba::codec::{encode_frame, qp_to_qstep};
use tba::synth::{synth_frame, SynthSpec};

fn main() -> tba::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let spec = SynthSpec::corpus(seed, 1, 256);
    let frame = synth_frame(&spec, 0)?;
    let n = frame.grid().total();
    println!(
        "frame {} ({}x{}, {n} CTUs)",
        frame.frame_id, frame.width, frame.height
    );
    println!(
        "{:>3} {:>9} {:>10} {:>8} {:>10}",
        "QP", "Qstep", "bits", "bpp", "MSE"
    );
    for qp in (4..=51).step_by(3) {
        let coding = encode_frame(&frame, &vec![qp; n])?;
        let mse = coding.ctus.iter().map(|c| c.mse).sum::<f64>() / n as f64;
        println!(
            "{qp:>3} {:>9.3} {:>10} {:>8.4} {:>10.3}",
            qp_to_qstep(qp)?,
            coding.total_bits,
            coding.bpp,
            mse
        );
    }
    Ok(())
}
