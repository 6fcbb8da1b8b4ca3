//! Deterministic toy intra codec.
//!
//! Each 64x64 CTU is split into 8x8 blocks which are transformed with an
//! orthonormal DCT, quantized uniformly with an HEVC-style step size, and
//! costed with signed exp-Golomb code lengths. There is no prediction and
//! no context modelling, so every CTU codes independently of its neighbors.

pub mod dct;
pub mod frame;
pub mod golomb;

pub use frame::{CtuGrid, LumaFrame, Rect, CTU_PIXELS, CTU_SIZE};

use crate::error::{Error, Result};
use dct::{BLOCK, N};

pub const QP_MIN: u8 = 1;
pub const QP_MAX: u8 = 51;

/// 2^(k/6) for k = 0..6.
const SIXTH_POWERS: [f64; 6] = [
    1.0,
    1.122_462_048_309_373,
    1.259_921_049_894_873_2,
    std::f64::consts::SQRT_2,
    1.587_401_051_968_199_5,
    1.781_797_436_280_678_6,
];

/// HEVC quantizer step: `2^((qp - 4) / 6)`.
pub fn qp_to_qstep(qp: u8) -> Result<f64> {
    if !(QP_MIN..=QP_MAX).contains(&qp) {
        return Err(Error::domain(format!(
            "qp {qp} outside {QP_MIN}..={QP_MAX}"
        )));
    }
    let e = qp as i32 - 4;
    let whole = e.div_euclid(6);
    let frac = e.rem_euclid(6) as usize;
    Ok(SIXTH_POWERS[frac] * 2f64.powi(whole))
}

/// Rate and distortion of one CTU at one QP.
#[derive(Debug, Clone, PartialEq)]
pub struct CtuCoding {
    pub bits: u64,
    /// `bits / 4096`.
    pub bpp: f64,
    pub mse: f64,
    pub recon: Vec<u8>,
}

/// Forward transform of a CTU, computed once and re-quantized per QP.
#[derive(Debug, Clone)]
pub struct CtuTransform {
    source: Vec<u8>,
    coeffs: Vec<[f64; BLOCK]>,
}

const SUB_PER_ROW: usize = CTU_SIZE / N;

impl CtuTransform {
    pub fn new(ctu: &[u8]) -> Result<Self> {
        if ctu.len() != CTU_PIXELS {
            return Err(Error::domain(format!(
                "CTU must hold {CTU_PIXELS} samples, got {}",
                ctu.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(SUB_PER_ROW * SUB_PER_ROW);
        for by in 0..SUB_PER_ROW {
            for bx in 0..SUB_PER_ROW {
                let mut block = [0.0; BLOCK];
                for r in 0..N {
                    let row = (by * N + r) * CTU_SIZE + bx * N;
                    for c in 0..N {
                        block[r * N + c] = ctu[row + c] as f64;
                    }
                }
                coeffs.push(dct::forward(&block));
            }
        }
        Ok(CtuTransform {
            source: ctu.to_vec(),
            coeffs,
        })
    }

    pub fn encode(&self, qp: u8) -> Result<CtuCoding> {
        let qstep = qp_to_qstep(qp)?;
        let zz = dct::zigzag();
        let mut bits = 0u64;
        let mut recon = vec![0u8; CTU_PIXELS];
        let mut sse = 0u64;
        for (b, coeffs) in self.coeffs.iter().enumerate() {
            let mut deq = [0.0; BLOCK];
            for &pos in zz.iter() {
                // f64::round is half-away-from-zero
                let level = (coeffs[pos] / qstep).round();
                bits += golomb::se_len(level as i64) as u64;
                deq[pos] = level * qstep;
            }
            let rec = dct::inverse(&deq);
            let (bx, by) = (b % SUB_PER_ROW, b / SUB_PER_ROW);
            for r in 0..N {
                let row = (by * N + r) * CTU_SIZE + bx * N;
                for c in 0..N {
                    let v = rec[r * N + c].round().clamp(0.0, 255.0) as u8;
                    recon[row + c] = v;
                    let d = self.source[row + c] as i64 - v as i64;
                    sse += (d * d) as u64;
                }
            }
        }
        Ok(CtuCoding {
            bits,
            bpp: bits as f64 / CTU_PIXELS as f64,
            mse: sse as f64 / CTU_PIXELS as f64,
            recon,
        })
    }

    pub fn source(&self) -> &[u8] {
        &self.source
    }
}

/// Encode a single 64x64 CTU (row-major samples) at `qp`.
pub fn encode_ctu(ctu: &[u8], qp: u8) -> Result<CtuCoding> {
    qp_to_qstep(qp)?;
    CtuTransform::new(ctu)?.encode(qp)
}

#[derive(Debug, Clone)]
pub struct FrameCoding {
    pub total_bits: u64,
    /// Total bits over the padded pixel count.
    pub bpp: f64,
    pub recon: LumaFrame,
    pub ctus: Vec<CtuCoding>,
}

/// Encode a frame with one QP per CTU (raster order).
pub fn encode_frame(frame: &LumaFrame, qps: &[u8]) -> Result<FrameCoding> {
    let grid = frame.grid();
    if qps.len() != grid.total() {
        return Err(Error::domain(format!(
            "{} QPs given for {} CTUs",
            qps.len(),
            grid.total()
        )));
    }
    let mut recon = frame.clone();
    let mut ctus = Vec::with_capacity(grid.total());
    let mut total_bits = 0;
    for (i, &qp) in qps.iter().enumerate() {
        let rect = grid.rect(i);
        let coded = encode_ctu(&frame.ctu(rect), qp)?;
        for (r, row) in coded.recon.chunks_exact(CTU_SIZE).enumerate() {
            let start = (rect.y + r) * frame.width + rect.x;
            recon.samples[start..start + CTU_SIZE].copy_from_slice(row);
        }
        total_bits += coded.bits;
        ctus.push(coded);
    }
    Ok(FrameCoding {
        total_bits,
        bpp: total_bits as f64 / frame.pixel_count() as f64,
        recon,
        ctus,
    })
}
