//! Orthonormal 8x8 DCT-II and its inverse.
//!
//! The basis is built from tabulated `cos(m*pi/16)` constants rather than
//! `f64::cos`, so the transform produces the same bits on every platform.

use crate::error::{Error, Result};

pub const N: usize = 8;
pub const BLOCK: usize = N * N;

/// cos(m * pi / 16) for m = 0..=8.
const COS_16: [f64; 9] = [
    1.0,
    0.980_785_280_403_230_4,
    0.923_879_532_511_286_7,
    0.831_469_612_302_545_2,
    0.707_106_781_186_547_5,
    0.555_570_233_019_602_2,
    0.382_683_432_365_089_8,
    0.195_090_322_016_128_3,
    0.0,
];

fn cos_pi_16(m: usize) -> f64 {
    let m = m % 32;
    let m = if m > 16 { 32 - m } else { m };
    if m > 8 {
        -COS_16[16 - m]
    } else {
        COS_16[m]
    }
}

/// `BASIS[k][n] = a(k) * cos((2n + 1) k pi / 16)`.
fn basis() -> &'static [[f64; N]; N] {
    use std::sync::OnceLock;
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; N]; N];
        let dc = (1.0f64 / 8.0).sqrt();
        for (k, row) in b.iter_mut().enumerate() {
            let scale = if k == 0 { dc } else { 0.5 };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale * cos_pi_16((2 * n + 1) * k);
            }
        }
        b
    })
}

fn check_finite(block: &[f64; BLOCK]) -> Result<()> {
    match block.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::domain(format!(
            "non-finite sample {} at position {i}",
            block[i]
        ))),
        None => Ok(()),
    }
}

/// Forward 2-D DCT-II, row-major in and out.
pub fn dct2_8x8(block: &[f64; BLOCK]) -> Result<[f64; BLOCK]> {
    check_finite(block)?;
    Ok(forward(block))
}

/// Inverse of [`dct2_8x8`].
pub fn idct2_8x8(coeffs: &[f64; BLOCK]) -> Result<[f64; BLOCK]> {
    check_finite(coeffs)?;
    Ok(inverse(coeffs))
}

// C * X * C^T
pub(crate) fn forward(x: &[f64; BLOCK]) -> [f64; BLOCK] {
    let c = basis();
    let mut tmp = [0.0; BLOCK];
    for r in 0..N {
        for k in 0..N {
            let mut acc = 0.0;
            for n in 0..N {
                acc += c[k][n] * x[r * N + n];
            }
            tmp[r * N + k] = acc;
        }
    }
    let mut out = [0.0; BLOCK];
    for k in 0..N {
        for col in 0..N {
            let mut acc = 0.0;
            for n in 0..N {
                acc += c[k][n] * tmp[n * N + col];
            }
            out[k * N + col] = acc;
        }
    }
    out
}

// C^T * Y * C
pub(crate) fn inverse(y: &[f64; BLOCK]) -> [f64; BLOCK] {
    let c = basis();
    let mut tmp = [0.0; BLOCK];
    for r in 0..N {
        for n in 0..N {
            let mut acc = 0.0;
            for k in 0..N {
                acc += c[k][n] * y[r * N + k];
            }
            tmp[r * N + n] = acc;
        }
    }
    let mut out = [0.0; BLOCK];
    for n in 0..N {
        for col in 0..N {
            let mut acc = 0.0;
            for k in 0..N {
                acc += c[k][n] * tmp[k * N + col];
            }
            out[n * N + col] = acc;
        }
    }
    out
}

/// Zig-zag scan order for an 8x8 block (JPEG/HEVC style diagonal scan).
pub fn zigzag() -> &'static [usize; BLOCK] {
    use std::sync::OnceLock;
    static ZZ: OnceLock<[usize; BLOCK]> = OnceLock::new();
    ZZ.get_or_init(|| {
        let mut order = [0usize; BLOCK];
        let mut i = 0;
        for s in 0..(2 * N - 1) {
            let lo = s.saturating_sub(N - 1);
            let hi = s.min(N - 1);
            if s % 2 == 0 {
                // walk up-right
                for r in (lo..=hi).rev() {
                    order[i] = r * N + (s - r);
                    i += 1;
                }
            } else {
                for r in lo..=hi {
                    order[i] = r * N + (s - r);
                    i += 1;
                }
            }
        }
        order
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cos_table_matches_libm() {
        for m in 0..112 {
            let want = (m as f64 * std::f64::consts::PI / 16.0).cos();
            assert!((cos_pi_16(m) - want).abs() < 1e-13, "m={m}");
        }
    }

    #[test]
    fn constant_block_is_pure_dc() {
        let v = 37.5;
        let out = dct2_8x8(&[v; BLOCK]).unwrap();
        assert!((out[0] - 8.0 * v).abs() < 1e-12);
        for &c in &out[1..] {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_block() {
        assert_eq!(dct2_8x8(&[0.0; BLOCK]).unwrap(), [0.0; BLOCK]);
    }

    #[test]
    fn round_trip_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut x = [0.0; BLOCK];
            for v in x.iter_mut() {
                *v = rng.gen_range(-300.0..300.0);
            }
            let back = idct2_8x8(&dct2_8x8(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = [0.0; BLOCK];
        x[5] = f64::NAN;
        assert!(matches!(dct2_8x8(&x), Err(Error::Domain(_))));
        x[5] = f64::INFINITY;
        assert!(matches!(idct2_8x8(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn zigzag_is_permutation_starting_at_dc() {
        let zz = zigzag();
        let mut seen = [false; BLOCK];
        for &i in zz.iter() {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert_eq!(&zz[..6], &[0, 1, 8, 16, 9, 2]);
        assert_eq!(zz[63], 63);
    }
}
