//! Bit-length accounting for order-0 exp-Golomb codes.

/// Length in bits of the unsigned order-0 exp-Golomb code for `k`.
#[inline]
pub fn ue_len(k: u64) -> u32 {
    // k + 1 written in binary, preceded by (bit length - 1) zeros
    let bits = 64 - (k + 1).leading_zeros();
    2 * bits - 1
}

/// Signed mapping used by H.264/HEVC `se(v)`: v > 0 -> 2v - 1, v <= 0 -> -2v.
#[inline]
pub fn se_map(v: i64) -> u64 {
    if v > 0 {
        (2 * v - 1) as u64
    } else {
        v.unsigned_abs() * 2
    }
}

/// Length in bits of the signed order-0 exp-Golomb code for `v`.
#[inline]
pub fn se_len(v: i64) -> u32 {
    ue_len(se_map(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_lengths() {
        assert_eq!(ue_len(0), 1);
        assert_eq!(ue_len(1), 3);
        assert_eq!(ue_len(2), 3);
        assert_eq!(ue_len(3), 5);
        assert_eq!(ue_len(6), 5);
        assert_eq!(ue_len(7), 7);
        assert_eq!(se_len(0), 1);
        assert_eq!(se_len(1), 3);
        assert_eq!(se_len(-1), 3);
        assert_eq!(se_len(2), 5);
        assert_eq!(se_len(-2), 5);
    }

    #[test]
    fn length_matches_string_construction() {
        for k in 0..5000u64 {
            let s = format!("{:b}", k + 1);
            assert_eq!(ue_len(k) as usize, 2 * s.len() - 1);
        }
    }

    #[test]
    fn monotone_in_magnitude() {
        for v in 0..1000i64 {
            assert!(se_len(v + 1) >= se_len(v));
            assert!(se_len(-(v + 1)) >= se_len(-v));
        }
    }
}
