//! Sinusoidal positional encodings.
//!
//! Two instances are used: one over byte positions inside a block, one over
//! block positions inside the stream.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Standard transformer sinusoid:
/// `pe[p, 2i] = sin(p / 10000^(2i/n))`, `pe[p, 2i+1] = cos(p / 10000^(2i/n))`.
pub fn sinusoidal_pe(length: usize, n: usize) -> Result<Array2<f64>> {
    if n % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width {n} must be even")));
    }
    let mut pe = Array2::zeros((length, n));
    for p in 0..length {
        for i in 0..n / 2 {
            let rate = (p as f64) / 10_000f64.powf(2.0 * i as f64 / n as f64);
            pe[[p, 2 * i]] = rate.sin();
            pe[[p, 2 * i + 1]] = rate.cos();
        }
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_zero_alternates_zero_one() {
        let pe = sinusoidal_pe(4, 8).unwrap();
        for i in 0..4 {
            assert_eq!(pe[[0, 2 * i]], 0.0);
            assert_eq!(pe[[0, 2 * i + 1]], 1.0);
        }
    }

    #[test]
    fn entries_bounded_by_one() {
        let pe = sinusoidal_pe(64, 16).unwrap();
        assert!(pe.iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }

    #[test]
    fn first_position_first_channel_is_sin_one() {
        let pe = sinusoidal_pe(2, 8).unwrap();
        assert!((pe[[1, 0]] - 1.0f64.sin()).abs() < 1e-12);
        assert!((pe[[1, 0]] - 0.841_470_984_807_896_5).abs() < 1e-9);
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(matches!(sinusoidal_pe(4, 7), Err(Error::Config(_))));
    }
}
