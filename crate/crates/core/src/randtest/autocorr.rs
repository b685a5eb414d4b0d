//! Sample autocorrelation of a bit sequence.
//!
//! `R(j) = (1/n) sum_{i < n-j} (x_i - m)(x_{i+j} - m) / s2` with the sample
//! mean `m` and `s2 = m (1 - m)`, the biased (divide-by-`n`) estimator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RandTestError;
use crate::bits::BitBlock;
use crate::formats::write_atomic;

/// `R(1..=max_lag)`.
pub fn autocorrelation(bits: &BitBlock, max_lag: usize) -> Result<Vec<f64>, RandTestError> {
    let n = bits.len();
    if n < max_lag + 2 {
        return Err(RandTestError::TooShort {
            test: "autocorrelation",
            needed: max_lag + 2,
            got: n,
        });
    }
    let ones = bits.count_ones() as f64;
    let nf = n as f64;
    let mean = ones / nf;
    let var = mean * (1.0 - mean);
    if var == 0.0 {
        return Err(RandTestError::Degenerate);
    }
    // prefix_ones[j] = ones among the first j bits, suffix likewise
    let mut head = 0u64;
    let mut tail = 0u64;
    let mut out = Vec::with_capacity(max_lag);
    for j in 1..=max_lag {
        head += u64::from(bits.get(n - j));
        tail += u64::from(bits.get(j - 1));
        let len = n - j;
        let a = bits.slice(0, len);
        let b = bits.slice(j, len);
        let both = a
            .words()
            .iter()
            .zip(b.words())
            .map(|(x, y)| u64::from((x & y).count_ones()))
            .sum::<u64>() as f64;
        // sum over i < n-j of x_i is ones - head; of x_{i+j} is ones - tail
        let sum_a = ones - head as f64;
        let sum_b = ones - tail as f64;
        let cov = both - mean * (sum_a + sum_b) + len as f64 * mean * mean;
        out.push(cov / nf / var);
    }
    Ok(out)
}

pub fn max_abs(curve: &[f64]) -> f64 {
    curve.iter().fold(0.0f64, |m, r| m.max(r.abs()))
}

/// Autocorrelation curves of raw and extracted data side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrComparison {
    pub raw: Vec<f64>,
    #[serde(rename = "final")]
    pub final_: Vec<f64>,
    pub raw_max_abs: f64,
    pub final_max_abs: f64,
}

impl AutocorrComparison {
    /// Rows `(j, R_raw(j), R_final(j))`.
    pub fn write_csv(&self, path: &Path) -> Result<(), RandTestError> {
        let io = |e: csv::Error| RandTestError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["j", "r_raw", "r_final"]).map_err(io)?;
        for (j, (r, f)) in self.raw.iter().zip(&self.final_).enumerate() {
            w.write_record([(j + 1).to_string(), r.to_string(), f.to_string()])
                .map_err(io)?;
        }
        let buf = w.into_inner().map_err(|e| RandTestError::Io(e.to_string()))?;
        write_atomic(path, |out| std::io::Write::write_all(out, &buf)).map_err(|e| RandTestError::Io(e.to_string()))
    }
}

pub fn compare_raw_vs_final(
    raw: &BitBlock,
    final_bits: &BitBlock,
    max_lag: usize,
) -> Result<AutocorrComparison, RandTestError> {
    let raw_curve = autocorrelation(raw, max_lag)?;
    let final_curve = autocorrelation(final_bits, max_lag)?;
    Ok(AutocorrComparison {
        raw_max_abs: max_abs(&raw_curve),
        final_max_abs: max_abs(&final_curve),
        raw: raw_curve,
        final_: final_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Direct floating-point evaluation of the estimator.
    fn naive(bits: &[bool], max_lag: usize) -> Vec<f64> {
        let n = bits.len() as f64;
        let x: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
        let m = x.iter().sum::<f64>() / n;
        let v = m * (1.0 - m);
        (1..=max_lag)
            .map(|j| (0..x.len() - j).map(|i| (x[i] - m) * (x[i + j] - m)).sum::<f64>() / n / v)
            .collect()
    }

    #[test]
    fn alternating_sequence() {
        let n = 10_000;
        let alt: BitBlock = (0..n).map(|i| i % 2 == 1).collect();
        let r = autocorrelation(&alt, 4).unwrap();
        // the divide-by-n estimator gives -(n-1)/n at lag 1
        assert!((r[0] + 1.0).abs() <= 1.0 / n as f64 + 1e-12, "{}", r[0]);
        assert!((r[1] - 1.0).abs() <= 2.0 / n as f64 + 1e-12);
    }

    #[test]
    fn constant_sequence_is_degenerate() {
        assert_eq!(
            autocorrelation(&BitBlock::zeros(1000), 5),
            Err(RandTestError::Degenerate)
        );
        assert_eq!(
            autocorrelation(&BitBlock::zeros(1000).not(), 5),
            Err(RandTestError::Degenerate)
        );
        assert!(matches!(
            autocorrelation(&BitBlock::zeros(5), 5),
            Err(RandTestError::TooShort { .. })
        ));
    }

    #[test]
    fn ideal_data_within_gaussian_envelope() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 1_000_000;
        let bits: BitBlock = (0..n).map(|_| rng.random::<bool>()).collect();
        let r = autocorrelation(&bits, 100).unwrap();
        let envelope = 4.0 / (n as f64).sqrt();
        let inside = r.iter().filter(|v| v.abs() <= envelope).count();
        assert!(inside >= 99, "{inside}");
        assert!(r.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn identical_inputs_give_equal_curves() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let bits: BitBlock = (0..100_000).map(|_| rng.random::<bool>()).collect();
        let c = compare_raw_vs_final(&bits, &bits, 100).unwrap();
        assert_eq!(c.raw, c.final_);
        assert_eq!(c.raw_max_abs, c.final_max_abs);
    }

    #[test]
    fn csv_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let bits: BitBlock = (0..1000).map(|_| rng.random::<bool>()).collect();
        let c = compare_raw_vs_final(&bits, &bits.not(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acf.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("j,r_raw,r_final\n1,"));
    }

    proptest! {
        #[test]
        fn matches_naive_and_flip_symmetric(
            bits in proptest::collection::vec(any::<bool>(), 40..400),
            lag in 1usize..30,
        ) {
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let block: BitBlock = bits.iter().copied().collect();
            let fast = autocorrelation(&block, lag).unwrap();
            let slow = naive(&bits, lag);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
            let flipped = autocorrelation(&block.not(), lag).unwrap();
            for (a, b) in fast.iter().zip(&flipped) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
