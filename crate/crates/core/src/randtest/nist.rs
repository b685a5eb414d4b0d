//! Five frequency and run-structure tests following the public SP 800-22
//! definitions: monobit, block frequency, runs, longest run of ones and
//! cumulative sums.
//!
//! Each test returns its statistic and a P-value in `[0, 1]`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use super::RandTestError;
use crate::bits::BitBlock;

/// Minimum input lengths.
pub const MIN_BITS: usize = 100;
pub const MIN_BITS_LONGEST_RUN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

fn require(test: &'static str, bits: &BitBlock, needed: usize) -> Result<usize, RandTestError> {
    if bits.len() < needed {
        return Err(RandTestError::TooShort {
            test,
            needed,
            got: bits.len(),
        });
    }
    Ok(bits.len())
}

/// Upper regularized incomplete gamma `Q(a, x)`, defined as 1 at `x = 0`.
pub(crate) fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x).clamp(0.0, 1.0)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Frequency test. Statistic: `|S_n| / sqrt(n)`.
pub fn monobit_test(bits: &BitBlock) -> Result<TestOutcome, RandTestError> {
    let n = require("monobit", bits, MIN_BITS)? as f64;
    let s = 2.0 * bits.count_ones() as f64 - n;
    let s_obs = s.abs() / n.sqrt();
    Ok(TestOutcome {
        statistic: s_obs,
        p_value: erfc(s_obs / std::f64::consts::SQRT_2),
    })
}

/// Frequency within blocks of `block_len` bits. Statistic: chi-square.
pub fn block_frequency_test(bits: &BitBlock, block_len: usize) -> Result<TestOutcome, RandTestError> {
    let n = require("block frequency", bits, MIN_BITS)?;
    if block_len == 0 || block_len > n {
        return Err(RandTestError::BadParameter(format!(
            "block length {block_len} for {n} bits"
        )));
    }
    let blocks = n / block_len;
    let m = block_len as f64;
    let chi: f64 = (0..blocks)
        .map(|i| {
            let pi = bits.slice(i * block_len, block_len).count_ones() as f64 / m;
            (pi - 0.5) * (pi - 0.5)
        })
        .sum::<f64>()
        * 4.0
        * m;
    Ok(TestOutcome {
        statistic: chi,
        p_value: igamc(blocks as f64 / 2.0, chi / 2.0),
    })
}

/// Block length for [`block_frequency_test`] giving fewer than 100 blocks
/// of at least 20 bits.
pub fn default_block_len(n: usize) -> usize {
    n.div_ceil(99).max(20)
}

/// Runs test. Statistic: total number of runs `V_n`.
///
/// A sequence failing the frequency prerequisite `|pi - 1/2| < 2 / sqrt(n)`
/// gets P-value 0.
pub fn runs_test(bits: &BitBlock) -> Result<TestOutcome, RandTestError> {
    let n = require("runs", bits, MIN_BITS)?;
    let nf = n as f64;
    let pi = bits.count_ones() as f64 / nf;
    // transitions = popcount(x XOR (x >> 1)) over the first n - 1 positions
    let shifted = bits.slice(1, n - 1);
    let head = bits.slice(0, n - 1);
    let v = 1.0 + head.xor(&shifted).count_ones() as f64;
    if (pi - 0.5).abs() >= 2.0 / nf.sqrt() {
        return Ok(TestOutcome {
            statistic: v,
            p_value: 0.0,
        });
    }
    let spread = pi * (1.0 - pi);
    let num = (v - 2.0 * nf * spread).abs();
    let den = 2.0 * (2.0 * nf).sqrt() * spread;
    Ok(TestOutcome {
        statistic: v,
        p_value: erfc(num / den),
    })
}

/// Probability that the longest run of ones in `m` fair bits is at most `r`.
fn prob_longest_at_most(m: usize, r: usize) -> f64 {
    // dp[k]: probability that the current trailing run has length k
    let mut dp = vec![0.0f64; r + 1];
    dp[0] = 1.0;
    for _ in 0..m {
        let total: f64 = dp.iter().sum();
        let mut next = vec![0.0f64; r + 1];
        next[0] = 0.5 * total;
        for k in 0..r {
            next[k + 1] = 0.5 * dp[k];
        }
        dp = next;
    }
    dp.iter().sum()
}

/// Class layout of the longest-run test for a block length: the lowest and
/// highest class boundaries, `lo` meaning "at most lo" and `hi` "at least hi".
fn longest_run_classes(block_len: usize) -> (usize, usize) {
    match block_len {
        8 => (1, 4),
        128 => (4, 9),
        _ => (10, 16),
    }
}

/// Exact class probabilities for the longest run of ones in `block_len` bits.
pub fn longest_run_class_probabilities(block_len: usize) -> Vec<f64> {
    let (lo, hi) = longest_run_classes(block_len);
    let mut out = Vec::with_capacity(hi - lo + 1);
    let mut prev = 0.0;
    for r in lo..hi {
        let c = prob_longest_at_most(block_len, r);
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

/// Longest run of ones within blocks. Block length 8, 128 or 10^4 by
/// input size; statistic: chi-square over the run-length classes.
pub fn longest_run_test(bits: &BitBlock) -> Result<TestOutcome, RandTestError> {
    let n = require("longest run", bits, MIN_BITS_LONGEST_RUN)?;
    let block_len = if n < 6272 {
        8
    } else if n < 750_000 {
        128
    } else {
        10_000
    };
    let (lo, hi) = longest_run_classes(block_len);
    let probs = longest_run_class_probabilities(block_len);
    let blocks = n / block_len;
    let mut counts = vec![0u64; probs.len()];
    for b in 0..blocks {
        let block = bits.slice(b * block_len, block_len);
        let longest = longest_run_of_ones(&block);
        counts[longest.clamp(lo, hi) - lo] += 1;
    }
    let nb = blocks as f64;
    let chi: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&v, &p)| (v as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    Ok(TestOutcome {
        statistic: chi,
        p_value: igamc((probs.len() - 1) as f64 / 2.0, chi / 2.0),
    })
}

fn longest_run_of_ones(bits: &BitBlock) -> usize {
    let (mut best, mut cur) = (0, 0);
    for b in bits.iter() {
        cur = if b { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CusumMode {
    Forward,
    Backward,
}

/// Cumulative sums test. Statistic: maximal excursion `z` of the ±1 walk.
pub fn cusum_test(bits: &BitBlock, mode: CusumMode) -> Result<TestOutcome, RandTestError> {
    let n = require("cumulative sums", bits, MIN_BITS)?;
    let mut s: i64 = 0;
    let mut z: i64 = 0;
    let mut step = |b: bool| {
        s += if b { 1 } else { -1 };
        z = z.max(s.abs());
    };
    match mode {
        CusumMode::Forward => bits.iter().for_each(&mut step),
        CusumMode::Backward => (0..n).rev().for_each(|i| step(bits.get(i))),
    }
    let n = n as i64;
    let sqrt_n = (n as f64).sqrt();
    let zf = z as f64;
    // Summation limits use truncating integer division, as in the reference code.
    let phi = |k: i64, a: i64| normal_cdf((4 * k + a) as f64 * zf / sqrt_n);
    let first: f64 = ((-n / z + 1) / 4..=(n / z - 1) / 4)
        .map(|k| phi(k, 1) - phi(k, -1))
        .sum();
    let second: f64 = ((-n / z - 3) / 4..=(n / z - 1) / 4)
        .map(|k| phi(k, 3) - phi(k, 1))
        .sum();
    Ok(TestOutcome {
        statistic: zf,
        p_value: (1.0 - first + second).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// First 100 binary digits of pi, the reference example input.
    const PI_100: &str =
        "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";
    const LONGEST_128: &str = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";

    fn parse(s: &str) -> BitBlock {
        s.bytes().map(|c| c == b'1').collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn reference_examples() {
        let x = parse(PI_100);
        let m = monobit_test(&x).unwrap();
        assert!(close(m.statistic, 1.6) && close(m.p_value, 0.109_598_583), "{m:?}");
        let b = block_frequency_test(&x, 10).unwrap();
        assert!(close(b.statistic, 7.2) && close(b.p_value, 0.706_438_450), "{b:?}");
        let r = runs_test(&x).unwrap();
        assert_eq!(r.statistic, 52.0);
        assert!(close(r.p_value, 0.500_797_918), "{r:?}");
        let f = cusum_test(&x, CusumMode::Forward).unwrap();
        assert_eq!(f.statistic, 16.0);
        assert!(close(f.p_value, 0.219_193_993), "{f:?}");
        let bw = cusum_test(&x, CusumMode::Backward).unwrap();
        assert_eq!(bw.statistic, 19.0);
        assert!(close(bw.p_value, 0.114_866_215), "{bw:?}");
        let l = longest_run_test(&parse(LONGEST_128)).unwrap();
        // exact class probabilities for 8-bit blocks are n/256 and agree with the table
        assert!(
            (l.statistic - 4.882_605).abs() < 2e-3 && (l.p_value - 0.180_598).abs() < 5e-4,
            "{l:?}"
        );
    }

    #[test]
    fn class_probabilities() {
        let close_all = |got: Vec<f64>, want: &[f64], tol: f64| {
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < tol, "{got:?} vs {want:?}");
            }
        };
        close_all(
            longest_run_class_probabilities(8),
            &[0.2148, 0.3672, 0.2305, 0.1875],
            1e-4,
        );
        close_all(
            longest_run_class_probabilities(128),
            &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124],
            1e-4,
        );
        // exact rational evaluation; the widely copied table rounds differently here
        close_all(
            longest_run_class_probabilities(10_000),
            &[0.086632, 0.208201, 0.248419, 0.193913, 0.121458, 0.068011, 0.073366],
            1e-6,
        );
        for m in [8, 128, 10_000] {
            assert!((longest_run_class_probabilities(m).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constructed_extremes() {
        let alternating: BitBlock = (0..1 << 20).map(|i| i % 2 == 1).collect();
        let m = monobit_test(&alternating).unwrap();
        assert_eq!((m.statistic, m.p_value), (0.0, 1.0));
        assert!(runs_test(&alternating).unwrap().p_value < 0.01);

        let ones = BitBlock::zeros(10_000).not();
        assert!(monobit_test(&ones).unwrap().p_value < 1e-10);
        assert_eq!(runs_test(&ones).unwrap().p_value, 0.0);
        assert!(block_frequency_test(&ones, 100).unwrap().p_value < 1e-10);
        assert!(longest_run_test(&ones).unwrap().p_value < 1e-10);
        assert!(cusum_test(&ones, CusumMode::Forward).unwrap().p_value < 1e-10);
    }

    #[test]
    fn length_requirements() {
        let short = BitBlock::zeros(99);
        assert!(matches!(monobit_test(&short), Err(RandTestError::TooShort { .. })));
        assert!(matches!(runs_test(&short), Err(RandTestError::TooShort { .. })));
        assert!(matches!(
            longest_run_test(&BitBlock::zeros(127)),
            Err(RandTestError::TooShort { .. })
        ));
        assert!(block_frequency_test(&BitBlock::zeros(200), 0).is_err());
        assert_eq!(default_block_len(100_000), 1011);
        assert_eq!(default_block_len(500), 20);
    }
}
