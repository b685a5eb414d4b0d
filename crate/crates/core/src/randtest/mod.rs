//! Statistical checks on raw and extracted bit sequences.
//!
//! The battery splits a sequence into equal sub-sequences (100 by default),
//! runs every test on each, and reports per test the fraction of
//! sub-sequences with `p >= 0.01` and a P-value for the uniformity of the
//! sub-sequence P-values (chi-square over ten bins). A test passes when that
//! uniformity P-value is at least 0.01 and the proportion at least 0.96.

pub mod autocorr;
pub mod nist;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autocorr::{autocorrelation, compare_raw_vs_final, max_abs, AutocorrComparison};
pub use nist::{
    block_frequency_test, cusum_test, default_block_len, longest_run_test, monobit_test, runs_test, CusumMode,
    TestOutcome,
};

use crate::bits::BitBlock;

pub const SIGNIFICANCE: f64 = 0.01;
pub const PROPORTION_THRESHOLD: f64 = 0.96;
pub const DEFAULT_SUBSEQUENCES: usize = 100;
pub const DEFAULT_MAX_LAG: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandTestError {
    #[error("{test} needs at least {needed} bits, got {got}")]
    TooShort {
        test: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("constant sequence: variance is zero")]
    Degenerate,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Monobit,
    BlockFrequency,
    Runs,
    LongestRun,
    CusumForward,
    CusumBackward,
}

impl TestKind {
    pub const ALL: [TestKind; 6] = [
        TestKind::Monobit,
        TestKind::BlockFrequency,
        TestKind::Runs,
        TestKind::LongestRun,
        TestKind::CusumForward,
        TestKind::CusumBackward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Monobit => "monobit",
            TestKind::BlockFrequency => "block_frequency",
            TestKind::Runs => "runs",
            TestKind::LongestRun => "longest_run",
            TestKind::CusumForward => "cusum_forward",
            TestKind::CusumBackward => "cusum_backward",
        }
    }

    pub fn run(self, bits: &BitBlock) -> Result<TestOutcome, RandTestError> {
        match self {
            TestKind::Monobit => monobit_test(bits),
            TestKind::BlockFrequency => block_frequency_test(bits, default_block_len(bits.len())),
            TestKind::Runs => runs_test(bits),
            TestKind::LongestRun => longest_run_test(bits),
            TestKind::CusumForward => cusum_test(bits, CusumMode::Forward),
            TestKind::CusumBackward => cusum_test(bits, CusumMode::Backward),
        }
    }
}

/// One test over all sub-sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    /// Chi-square of the sub-sequence P-value histogram.
    pub statistic: f64,
    /// Uniformity P-value of the sub-sequence P-values.
    pub p_value: f64,
    /// Fraction of sub-sequences with `p >= SIGNIFICANCE`.
    pub proportion: f64,
    /// The test applied once to the whole sequence.
    pub whole_sequence: TestOutcome,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub bits: u64,
    pub subsequences: usize,
    pub records: Vec<TestRecord>,
    /// Lowest proportion over all tests.
    pub proportion_pass: f64,
    /// `R(1..=max_lag)` of the whole sequence.
    pub autocorrelation: Vec<f64>,
    pub autocorrelation_max_abs: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub subsequences: usize,
    pub max_lag: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            subsequences: DEFAULT_SUBSEQUENCES,
            max_lag: DEFAULT_MAX_LAG,
        }
    }
}

/// Chi-square of P-values over ten equal bins and its P-value.
pub fn p_value_uniformity(p_values: &[f64]) -> (f64, f64) {
    let mut bins = [0u64; 10];
    for &p in p_values {
        bins[((p * 10.0) as usize).min(9)] += 1;
    }
    let expect = p_values.len() as f64 / 10.0;
    let chi: f64 = bins.iter().map(|&b| (b as f64 - expect).powi(2) / expect).sum();
    (chi, nist::igamc(4.5, chi / 2.0))
}

pub fn run_battery(bits: &BitBlock, config: &BatteryConfig) -> Result<TestReport, RandTestError> {
    let s = config.subsequences;
    if s == 0 {
        return Err(RandTestError::BadParameter("zero sub-sequences".into()));
    }
    let sub_len = bits.len() / s;
    let needed = s * nist::MIN_BITS_LONGEST_RUN.max(nist::MIN_BITS);
    if sub_len < nist::MIN_BITS_LONGEST_RUN {
        return Err(RandTestError::TooShort {
            test: "battery",
            needed,
            got: bits.len(),
        });
    }
    let subs: Vec<BitBlock> = (0..s).map(|i| bits.slice(i * sub_len, sub_len)).collect();
    let records = TestKind::ALL
        .par_iter()
        .map(|&kind| {
            let ps = subs
                .iter()
                .map(|sub| kind.run(sub).map(|o| o.p_value))
                .collect::<Result<Vec<_>, _>>()?;
            let passed = ps.iter().filter(|&&p| p >= SIGNIFICANCE).count();
            let proportion = passed as f64 / s as f64;
            let (statistic, p_value) = p_value_uniformity(&ps);
            Ok(TestRecord {
                name: kind.name().to_owned(),
                statistic,
                p_value,
                proportion,
                whole_sequence: kind.run(bits)?,
                pass: p_value >= SIGNIFICANCE && proportion >= PROPORTION_THRESHOLD,
            })
        })
        .collect::<Result<Vec<_>, RandTestError>>()?;
    let autocorrelation = autocorrelation(bits, config.max_lag)?;
    Ok(TestReport {
        bits: bits.len() as u64,
        subsequences: s,
        proportion_pass: records.iter().map(|r| r.proportion).fold(1.0, f64::min),
        all_pass: records.iter().all(|r| r.pass),
        autocorrelation_max_abs: max_abs(&autocorrelation),
        autocorrelation,
        records,
    })
}
