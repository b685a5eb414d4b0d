//! Toeplitz hashing over GF(2).
//!
//! For raw input `x` of `n_z` bits and a seed `s` of `n_z + K - 1` bits the
//! output is
//!
//! ```text
//! y[i] = XOR_j s[i - j + n_z - 1] & x[j],   0 <= i < K, 0 <= j < n_z
//! ```
//!
//! i.e. `T[i][j] = s[i - j + n_z - 1]`, a `K x n_z` matrix constant along
//! its diagonals. `y[i]` is coefficient `i + n_z - 1` of the polynomial
//! product `s * x`, which is how the fast path computes it.
//!
//! Long sessions are hashed in sub-blocks that share one seed, sized for the
//! longest block. Each block fails with probability `2^-t_e`, and the
//! failures add up by the union bound.

pub mod gf2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitBlock, SeedSource};
use crate::entropy::{composed_security_log2, mismatch_adjusted_length, EntropyError, SecurityReport};
use crate::estimation::EstimationResult;
use crate::sampling::SessionTally;
use crate::scalar::Scalar;

/// Default raw bits per hashed sub-block.
pub const DEFAULT_BLOCK_BITS: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("estimation aborted the run; nothing may be extracted")]
    Aborted,
    #[error("no raw bits to extract from")]
    EmptyRaw,
    #[error("certified output length {0} is not positive")]
    NonPositiveLength(i64),
    #[error("{what} has {got} bits, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: u64,
        got: u64,
    },
    #[error("Toeplitz seed exhausted: needed {needed} bits")]
    SeedExhausted { needed: u64 },
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

/// Shape of one Toeplitz hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPlan {
    pub n_z: u64,
    /// Output length `K`.
    pub output_len: u64,
    pub t_e: u32,
    /// `n_z + K - 1`.
    pub seed_length: u64,
}

impl ExtractionPlan {
    /// Plan for `n_z` raw bits at phase-error bound `e_pz_bound`, with
    /// detector-efficiency ratio `r` (`1` for matched detectors).
    pub fn for_length<T: Scalar>(n_z: u64, e_pz_bound: T, t_e: u32, r: T) -> Result<Self, ExtractError> {
        if n_z == 0 {
            return Err(ExtractError::EmptyRaw);
        }
        let k = match mismatch_adjusted_length(r, n_z, e_pz_bound, t_e) {
            Ok(k) => k,
            Err(EntropyError::Abort(_)) => return Err(ExtractError::Aborted),
            Err(e) => return Err(e.into()),
        };
        if k <= 0 {
            return Err(ExtractError::NonPositiveLength(k));
        }
        let k = k as u64;
        Ok(Self {
            n_z,
            output_len: k,
            t_e,
            seed_length: n_z + k - 1,
        })
    }
}

/// Plan for a whole tally hashed as one block.
pub fn make_plan<T: Scalar>(
    tally: &SessionTally,
    est: &EstimationResult<T>,
    t_e: u32,
) -> Result<ExtractionPlan, ExtractError> {
    if est.abort {
        return Err(ExtractError::Aborted);
    }
    ExtractionPlan::for_length(tally.n_z, est.e_pz_bound, t_e, T::one())
}

fn check_lengths(raw: &BitBlock, seed: &BitBlock, plan: &ExtractionPlan) -> Result<(), ExtractError> {
    if raw.len() as u64 != plan.n_z {
        return Err(ExtractError::LengthMismatch {
            what: "raw input",
            expected: plan.n_z,
            got: raw.len() as u64,
        });
    }
    if seed.len() as u64 != plan.seed_length {
        return Err(ExtractError::LengthMismatch {
            what: "seed",
            expected: plan.seed_length,
            got: seed.len() as u64,
        });
    }
    Ok(())
}

/// Fast Toeplitz hash through one GF(2) polynomial product.
pub fn toeplitz_extract(raw: &BitBlock, seed: &BitBlock, plan: &ExtractionPlan) -> Result<BitBlock, ExtractError> {
    check_lengths(raw, seed, plan)?;
    let product = gf2::poly_mul(seed.words(), raw.words());
    let total = product.len() * 64;
    Ok(BitBlock::from_words(product, total).slice(plan.n_z as usize - 1, plan.output_len as usize))
}

/// Reference Toeplitz hash: the matrix-vector product, bit by bit.
pub fn toeplitz_extract_naive(
    raw: &BitBlock,
    seed: &BitBlock,
    plan: &ExtractionPlan,
) -> Result<BitBlock, ExtractError> {
    check_lengths(raw, seed, plan)?;
    let n_z = plan.n_z as usize;
    Ok((0..plan.output_len as usize)
        .map(|i| (0..n_z).fold(false, |acc, j| acc ^ (seed.get(i + n_z - 1 - j) & raw.get(j))))
        .collect())
}

/// How a session's raw bits are cut into hashed sub-blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub blocks: Vec<ExtractionPlan>,
    /// Raw bits left unhashed at the tail (too few to certify anything).
    pub discarded_raw_bits: u64,
    /// Shared seed length, that of the longest block.
    pub seed_length: u64,
}

impl SessionPlan {
    pub fn output_len(&self) -> u64 {
        self.blocks.iter().map(|b| b.output_len).sum()
    }
}

/// Cuts `n_z` raw bits into blocks of `block_bits`; a short final block that
/// certifies nothing is dropped.
pub fn plan_session<T: Scalar>(
    n_z: u64,
    e_pz_bound: T,
    t_e: u32,
    r: T,
    block_bits: u64,
) -> Result<SessionPlan, ExtractError> {
    if n_z == 0 {
        return Err(ExtractError::EmptyRaw);
    }
    let block_bits = block_bits.max(1);
    let mut blocks = Vec::new();
    let mut discarded = 0;
    let mut start = 0;
    while start < n_z {
        let len = block_bits.min(n_z - start);
        match ExtractionPlan::for_length(len, e_pz_bound, t_e, r) {
            Ok(p) => blocks.push(p),
            Err(ExtractError::NonPositiveLength(k)) => {
                if blocks.is_empty() && len == n_z {
                    return Err(ExtractError::NonPositiveLength(k));
                }
                discarded += len;
            }
            Err(e) => return Err(e),
        }
        start += len;
    }
    if blocks.is_empty() {
        return Err(ExtractError::NonPositiveLength(0));
    }
    let seed_length = blocks.iter().map(|b| b.seed_length).max().unwrap_or(0);
    Ok(SessionPlan {
        blocks,
        discarded_raw_bits: discarded,
        seed_length,
    })
}

/// Extracted bits of a session together with their security statement.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionExtraction<T> {
    pub output: BitBlock,
    pub report: SecurityReport<T>,
    pub plan: SessionPlan,
    pub seed_bits_consumed: u64,
}

/// Hashes all of `z_bits` with a Toeplitz seed drawn from `seed`.
pub fn extract_session<T: Scalar, S: SeedSource + ?Sized>(
    z_bits: &BitBlock,
    est: &EstimationResult<T>,
    t_e: u32,
    r: T,
    block_bits: u64,
    seed: &mut S,
) -> Result<SessionExtraction<T>, ExtractError> {
    if est.abort {
        return Err(ExtractError::Aborted);
    }
    let plan = plan_session(z_bits.len() as u64, est.e_pz_bound, t_e, r, block_bits)?;
    let shared = seed
        .take_bits(plan.seed_length as usize)
        .ok_or(ExtractError::SeedExhausted {
            needed: plan.seed_length,
        })?;
    let mut starts = Vec::with_capacity(plan.blocks.len());
    let mut at = 0;
    for b in &plan.blocks {
        starts.push(at);
        at += b.n_z as usize;
    }
    let parts: Vec<BitBlock> = plan
        .blocks
        .par_iter()
        .zip(starts.par_iter())
        .map(|(b, &start)| {
            let raw = z_bits.slice(start, b.n_z as usize);
            let s = shared.slice(0, b.seed_length as usize);
            toeplitz_extract(&raw, &s, b)
        })
        .collect::<Result<_, _>>()?;
    let mut output = BitBlock::with_capacity(plan.output_len() as usize);
    parts.iter().for_each(|p| output.extend_from(p));
    let report = composed_security_log2(est.log2_eps_theta, t_e, plan.blocks.len() as u64)?;
    Ok(SessionExtraction {
        output,
        report,
        seed_bits_consumed: plan.seed_length,
        plan,
    })
}
