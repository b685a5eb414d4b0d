//! Phase-error estimation from the X-basis sample.
//!
//! The observed X error rate `e_bx` plus a statistical slack `theta` bounds
//! the phase error rate of the Z bits. `theta` is the smallest value whose
//! sampling bound meets the target failure probability; the run aborts when
//! `e_bx + theta` reaches 1/2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{binary_entropy, binary_entropy_derivative, log2_eps_theta_bound, EntropyError, ProtocolParams};
use crate::sampling::SessionTally;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("no X-basis sample survived; nothing can be certified")]
    NoXSample,
    #[error("no Z-basis bit survived; nothing to extract from")]
    NoZSample,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult<T> {
    pub e_bx: T,
    pub theta: T,
    /// Achieved sampling failure probability at `theta`, log2 and linear.
    pub log2_eps_theta: T,
    pub eps_theta: T,
    /// `e_bx + theta`.
    pub e_pz_bound: T,
    pub abort: bool,
    pub n: u64,
    pub n_x: u64,
    pub q_x: T,
}

/// `(x_minus + x_double / 2) / n_x`, or `1 / n_x` when no error was seen.
pub fn observed_x_error<T: Scalar>(tally: &SessionTally) -> Result<T, EstimationError> {
    if tally.n_x == 0 {
        return Err(EstimationError::NoXSample);
    }
    // Twice the error count stays integral.
    let doubled = 2 * tally.x_minus + tally.x_double;
    let n_x = T::count(tally.n_x);
    Ok(if doubled == 0 {
        T::one() / n_x
    } else {
        T::count(doubled) / (T::two() * n_x)
    })
}

/// Smallest `theta` with `eps_theta_bound(n, q_x, e_bx, theta) <= 2^-eps_exponent`,
/// bracketed to `T::SOLVER_TOL`.
///
/// `Ok(None)` means even `theta = 1/2 - e_bx` misses the target.
pub fn solve_theta<T: Scalar>(n: u64, q_x: T, e_bx: T, eps_exponent: T) -> Result<Option<T>, EntropyError> {
    if !(eps_exponent >= T::zero()) {
        return Err(EntropyError::Domain {
            what: "eps_exponent",
            value: eps_exponent.as_f64(),
            domain: "[0, inf)",
        });
    }
    if !(e_bx > T::zero() && e_bx < T::half()) {
        return Err(EntropyError::Domain {
            what: "e_bx",
            value: e_bx.as_f64(),
            domain: "(0, 1/2)",
        });
    }
    let target = -eps_exponent;
    let bound = |theta: T| log2_eps_theta_bound(n, q_x, e_bx, theta);
    if bound(T::zero())? <= target {
        return Ok(Some(T::zero()));
    }
    let mut hi = T::half() - e_bx;
    if bound(hi)? > target {
        return Ok(None);
    }
    let mut lo = T::zero();
    let tol = T::lit(T::SOLVER_TOL);
    while hi - lo > tol {
        let mid = lo + (hi - lo) * T::half();
        if mid <= lo || mid >= hi {
            break;
        }
        if bound(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// X sample size for a planned `theta`:
/// `ceil(exponent / (H(e + theta) - H(e) - H'(e + theta) theta))`. Independent of `n`.
pub fn plan_nx<T: Scalar>(e_bx_expected: T, theta_target: T, security_exponent: T) -> Result<u64, EntropyError> {
    let upper = e_bx_expected + theta_target;
    if !(e_bx_expected > T::zero() && theta_target > T::zero() && upper < T::half()) {
        return Err(EntropyError::Domain {
            what: "e_bx + theta",
            value: upper.as_f64(),
            domain: "0 < e_bx < e_bx + theta < 1/2",
        });
    }
    let denom =
        binary_entropy(upper)? - binary_entropy(e_bx_expected)? - binary_entropy_derivative(upper)? * theta_target;
    if !(denom > T::zero()) {
        return Err(EntropyError::Domain {
            what: "planning denominator",
            value: denom.as_f64(),
            domain: "(0, inf)",
        });
    }
    let n_x = (security_exponent / denom).ceil();
    n_x.to_u64().ok_or(EntropyError::Domain {
        what: "planned n_x",
        value: n_x.as_f64(),
        domain: "[0, 2^64)",
    })
}

/// Observed error, `theta` at `q_x = n_x / n`, and the abort decision.
pub fn estimate<T: Scalar>(
    tally: &SessionTally,
    params: &ProtocolParams<T>,
) -> Result<EstimationResult<T>, EstimationError> {
    let e_bx: T = observed_x_error(tally)?;
    if tally.n_z == 0 {
        return Err(EstimationError::NoZSample);
    }
    let q_x = T::count(tally.n_x) / T::count(tally.n);
    let result = |theta: T, log2_eps: T| {
        let e_pz_bound = e_bx + theta;
        EstimationResult {
            e_bx,
            theta,
            log2_eps_theta: log2_eps,
            eps_theta: log2_eps.exp2(),
            e_pz_bound,
            abort: e_pz_bound >= T::half(),
            n: tally.n,
            n_x: tally.n_x,
            q_x,
        }
    };
    if e_bx >= T::half() {
        return Ok(result(T::zero(), T::zero()));
    }
    let theta = match solve_theta(tally.n, q_x, e_bx, params.eps_theta_exponent)? {
        Some(theta) => theta,
        None => T::half() - e_bx,
    };
    let log2_eps = log2_eps_theta_bound(tally.n, q_x, e_bx, theta)?;
    Ok(result(theta, log2_eps))
}
