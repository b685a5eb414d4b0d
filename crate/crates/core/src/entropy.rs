//! Entropy formulas, finite-key bounds and output-length arithmetic.
//!
//! All logarithms are base 2. Failure probabilities that can be as small as
//! `2^-700` are carried as log2 exponents; linear values are derived from
//! them only at the edges (reports, comparisons against user targets).
//!
//! Every function is pure and generic over [`Scalar`], so the same code
//! serves `f32` and `f64` callers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Domain failures of the kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    /// The sampling bound diverges at a zero error rate; callers substitute `1/n_x`.
    #[error("observed error rate is zero; substitute 1/n_x before bounding")]
    ZeroErrorRate,
    /// `(e_bx + theta) / r` reached 1/2: no randomness can be certified.
    #[error("entropy argument {0} is at least 1/2; the protocol must abort")]
    Abort(f64),
}

fn domain<T: Scalar>(what: &'static str, value: T, domain: &'static str) -> EntropyError {
    EntropyError::Domain {
        what,
        value: value.as_f64(),
        domain,
    }
}

fn check_unit<T: Scalar>(what: &'static str, x: T) -> Result<T, EntropyError> {
    if x >= T::zero() && x <= T::one() {
        Ok(x)
    } else {
        Err(domain(what, x, "[0, 1]"))
    }
}

fn check_open_unit<T: Scalar>(what: &'static str, x: T) -> Result<T, EntropyError> {
    if x > T::zero() && x < T::one() {
        Ok(x)
    } else {
        Err(domain(what, x, "(0, 1)"))
    }
}

/// Security and sampling knobs of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams<T> {
    /// Pulses sent, `N`.
    pub total_pulses: u64,
    /// Pulses measured in X, `N_x`.
    pub planned_x_count: u64,
    /// Target `eps_theta = 2^-eps_theta_exponent`.
    pub eps_theta_exponent: T,
    /// Extraction failure exponent.
    pub t_e: u32,
    /// Min/max detector efficiency ratio.
    pub efficiency_ratio: T,
}

impl<T: Scalar> ProtocolParams<T> {
    pub fn validate(&self) -> Result<(), EntropyError> {
        if !(0 < self.planned_x_count && self.planned_x_count < self.total_pulses) {
            return Err(EntropyError::Domain {
                what: "planned_x_count",
                value: self.planned_x_count as f64,
                domain: "(0, total_pulses)",
            });
        }
        if !(self.eps_theta_exponent > T::zero()) {
            return Err(domain("eps_theta_exponent", self.eps_theta_exponent, "(0, inf)"));
        }
        if self.t_e < 1 {
            return Err(domain("t_e", T::zero(), "[1, inf)"));
        }
        if !(self.efficiency_ratio > T::zero() && self.efficiency_ratio <= T::one()) {
            return Err(domain("efficiency_ratio", self.efficiency_ratio, "(0, 1]"));
        }
        Ok(())
    }
}

/// Binary Shannon entropy `H(e) = -e log e - (1-e) log(1-e)`, with `H(0) = H(1) = 0`.
pub fn binary_entropy<T: Scalar>(e: T) -> Result<T, EntropyError> {
    let e = check_unit("e", e)?;
    if e == T::zero() || e == T::one() {
        return Ok(T::zero());
    }
    // ln_1p keeps (1-e)·log(1-e) accurate for small e.
    let tail = (T::one() - e) * (-e).ln_1p() / T::LN_2();
    Ok(-(e * e.log2() + tail))
}

/// `H'(e) = log2((1-e)/e)`; diverges at the endpoints.
pub fn binary_entropy_derivative<T: Scalar>(e: T) -> Result<T, EntropyError> {
    let e = check_open_unit("e", e)?;
    Ok(((T::one() - e) / e).log2())
}

/// Exponent of the random-sampling bound:
/// `xi(theta) = H(e + theta - q theta) - q H(e) - (1 - q) H(e + theta)`.
pub fn xi<T: Scalar>(theta: T, e_bx: T, q_x: T) -> Result<T, EntropyError> {
    if !(theta >= T::zero()) {
        return Err(domain("theta", theta, "[0, inf)"));
    }
    check_unit("e_bx", e_bx)?;
    check_unit("q_x", q_x)?;
    let shifted = check_unit("e_bx + theta - q_x theta", e_bx + theta - q_x * theta)?;
    let upper = check_unit("e_bx + theta", e_bx + theta)?;
    Ok(binary_entropy(shifted)? - q_x * binary_entropy(e_bx)? - (T::one() - q_x) * binary_entropy(upper)?)
}

/// log2 of the sampling failure bound
/// `[q(1-q) e(1-e) n]^(-1/2) · 2^(-n xi(theta))`, clamped to `<= 0`.
///
/// `e_bx = 0` is rejected with [`EntropyError::ZeroErrorRate`]; the estimation
/// layer is responsible for the `1/n_x` substitution.
pub fn log2_eps_theta_bound<T: Scalar>(n: u64, q_x: T, e_bx: T, theta: T) -> Result<T, EntropyError> {
    if n == 0 {
        return Err(domain("n", T::zero(), "[1, inf)"));
    }
    if e_bx == T::zero() {
        return Err(EntropyError::ZeroErrorRate);
    }
    check_open_unit("q_x", q_x)?;
    check_open_unit("e_bx", e_bx)?;
    let n_t = T::count(n);
    let exponent = xi(theta, e_bx, q_x)?;
    let spread = q_x * (T::one() - q_x) * e_bx * (T::one() - e_bx) * n_t;
    let log2_bound = -T::half() * spread.log2() - n_t * exponent;
    Ok(log2_bound.min(T::zero()))
}

/// Linear form of [`log2_eps_theta_bound`], in `(0, 1]`.
pub fn eps_theta_bound<T: Scalar>(n: u64, q_x: T, e_bx: T, theta: T) -> Result<T, EntropyError> {
    log2_eps_theta_bound(n, q_x, e_bx, theta).map(T::exp2)
}

/// Output length `floor(n_z (1 - H(e))) - t_e`.
///
/// The result may be zero or negative; the caller aborts in that case, and
/// whenever `e >= 1/2`.
pub fn final_length<T: Scalar>(n_z: u64, e_pz_bound: T, t_e: u32) -> Result<i64, EntropyError> {
    let h = binary_entropy(e_pz_bound)?;
    let kept = (T::count(n_z) * (T::one() - h)).floor();
    Ok(kept.to_i64().unwrap_or(0) - i64::from(t_e))
}

/// Output length under detector-efficiency mismatch:
/// `floor(r n_z (1 - H(e_sum / r))) - t_e`, where `r` is the min/max efficiency ratio.
///
/// With `r = 1` this is bit-for-bit [`final_length`].
pub fn mismatch_adjusted_length<T: Scalar>(r: T, n_z: u64, e_sum: T, t_e: u32) -> Result<i64, EntropyError> {
    if !(r > T::zero() && r <= T::one()) {
        return Err(domain("r", r, "(0, 1]"));
    }
    check_unit("e_sum", e_sum)?;
    let scaled = e_sum / r;
    if scaled >= T::half() {
        return Err(EntropyError::Abort(scaled.as_f64()));
    }
    let h = binary_entropy(scaled)?;
    let kept = (r * T::count(n_z) * (T::one() - h)).floor();
    Ok(kept.to_i64().unwrap_or(0) - i64::from(t_e))
}

/// Trace-distance security from the fidelity failure probability:
/// `eps_t = sqrt(eps_f (2 - eps_f))`.
pub fn trace_distance_from_fidelity<T: Scalar>(eps_f: T) -> Result<T, EntropyError> {
    let eps_f = check_unit("eps_f", eps_f)?;
    Ok((eps_f * (T::two() - eps_f)).sqrt())
}

/// Security parameters of a completed run.
///
/// `log2_*` fields are canonical; the linear fields underflow to zero for
/// very small failure probabilities in `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport<T> {
    pub eps_f: T,
    pub eps_t: T,
    pub log2_eps_f: T,
    pub log2_eps_t: T,
}

/// `eps_t = sqrt((eps_theta + 2^-t_e)(2 - eps_theta - 2^-t_e))`.
pub fn composed_security<T: Scalar>(eps_theta: T, t_e: u32) -> Result<SecurityReport<T>, EntropyError> {
    check_unit("eps_theta", eps_theta)?;
    composed_security_log2(eps_theta.log2(), t_e, 1)
}

/// Log-domain composition over `blocks` independently hashed blocks, each
/// failing with probability `2^-t_e` (union bound):
/// `eps_f = eps_theta + blocks · 2^-t_e`.
pub fn composed_security_log2<T: Scalar>(
    log2_eps_theta: T,
    t_e: u32,
    blocks: u64,
) -> Result<SecurityReport<T>, EntropyError> {
    if log2_eps_theta > T::zero() || log2_eps_theta.is_nan() {
        return Err(domain("log2 eps_theta", log2_eps_theta, "(-inf, 0]"));
    }
    let log2_ext = T::count(blocks.max(1)).log2() - T::from_u32(t_e).expect("u32 fits");
    let log2_eps_f = log2_sum(log2_eps_theta, log2_ext);
    if log2_eps_f > T::zero() {
        return Err(domain("eps_f", log2_eps_f.exp2(), "[0, 1]"));
    }
    let eps_f = log2_eps_f.exp2();
    let log2_eps_t = T::half() * (log2_eps_f + (T::two() - eps_f).log2());
    Ok(SecurityReport {
        eps_f,
        eps_t: log2_eps_t.exp2(),
        log2_eps_f,
        log2_eps_t,
    })
}

/// `log2(2^a + 2^b)` without leaving the log domain.
pub fn log2_sum<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp2().ln_1p() / T::LN_2()
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from a 60-digit mpmath evaluation; digits kept as printed.
    const H_0_02: f64 = 0.141_440_542_541_820_645;
    const XI_008_002_001: f64 = 7.344_687_183_939_502_934e-4;
    const LOG2_BOUND_1E6: f64 = -738.268_823_531_160_34;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn entropy_fixed_points() {
        assert_eq!(binary_entropy(0.0_f64).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0_f64).unwrap(), 0.0);
        assert!((binary_entropy(0.5_f64).unwrap() - 1.0).abs() < 1e-15);
        assert!(rel(binary_entropy(0.02_f64).unwrap(), H_0_02) < 1e-14);
        assert!((binary_entropy(0.02_f32).unwrap() as f64 - H_0_02).abs() < 1e-6);
    }

    #[test]
    fn params_validation() {
        let ok = ProtocolParams {
            total_pulses: 1_000_000,
            planned_x_count: 20_000,
            eps_theta_exponent: 100.0_f64,
            t_e: 100,
            efficiency_ratio: 1.0,
        };
        assert!(ok.validate().is_ok());
        assert!(ProtocolParams {
            planned_x_count: 0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(ProtocolParams {
            planned_x_count: 1_000_000,
            ..ok
        }
        .validate()
        .is_err());
        assert!(ProtocolParams {
            eps_theta_exponent: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(ProtocolParams { t_e: 0, ..ok }.validate().is_err());
        assert!(ProtocolParams {
            efficiency_ratio: 1.01,
            ..ok
        }
        .validate()
        .is_err());
        assert!(ProtocolParams {
            efficiency_ratio: 0.0,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn entropy_domain() {
        assert!(binary_entropy(-1e-9_f64).is_err());
        assert!(binary_entropy(1.0_f64 + 1e-12).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn derivative_values() {
        assert_eq!(binary_entropy_derivative(0.5_f64).unwrap(), 0.0);
        let a = binary_entropy_derivative(0.3_f64).unwrap();
        let b = binary_entropy_derivative(0.7_f64).unwrap();
        assert!((a + b).abs() < 1e-12);
        let d = binary_entropy_derivative(0.25_f64).unwrap();
        assert!((d - 3.0_f64.log2()).abs() < 1e-14);
        assert!(binary_entropy_derivative(0.0_f64).is_err());
        assert!(binary_entropy_derivative(1.0_f64).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        let fd = (binary_entropy(0.25 + h).unwrap() - binary_entropy(0.25 - h).unwrap()) / (2.0 * h);
        let d = binary_entropy_derivative(0.25_f64).unwrap();
        assert!((fd - d).abs() < 1e-8, "fd {fd} vs {d}");
    }

    #[test]
    fn xi_values() {
        assert_eq!(xi(0.0_f64, 0.02, 0.01).unwrap(), 0.0);
        assert_eq!(xi(0.0_f64, 0.3, 0.7).unwrap(), 0.0);
        let v = xi(0.08_f64, 0.02, 0.01).unwrap();
        assert!(rel(v, XI_008_002_001) < 1e-10, "{v}");
        assert!(xi(0.05_f64, 0.02, 0.01).unwrap() < xi(0.10_f64, 0.02, 0.01).unwrap());
        assert!(xi(0.9_f64, 0.2, 0.01).is_err());
        assert!(xi(-0.1_f64, 0.2, 0.01).is_err());
    }

    #[test]
    fn bound_values() {
        // theta = 0 with prefactor >= 1 clamps to exactly 1.
        assert_eq!(eps_theta_bound(10, 0.1_f64, 0.1, 0.0).unwrap(), 1.0);
        let l = log2_eps_theta_bound(1_000_000, 0.01_f64, 0.02, 0.08).unwrap();
        assert!((l - LOG2_BOUND_1E6).abs() < 1e-6, "{l}");
        assert!(l <= -100.0);
        let a = log2_eps_theta_bound(1_000_000, 0.01_f64, 0.02, 0.03).unwrap();
        let b = log2_eps_theta_bound(2_000_000, 0.01_f64, 0.02, 0.03).unwrap();
        assert!(b < a);
        assert_eq!(
            log2_eps_theta_bound(100, 0.1_f64, 0.0, 0.1),
            Err(EntropyError::ZeroErrorRate)
        );
        assert!(log2_eps_theta_bound(0, 0.1_f64, 0.1, 0.1).is_err());
        assert!(log2_eps_theta_bound(100, 1.0_f64, 0.1, 0.1).is_err());
    }

    #[test]
    fn final_length_values() {
        assert_eq!(final_length(1000, 0.0_f64, 100).unwrap(), 900);
        assert_eq!(final_length(1000, 0.5_f64, 100).unwrap(), -100);
        assert_eq!(final_length(1_000_000, 0.02_f64, 100).unwrap(), 858_459);
        assert_eq!(final_length(1_000_000, 0.49_f64, 100).unwrap(), 188);
    }

    #[test]
    fn mismatch_values() {
        assert_eq!(
            mismatch_adjusted_length(1.0_f64, 1000, 0.1, 10).unwrap(),
            final_length(1000, 0.1_f64, 10).unwrap()
        );
        assert!(matches!(
            mismatch_adjusted_length(0.9_f64, 1000, 0.46, 10),
            Err(EntropyError::Abort(_))
        ));
        assert_eq!(
            mismatch_adjusted_length(0.95_f64, 1_000_000, 0.05, 100).unwrap(),
            667_301
        );
        assert_eq!(
            mismatch_adjusted_length(1.0_f64, 1_000_000, 0.05, 100).unwrap(),
            713_503
        );
        assert!(mismatch_adjusted_length(0.0_f64, 10, 0.1, 1).is_err());
    }

    #[test]
    fn trace_distance_values() {
        assert_eq!(trace_distance_from_fidelity(0.0_f64).unwrap(), 0.0);
        assert_eq!(trace_distance_from_fidelity(1.0_f64).unwrap(), 1.0);
        let t = trace_distance_from_fidelity(2f64.powi(-99)).unwrap();
        assert!(rel(t, 2f64.powi(-49)) < 2f64.powi(-52));
        assert!(trace_distance_from_fidelity(1.5_f64).is_err());
    }

    #[test]
    fn composed_values() {
        let r = composed_security(2f64.powi(-100), 100).unwrap();
        assert!(rel(r.eps_t, 2.0 * 2f64.powi(-50)) < 1e-12);
        assert!(rel(r.eps_f, 2f64.powi(-99)) < 1e-12);
        let r = composed_security(2f64.powi(-50), 50).unwrap();
        let ef = 2f64.powi(-49);
        assert!(rel(r.eps_t, (ef * (2.0 - ef)).sqrt()) < 1e-12);
        let mut last = f64::INFINITY;
        for t_e in [10, 20, 40, 80, 160, 320] {
            let r = composed_security(0.0_f64, t_e).unwrap();
            assert!(r.eps_t < last);
            last = r.eps_t;
        }
        assert!(composed_security(1.0_f64, 1).is_err());
    }

    #[test]
    fn composed_blocks_union_bound() {
        let one = composed_security_log2(-100.0_f64, 100, 1).unwrap();
        let four = composed_security_log2(-100.0_f64, 100, 4).unwrap();
        assert!(rel(four.eps_f, 5.0 * 2f64.powi(-100)) < 1e-12);
        assert!(four.eps_t > one.eps_t);
    }

    #[test]
    fn f32_kernel_agrees_with_f64() {
        let a = xi(0.08_f32, 0.02, 0.01).unwrap() as f64;
        assert!(rel(a, XI_008_002_001) < 1e-2);
        assert_eq!(final_length(1000, 0.0_f32, 100).unwrap(), 900);
        let r = composed_security_log2(-100.0_f32, 100, 1).unwrap();
        assert!((r.log2_eps_t + 49.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn entropy_symmetry(e in 0.0_f64..=1.0) {
            let a = binary_entropy(e).unwrap();
            let b = binary_entropy(1.0 - e).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn bound_decreases_in_theta(
            n in 100_u64..10_000_000,
            q in 0.001_f64..0.5,
            e in 0.001_f64..0.4,
            mut thetas in proptest::collection::vec(0.0_f64..1.0, 2..12),
        ) {
            let top = 0.5 - e;
            thetas.iter_mut().for_each(|t| *t *= top);
            thetas.sort_by(f64::total_cmp);
            thetas.dedup();
            let bounds: Vec<f64> = thetas
                .iter()
                .map(|&t| log2_eps_theta_bound(n, q, e, t).unwrap())
                .collect();
            for w in bounds.windows(2) {
                // strictly decreasing below the clamp, flat at the clamp
                prop_assert!(w[1] < w[0] || (w[0] == 0.0 && w[1] <= 0.0));
            }
        }

        #[test]
        fn final_length_monotone(n in 1_u64..10_000_000, e in 0.0_f64..0.5, de in 0.0_f64..0.1, t in 0_u32..1000) {
            let base = final_length(n, e, t).unwrap();
            prop_assert!(final_length(n, (e + de).min(0.5), t).unwrap() <= base);
            prop_assert!(final_length(n, e, t + 1).unwrap() <= base);
            prop_assert!(final_length(n + 1, e, t).unwrap() >= base);
        }

        #[test]
        fn trace_dominates_fidelity(x in 0.0_f64..=1.0) {
            prop_assert!(trace_distance_from_fidelity(x).unwrap() >= x);
        }

        #[test]
        fn mismatch_unit_ratio_is_final_length(n in 1_u64..100_000_000, e in 0.0_f64..0.4999, t in 0_u32..500) {
            prop_assert_eq!(
                mismatch_adjusted_length(1.0, n, e, t).unwrap(),
                final_length(n, e, t).unwrap()
            );
        }
    }

    #[test]
    fn mismatch_unit_ratio_thousand_fixtures() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..50_000_000_u64);
            let e: f64 = rng.random_range(0.0..0.4999);
            let t = rng.random_range(0..400_u32);
            assert_eq!(
                mismatch_adjusted_length(1.0, n, e, t).unwrap(),
                final_length(n, e, t).unwrap()
            );
        }
    }
}
