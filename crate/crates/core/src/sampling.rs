//! Squashing of detector outcomes, seeded basis-position planning and the
//! post-selection tally.
//!
//! Detector outcomes map onto a qubit-or-vacuum picture: no click is a
//! vacuum and is post-selected away, a single click is a bit, and a double
//! click is either given a uniformly random bit (Z basis, drawn from the
//! input seed) or kept as a half error for estimation (X basis).
//!
//! Basis positions are chosen by reading an integer from the input seed and
//! unranking it into a k-subset in lexicographic order. Binomials are exact
//! big integers throughout.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitBlock, SeedSource};
use crate::sim::{Basis, ClickEvent, ClickPattern};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplingError {
    #[error("input seed exhausted after {consumed} bits")]
    SeedExhausted { consumed: u64 },
    #[error("rank {index} is not below C({n}, {k})")]
    RankOutOfRange { index: String, n: u64, k: u64 },
    #[error("cannot choose {k} positions out of {n}")]
    TooManyPositions { n: u64, k: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SquashedOutcome {
    Vacuum,
    Bit(bool),
    /// X-basis double click, retained for half-error accounting.
    Double,
}

/// Classifies one detector outcome; Z double clicks draw their bit from `seed`.
pub fn squash<S: SeedSource + ?Sized>(event: &ClickEvent, seed: &mut S) -> Result<SquashedOutcome, SamplingError> {
    Ok(match (event.pattern, event.basis) {
        (ClickPattern::None, _) => SquashedOutcome::Vacuum,
        (ClickPattern::D0, _) => SquashedOutcome::Bit(false),
        (ClickPattern::D1, _) => SquashedOutcome::Bit(true),
        (ClickPattern::Double, Basis::X) => SquashedOutcome::Double,
        (ClickPattern::Double, Basis::Z) => {
            let bit = seed.next_bit().ok_or(SamplingError::SeedExhausted {
                consumed: seed.consumed(),
            })?;
            SquashedOutcome::Bit(bit)
        }
    })
}

/// Exact `C(n, k)`; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// The `index`-th k-subset of `0..n` in lexicographic order.
///
/// Walks the combinadic representation of `C(n, k) - index`, updating a
/// single running binomial by one multiply and one divide per step.
pub fn unrank_combination(index: &BigUint, n: u64, k: u64) -> Result<Vec<u64>, SamplingError> {
    if k > n {
        return Err(SamplingError::TooManyPositions { n, k });
    }
    let total = binomial(n, k);
    if *index >= total {
        return Err(SamplingError::RankOutOfRange {
            index: index.to_string(),
            n,
            k,
        });
    }
    // Invariants: binom = C(m, s), 1 <= target <= binom. The next element is
    // n - m for the smallest m with C(m, s) >= target.
    let mut target = &total - index;
    let mut binom = total;
    let (mut m, mut s) = (n, k);
    let mut out = Vec::with_capacity(k as usize);
    while s > 0 {
        let below = loop {
            // C(m - 3, s) in one pass while that stays above the target
            if m - s >= 3 {
                let num = (m - s).checked_mul(m - s - 1).and_then(|x| x.checked_mul(m - s - 2));
                let den = m.checked_mul(m - 1).and_then(|x| x.checked_mul(m - 2));
                if let (Some(num), Some(den)) = (num, den) {
                    let jump = &binom * num / den;
                    if jump >= target {
                        binom = jump;
                        m -= 3;
                        continue;
                    }
                }
            }
            // C(m - 1, s) = C(m, s) (m - s) / m
            let next = &binom * (m - s) / m;
            if next >= target {
                binom = next;
                m -= 1;
            } else {
                break next;
            }
        };
        out.push(n - m);
        target -= &below;
        // C(m - 1, s - 1) = C(m, s) - C(m - 1, s)
        binom -= below;
        m -= 1;
        s -= 1;
    }
    Ok(out)
}

/// Bits of input seed needed to index all `C(n, n_x)` subsets: `ceil(log2 C(n, n_x))`.
pub fn seed_length_required(n: u64, n_x: u64) -> u64 {
    let c = binomial(n, n_x);
    if c <= BigUint::one() {
        return 0;
    }
    let bits = (c - 1u32).bits();
    debug_assert!(bits as f64 <= n_x as f64 * (n as f64).log2() + 1.0);
    bits
}

/// Output of [`plan_basis_positions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisSelection {
    pub positions: Vec<u64>,
    pub seed_bits_consumed: u64,
}

/// Picks `n_x` X-basis positions out of `n` uniformly from the input seed.
///
/// The seed is read in windows of `ceil(log2 C(n, n_x))` bits, first bit
/// least significant. A window whose value is not below `C(n, n_x)` is
/// discarded and the next one read, which keeps the choice exactly uniform.
pub fn plan_basis_positions<S: SeedSource + ?Sized>(
    n: u64,
    n_x: u64,
    seed: &mut S,
) -> Result<BasisSelection, SamplingError> {
    if n_x > n {
        return Err(SamplingError::TooManyPositions { n, k: n_x });
    }
    let total = binomial(n, n_x);
    let width = seed_length_required(n, n_x);
    let mut consumed = 0;
    loop {
        let window = seed.take_bits(width as usize).ok_or(SamplingError::SeedExhausted {
            consumed: seed.consumed(),
        })?;
        consumed += width;
        let value = BigUint::from_bytes_le(&window.to_bytes());
        if value < total {
            return Ok(BasisSelection {
                positions: unrank_combination(&value, n, n_x)?,
                seed_bits_consumed: consumed,
            });
        }
    }
}

/// Post-selected counts of one session.
///
/// `n = n_x + n_z` counts non-vacuum events only. X errors are `x_minus`
/// single `|->` clicks plus `x_double` double clicks at half weight; the
/// weighting is applied by the estimator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTally {
    pub n: u64,
    pub n_x: u64,
    pub n_z: u64,
    pub x_minus: u64,
    pub x_double: u64,
    pub z_double: u64,
    /// Seed bits spent on Z double clicks (equals `z_double`).
    pub seed_bits_consumed: u64,
    /// Raw Z-basis bits in pulse order; stored in its own bit file.
    #[serde(skip)]
    pub z_bits: BitBlock,
}

impl SessionTally {
    /// Adds one outcome. `was_double` marks a Z bit assigned to a double click.
    pub fn record(&mut self, basis: Basis, outcome: SquashedOutcome, was_double: bool) {
        match (basis, outcome) {
            (_, SquashedOutcome::Vacuum) => return,
            (Basis::X, SquashedOutcome::Bit(minus)) => {
                self.n_x += 1;
                self.x_minus += u64::from(minus);
            }
            (Basis::X, SquashedOutcome::Double) => {
                self.n_x += 1;
                self.x_double += 1;
            }
            (Basis::Z, SquashedOutcome::Bit(b)) => {
                self.n_z += 1;
                self.z_bits.push(b);
                if was_double {
                    self.z_double += 1;
                    self.seed_bits_consumed += 1;
                }
            }
            (Basis::Z, SquashedOutcome::Double) => {
                unreachable!("Z double clicks are always assigned a bit")
            }
        }
        self.n += 1;
    }

    /// Appends a later tally; associative, and order-preserving for `z_bits`.
    pub fn merge(&mut self, later: &SessionTally) {
        self.n += later.n;
        self.n_x += later.n_x;
        self.n_z += later.n_z;
        self.x_minus += later.x_minus;
        self.x_double += later.x_double;
        self.z_double += later.z_double;
        self.seed_bits_consumed += later.seed_bits_consumed;
        self.z_bits.extend_from(&later.z_bits);
    }

    pub fn q_x(&self) -> f64 {
        self.n_x as f64 / self.n as f64
    }
}

/// Folds already-squashed outcomes (with their bases) into a tally.
///
/// Without the originating click pattern a Z bit cannot be attributed to a
/// double click, so `z_double` stays zero here; use [`squash_and_tally`] when
/// seed accounting matters.
pub fn tally_session<I>(outcomes: I) -> SessionTally
where
    I: IntoIterator<Item = (Basis, SquashedOutcome)>,
{
    let mut t = SessionTally::default();
    for (basis, outcome) in outcomes {
        t.record(basis, outcome, false);
    }
    t
}

/// Squashes click events in order and tallies them, drawing Z double-click
/// bits from `seed`.
pub fn squash_and_tally<'a, I, S>(events: I, seed: &mut S) -> Result<SessionTally, SamplingError>
where
    I: IntoIterator<Item = &'a ClickEvent>,
    S: SeedSource + ?Sized,
{
    let mut t = SessionTally::default();
    squash_into(&mut t, events, seed)?;
    Ok(t)
}

/// Like [`squash_and_tally`] but extends an existing tally.
pub fn squash_into<'a, I, S>(tally: &mut SessionTally, events: I, seed: &mut S) -> Result<(), SamplingError>
where
    I: IntoIterator<Item = &'a ClickEvent>,
    S: SeedSource + ?Sized,
{
    for e in events {
        let outcome = squash(e, seed)?;
        tally.record(e.basis, outcome, e.pattern == ClickPattern::Double);
    }
    Ok(())
}
