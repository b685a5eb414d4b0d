//! Stochastic stand-in for the optical hardware: an untrusted pulsed source,
//! a lossy channel and a pair of trusted threshold detectors behind a
//! basis-selecting polarisation analyser.
//!
//! Each pulse is a coherent state, so the photon number is Poisson. Photons
//! survive the channel and detector with probability `eta * t` and are routed
//! to `D0`/`D1` in proportion to the per-detector mean photon numbers of the
//! source mode and measurement basis. Thinning a Poisson variable this way
//! leaves the two detectors independent, each clicking with probability
//! `1 - (1 - p_d) exp(-eta mu_i t)`. Dark counts are independent per gate
//! per detector.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, PHYSICS_STREAM_BASE};

/// Pulses per physics block (one RNG stream each).
pub const BLOCK_PULSES: u64 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid basis plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Emits `|+>` with a small intensity leak into `|->`.
    #[default]
    HonestPlus,
    /// Emits `|H>` every time: looks random in Z, carries no randomness.
    AdversarialFixedZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Photons per pulse.
    pub mean_photon_number: f64,
    /// Fraction of the `|+>` intensity leaking into the orthogonal mode.
    pub misalignment: f64,
    #[serde(default)]
    pub mode: SourceMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub loss_db: f64,
}

impl ChannelConfig {
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_count_per_gate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClickPattern {
    None,
    D0,
    D1,
    Double,
}

impl ClickPattern {
    fn from_clicks(d0: bool, d1: bool) -> Self {
        match (d0, d1) {
            (false, false) => Self::None,
            (true, false) => Self::D0,
            (false, true) => Self::D1,
            (true, true) => Self::Double,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClickEvent {
    pub pulse_index: u64,
    pub basis: Basis,
    pub pattern: ClickPattern,
}

/// Source, channel and detectors together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Apparatus {
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
}

impl Apparatus {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let s = &self.source;
        if !(s.mean_photon_number >= 0.0 && s.mean_photon_number.is_finite()) {
            return bad(format!("mean_photon_number {} must be >= 0", s.mean_photon_number));
        }
        if !(0.0..=0.5).contains(&s.misalignment) {
            return bad(format!("misalignment {} must be in [0, 1/2]", s.misalignment));
        }
        if !(self.channel.loss_db >= 0.0) {
            return bad(format!("loss_db {} must be >= 0", self.channel.loss_db));
        }
        let d = &self.detector;
        if !(d.efficiency > 0.0 && d.efficiency <= 1.0) {
            return bad(format!("efficiency {} must be in (0, 1]", d.efficiency));
        }
        if !(0.0..1.0).contains(&d.dark_count_per_gate) {
            return bad(format!(
                "dark_count_per_gate {} must be in [0, 1)",
                d.dark_count_per_gate
            ));
        }
        Ok(())
    }

    /// Mean photon numbers arriving at (D0, D1) before loss.
    pub fn mode_means(&self, basis: Basis) -> (f64, f64) {
        let mu = self.source.mean_photon_number;
        match (self.source.mode, basis) {
            (SourceMode::HonestPlus, Basis::X) => {
                (mu * (1.0 - self.source.misalignment), mu * self.source.misalignment)
            }
            (SourceMode::HonestPlus, Basis::Z) => (mu / 2.0, mu / 2.0),
            (SourceMode::AdversarialFixedZ, Basis::Z) => (mu, 0.0),
            (SourceMode::AdversarialFixedZ, Basis::X) => (mu / 2.0, mu / 2.0),
        }
    }

    /// Closed-form per-detector click probabilities.
    pub fn click_probabilities(&self, basis: Basis) -> (f64, f64) {
        let (m0, m1) = self.mode_means(basis);
        let s = self.detector.efficiency * self.channel.transmittance();
        let pd = self.detector.dark_count_per_gate;
        let p = |m: f64| 1.0 - (1.0 - pd) * (-s * m).exp();
        (p(m0), p(m1))
    }

    fn sampler(&self) -> PulseSampler {
        let mu = self.source.mean_photon_number;
        let survive = self.detector.efficiency * self.channel.transmittance();
        let to_d0 = |basis| {
            let (m0, _) = self.mode_means(basis);
            if mu > 0.0 {
                m0 / mu
            } else {
                0.0
            }
        };
        PulseSampler {
            photons: (mu > 0.0).then(|| Poisson::new(mu).expect("validated mean")),
            survive,
            d0_share_x: survive * to_d0(Basis::X),
            d0_share_z: survive * to_d0(Basis::Z),
            dark: self.detector.dark_count_per_gate,
        }
    }
}

struct PulseSampler {
    photons: Option<Poisson<f64>>,
    survive: f64,
    d0_share_x: f64,
    d0_share_z: f64,
    dark: f64,
}

impl PulseSampler {
    // Draw order is fixed (photons, per-photon routing, two dark gates) so
    // matched seeds couple runs that differ only in loss or efficiency.
    fn detect<R: Rng + ?Sized>(&self, pulse_index: u64, basis: Basis, rng: &mut R) -> ClickEvent {
        let k = match &self.photons {
            Some(p) => p.sample(rng) as u64,
            None => 0,
        };
        let share = match basis {
            Basis::X => self.d0_share_x,
            Basis::Z => self.d0_share_z,
        };
        let (mut d0, mut d1) = (false, false);
        for _ in 0..k {
            let u: f64 = rng.random();
            if u < share {
                d0 = true;
            } else if u < self.survive {
                d1 = true;
            }
        }
        d0 |= rng.random::<f64>() < self.dark;
        d1 |= rng.random::<f64>() < self.dark;
        ClickEvent {
            pulse_index,
            basis,
            pattern: ClickPattern::from_clicks(d0, d1),
        }
    }
}

/// Poisson photon number of one coherent pulse.
pub fn sample_photon_number<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).expect("finite positive mean").sample(rng) as u64
}

/// One pulse through source, channel and detectors.
pub fn detect_pulse<R: Rng + ?Sized>(
    source: SourceConfig,
    channel: ChannelConfig,
    detector: DetectorConfig,
    basis: Basis,
    rng: &mut R,
) -> ClickEvent {
    Apparatus {
        source,
        channel,
        detector,
    }
    .sampler()
    .detect(0, basis, rng)
}

/// Which of `n_pulses` positions are measured in X (sorted, unique).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisPlan {
    n_pulses: u64,
    x_positions: Vec<u64>,
}

impl BasisPlan {
    pub fn new(n_pulses: u64, x_positions: Vec<u64>) -> Result<Self, SimError> {
        if x_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::InvalidPlan("positions must be strictly increasing".into()));
        }
        if x_positions.last().is_some_and(|&p| p >= n_pulses) {
            return Err(SimError::InvalidPlan(format!("position outside [0, {n_pulses})")));
        }
        Ok(Self { n_pulses, x_positions })
    }

    /// Passive (beam-splitter) choice: every pulse independently goes to X
    /// with probability `x_probability`. Consumes no input seed.
    pub fn passive<R: Rng + ?Sized>(n_pulses: u64, x_probability: f64, rng: &mut R) -> Self {
        let x_positions = (0..n_pulses).filter(|_| rng.random::<f64>() < x_probability).collect();
        Self { n_pulses, x_positions }
    }

    pub fn n_pulses(&self) -> u64 {
        self.n_pulses
    }

    pub fn x_positions(&self) -> &[u64] {
        &self.x_positions
    }

    fn x_within(&self, range: &Range<u64>) -> &[u64] {
        let lo = self.x_positions.partition_point(|&p| p < range.start);
        let hi = self.x_positions.partition_point(|&p| p < range.end);
        &self.x_positions[lo..hi]
    }
}

fn block_count(n_pulses: u64) -> u64 {
    n_pulses.div_ceil(BLOCK_PULSES)
}

/// Simulates pulses `block * BLOCK_PULSES ..` from that block's own stream.
pub fn simulate_block(apparatus: &Apparatus, plan: &BasisPlan, master_seed: u64, block: u64) -> Vec<ClickEvent> {
    simulate_block_with(&apparatus.sampler(), plan, master_seed, block)
}

fn simulate_block_with(sampler: &PulseSampler, plan: &BasisPlan, master_seed: u64, block: u64) -> Vec<ClickEvent> {
    let start = block * BLOCK_PULSES;
    let range = start..(start + BLOCK_PULSES).min(plan.n_pulses);
    let mut rng: ChaCha8Rng = stream_rng(master_seed, PHYSICS_STREAM_BASE + block);
    let mut xs = plan.x_within(&range).iter().peekable();
    range
        .map(|i| {
            let basis = if xs.next_if_eq(&&i).is_some() {
                Basis::X
            } else {
                Basis::Z
            };
            sampler.detect(i, basis, &mut rng)
        })
        .collect()
}

/// All `plan.n_pulses()` events in pulse order.
pub fn run_session(apparatus: &Apparatus, plan: &BasisPlan, master_seed: u64) -> Result<Vec<ClickEvent>, SimError> {
    let mut out = Vec::with_capacity(plan.n_pulses as usize);
    for_each_block(apparatus, plan, master_seed, |events| {
        out.extend_from_slice(events);
        Ok::<_, SimError>(())
    })?;
    Ok(out)
}

/// Streams the session block by block, in pulse order, without holding it
/// all in memory. Blocks are generated in parallel batches.
pub fn for_each_block<E, F>(apparatus: &Apparatus, plan: &BasisPlan, master_seed: u64, mut f: F) -> Result<(), E>
where
    E: From<SimError>,
    F: FnMut(&[ClickEvent]) -> Result<(), E>,
{
    const BATCH: u64 = 32;
    apparatus.validate()?;
    let sampler = apparatus.sampler();
    let blocks = block_count(plan.n_pulses);
    let mut next = 0;
    while next < blocks {
        let end = (next + BATCH).min(blocks);
        let batch: Vec<Vec<ClickEvent>> = (next..end)
            .into_par_iter()
            .map(|b| simulate_block_with(&sampler, plan, master_seed, b))
            .collect();
        for events in &batch {
            f(events)?;
        }
        next = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn honest(mu: f64, loss_db: f64, pd: f64) -> Apparatus {
        Apparatus {
            source: SourceConfig {
                mean_photon_number: mu,
                misalignment: 0.02,
                mode: SourceMode::HonestPlus,
            },
            channel: ChannelConfig { loss_db },
            detector: DetectorConfig {
                efficiency: 0.45,
                dark_count_per_gate: pd,
            },
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_mean_gives_zero_photons() {
        let mut r = rng(1);
        assert!((0..1000).all(|_| sample_photon_number(0.0, &mut r) == 0));
    }

    #[test]
    fn vacuum_probability_matches_poisson() {
        let mut r = rng(2);
        let draws = 1_000_000;
        let zeros = (0..draws).filter(|_| sample_photon_number(1.0, &mut r) == 0).count() as f64;
        let p = (-1.0f64).exp();
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((zeros / draws as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn photon_mean_matches() {
        let mut r = rng(3);
        let draws = 1_000_000;
        let sum: u64 = (0..draws).map(|_| sample_photon_number(2.0, &mut r)).sum();
        let sigma = (2.0 / draws as f64).sqrt();
        assert!((sum as f64 / draws as f64 - 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn nothing_in_nothing_out() {
        let a = honest(0.0, 0.0, 0.0);
        let mut r = rng(4);
        for basis in [Basis::X, Basis::Z] {
            for _ in 0..10_000 {
                let e = detect_pulse(a.source, a.channel, a.detector, basis, &mut r);
                assert_eq!(e.pattern, ClickPattern::None);
            }
        }
    }

    #[test]
    fn dark_counts_alone() {
        let a = honest(0.0, 0.0, 0.002);
        let plan = BasisPlan::new(10_000_000, vec![]).unwrap();
        let mut clicks = [0u64; 2];
        for_each_block(&a, &plan, 5, |ev| {
            for e in ev {
                match e.pattern {
                    ClickPattern::D0 => clicks[0] += 1,
                    ClickPattern::D1 => clicks[1] += 1,
                    ClickPattern::Double => {
                        clicks[0] += 1;
                        clicks[1] += 1
                    }
                    ClickPattern::None => {}
                }
            }
            Ok::<_, SimError>(())
        })
        .unwrap();
        let n = 1e7_f64;
        let sigma = (0.002 * 0.998 * n).sqrt();
        for c in clicks {
            assert!((c as f64 - 0.002 * n).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn perfect_alignment_never_fires_d1_in_x() {
        let mut a = honest(1.0, 0.0, 0.0);
        a.source.misalignment = 0.0;
        let mut r = rng(6);
        for _ in 0..100_000 {
            let e = detect_pulse(a.source, a.channel, a.detector, Basis::X, &mut r);
            assert!(matches!(e.pattern, ClickPattern::None | ClickPattern::D0));
        }
    }

    #[test]
    fn session_shape_and_determinism() {
        let a = honest(1.0, 3.0, 0.002);
        let empty = BasisPlan::new(0, vec![]).unwrap();
        assert!(run_session(&a, &empty, 1).unwrap().is_empty());

        let plan = BasisPlan::new(200_000, vec![0, 7, 65_536, 199_999]).unwrap();
        let s1 = run_session(&a, &plan, 9).unwrap();
        let s2 = run_session(&a, &plan, 9).unwrap();
        assert_eq!(s1.len(), 200_000);
        assert_eq!(s1, s2);
        for (i, e) in s1.iter().enumerate() {
            assert_eq!(e.pulse_index, i as u64);
            let x = plan.x_positions().contains(&(i as u64));
            assert_eq!(e.basis == Basis::X, x);
        }
        assert_ne!(s1, run_session(&a, &plan, 10).unwrap());
    }

    #[test]
    fn total_loss_is_silent() {
        let a = honest(1.0, 400.0, 0.0);
        let plan = BasisPlan::new(50_000, (0..50_000).step_by(3).collect()).unwrap();
        assert!(run_session(&a, &plan, 1)
            .unwrap()
            .iter()
            .all(|e| e.pattern == ClickPattern::None));
    }

    #[test]
    fn plan_validation() {
        assert!(BasisPlan::new(5, vec![1, 1]).is_err());
        assert!(BasisPlan::new(5, vec![5]).is_err());
        assert!(BasisPlan::new(5, vec![0, 4]).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(honest(1.0, 0.0, 0.002).validate().is_ok());
        assert!(honest(-1.0, 0.0, 0.002).validate().is_err());
        assert!(honest(1.0, -1.0, 0.002).validate().is_err());
        assert!(honest(1.0, 0.0, 1.0).validate().is_err());
        let mut a = honest(1.0, 0.0, 0.0);
        a.source.misalignment = 0.6;
        assert!(a.validate().is_err());
    }
}
