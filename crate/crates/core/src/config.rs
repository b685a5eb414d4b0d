//! Run configuration, loaded from one JSON document.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::entropy::ProtocolParams;
use crate::extractor::DEFAULT_BLOCK_BITS;
use crate::sim::{Apparatus, ChannelConfig, DetectorConfig, SourceConfig, SourceMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// 64-bit master seed; serialised as a `0x`-prefixed hex string, read from
/// either a hex string or a JSON integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed64(pub u64);

impl FromStr for Seed64 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let digits = s.trim().trim_start_matches("0x").trim_start_matches("0X");
        if digits.is_empty() || digits.len() > 16 {
            return Err(format!("seed {s:?} is not 1-16 hex digits"));
        }
        u64::from_str_radix(digits, 16)
            .map(Seed64)
            .map_err(|e| format!("seed {s:?}: {e}"))
    }
}

impl fmt::Display for Seed64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:016x}", self.0)
    }
}

impl Serialize for Seed64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Seed64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Seed64;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a hex string or an unsigned integer")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Seed64, E> {
                Ok(Seed64(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Seed64, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    LossDb,
    MeanPhotonNumber,
}

impl FromStr for SweepKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loss_db" => Ok(SweepKey::LossDb),
            "mean_photon_number" => Ok(SweepKey::MeanPhotonNumber),
            other => Err(format!("unknown sweep key {other:?} (loss_db or mean_photon_number)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

impl FromStr for SweepSpec {
    type Err = String;

    /// `KEY=v1,v2,...`
    fn from_str(s: &str) -> Result<Self, String> {
        let (key, values) = s.split_once('=').ok_or("sweep must look like KEY=v1,v2,...")?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("sweep value {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            key: key.trim().parse()?,
            values,
        })
    }
}

/// How pulses are assigned to bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisChoice {
    /// Exactly `planned_x_count` X positions drawn from the input seed.
    Active,
    /// Each pulse independently to X with `x_probability`; consumes no seed.
    Passive { x_probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ProtocolParams<f64>,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    pub master_seed: Seed64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_basis_choice")]
    pub basis_choice: BasisChoice,
    #[serde(default = "default_block_bits")]
    pub extraction_block_bits: u64,
    #[serde(default = "default_repetition_rate")]
    pub repetition_rate_hz: f64,
    #[serde(default = "default_dead_time")]
    pub dead_time_ns: f64,
}

fn default_basis_choice() -> BasisChoice {
    BasisChoice::Active
}

fn default_block_bits() -> u64 {
    DEFAULT_BLOCK_BITS
}

fn default_repetition_rate() -> f64 {
    1e6
}

fn default_dead_time() -> f64 {
    50.0
}

impl Default for RunConfig {
    /// Low-loss honest setup: 10^6 pulses, 2% of them in X, 45% detector
    /// efficiency, 0.002 dark counts per gate, 2% misalignment.
    fn default() -> Self {
        Self {
            params: ProtocolParams {
                total_pulses: 1_000_000,
                planned_x_count: 20_000,
                eps_theta_exponent: 100.0,
                t_e: 100,
                efficiency_ratio: 1.0,
            },
            source: SourceConfig {
                mean_photon_number: 1.0,
                misalignment: 0.02,
                mode: SourceMode::HonestPlus,
            },
            channel: ChannelConfig { loss_db: 0.0 },
            detector: DetectorConfig {
                efficiency: 0.45,
                dark_count_per_gate: 0.002,
            },
            master_seed: Seed64(0x5eed),
            sweep: None,
            basis_choice: BasisChoice::Active,
            extraction_block_bits: DEFAULT_BLOCK_BITS,
            repetition_rate_hz: 1e6,
            dead_time_ns: 50.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apparatus(&self) -> Apparatus {
        Apparatus {
            source: self.source,
            channel: self.channel,
            detector: self.detector,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.apparatus()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let BasisChoice::Passive { x_probability } = self.basis_choice {
            if !(x_probability > 0.0 && x_probability < 1.0) {
                return bad(format!("x_probability {x_probability} must be in (0, 1)"));
            }
        }
        if self.extraction_block_bits == 0 {
            return bad("extraction_block_bits must be positive".into());
        }
        if !(self.repetition_rate_hz > 0.0 && self.repetition_rate_hz.is_finite()) {
            return bad(format!(
                "repetition_rate_hz {} must be positive",
                self.repetition_rate_hz
            ));
        }
        if !(self.dead_time_ns >= 0.0 && self.dead_time_ns.is_finite()) {
            return bad(format!("dead_time_ns {} must be >= 0", self.dead_time_ns));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad("sweep has no values".into());
            }
            for &v in &sweep.values {
                let mut probe = self.clone();
                probe.sweep = None;
                probe.set_sweep_value(sweep.key, v);
                probe
                    .apparatus()
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("sweep value {v}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn set_sweep_value(&mut self, key: SweepKey, value: f64) {
        match key {
            SweepKey::LossDb => self.channel.loss_db = value,
            SweepKey::MeanPhotonNumber => self.source.mean_photon_number = value,
        }
    }

    /// Output rate ceiling from the detector dead time, in bit/s.
    pub fn rate_ceiling(&self) -> f64 {
        if self.dead_time_ns > 0.0 {
            1e9 / self.dead_time_ns
        } else {
            f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_parsing() {
        assert_eq!("0x10".parse::<Seed64>().unwrap(), Seed64(16));
        assert_eq!("ffffffffffffffff".parse::<Seed64>().unwrap(), Seed64(u64::MAX));
        assert!("0x".parse::<Seed64>().is_err());
        assert!("12345678901234567".parse::<Seed64>().is_err());
        assert!("xyz".parse::<Seed64>().is_err());
        assert_eq!(Seed64(255).to_string(), "0x00000000000000ff");
    }

    #[test]
    fn sweep_parsing() {
        let s: SweepSpec = "loss_db=0,2.5,10".parse().unwrap();
        assert_eq!(s.key, SweepKey::LossDb);
        assert_eq!(s.values, vec![0.0, 2.5, 10.0]);
        assert!("gain=1".parse::<SweepSpec>().is_err());
        assert!("loss_db".parse::<SweepSpec>().is_err());
        assert!("loss_db=a".parse::<SweepSpec>().is_err());
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);

        let minimal = r#"{
            "params": {"total_pulses": 1000, "planned_x_count": 100, "eps_theta_exponent": 50,
                       "t_e": 20, "efficiency_ratio": 1},
            "source": {"mean_photon_number": 1, "misalignment": 0.02},
            "channel": {"loss_db": 3},
            "detector": {"efficiency": 0.45, "dark_count_per_gate": 0.002},
            "master_seed": 7,
            "basis_choice": {"mode": "passive", "x_probability": 0.1}
        }"#;
        let cfg = RunConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.master_seed, Seed64(7));
        assert_eq!(cfg.source.mode, SourceMode::HonestPlus);
        assert_eq!(cfg.basis_choice, BasisChoice::Passive { x_probability: 0.1 });
        assert_eq!(cfg.extraction_block_bits, DEFAULT_BLOCK_BITS);
        assert_eq!(cfg.rate_ceiling(), 2e7);
    }

    #[test]
    fn rejects_bad_documents() {
        let good = serde_json::to_value(RunConfig::default()).unwrap();
        let with = |path: &[&str], v: serde_json::Value| {
            let mut doc = good.clone();
            let mut at = &mut doc;
            for p in &path[..path.len() - 1] {
                at = &mut at[*p];
            }
            at[path[path.len() - 1]] = v;
            RunConfig::from_json(&doc.to_string())
        };
        assert!(with(&["params", "planned_x_count"], 0.into()).is_err());
        assert!(with(&["params", "t_e"], 0.into()).is_err());
        assert!(with(&["detector", "efficiency"], 1.5.into()).is_err());
        assert!(with(&["channel", "loss_db"], (-1.0).into()).is_err());
        assert!(with(&["repetition_rate_hz"], 0.into()).is_err());
        assert!(with(&["master_seed"], "0xZZ".into()).is_err());
        assert!(with(&["unexpected"], 1.into()).is_err());
        assert!(with(&["sweep"], serde_json::json!({"key": "loss_db", "values": []})).is_err());
        assert!(with(&["sweep"], serde_json::json!({"key": "loss_db", "values": [0, -3]})).is_err());
        assert!(with(&["sweep"], serde_json::json!({"key": "loss_db", "values": [0, 3]})).is_ok());
    }
}
