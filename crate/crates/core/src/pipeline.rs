//! End-to-end runs: basis plan, simulation, squashing and tally,
//! estimation, extraction and the statistical battery, plus loss and
//! intensity sweeps.
//!
//! All randomness derives from the master seed through named streams, so a
//! run is a pure function of its configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{RngSeedSource, SeedSource};
use crate::config::{BasisChoice, RunConfig};
use crate::entropy::{composed_security_log2, EntropyError};
use crate::estimation::{estimate, EstimationError, EstimationResult};
use crate::extractor::{extract_session, plan_session, ExtractError, SessionExtraction};
use crate::formats::{write_atomic, FormatError};
use crate::rng::{stream_rng, BASIS_SEED_STREAM, DOUBLE_CLICK_SEED_STREAM, PASSIVE_BASIS_STREAM, TOEPLITZ_SEED_STREAM};
use crate::sampling::{plan_basis_positions, squash_into, SamplingError, SessionTally};
use crate::sim::{for_each_block, BasisPlan, ClickEvent, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Input-seed bits spent, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub basis_plan_bits: u64,
    pub z_double_bits: u64,
    pub toeplitz_bits: u64,
    pub total: u64,
}

impl SeedLedger {
    pub fn new(basis_plan_bits: u64, z_double_bits: u64, toeplitz_bits: u64) -> Self {
        Self {
            basis_plan_bits,
            z_double_bits,
            toeplitz_bits,
            total: basis_plan_bits + z_double_bits + toeplitz_bits,
        }
    }

    /// Seed spent on anything but the reusable Toeplitz matrix.
    pub fn consumed_excluding_toeplitz(&self) -> u64 {
        self.basis_plan_bits + self.z_double_bits
    }
}

/// X positions for the configured basis choice, with the seed bits spent.
pub fn basis_plan(cfg: &RunConfig) -> Result<(BasisPlan, u64), PipelineError> {
    let n = cfg.params.total_pulses;
    match cfg.basis_choice {
        BasisChoice::Active => {
            let mut seed = RngSeedSource::new(stream_rng(cfg.master_seed.0, BASIS_SEED_STREAM));
            let sel = plan_basis_positions(n, cfg.params.planned_x_count, &mut seed)?;
            Ok((BasisPlan::new(n, sel.positions)?, sel.seed_bits_consumed))
        }
        BasisChoice::Passive { x_probability } => {
            let mut rng = stream_rng(cfg.master_seed.0, PASSIVE_BASIS_STREAM);
            Ok((BasisPlan::passive(n, x_probability, &mut rng), 0))
        }
    }
}

/// Simulates the session and folds it into a tally block by block.
/// `on_events` sees every block in pulse order (for example to record it).
pub fn simulate_and_tally<F>(cfg: &RunConfig, plan: &BasisPlan, mut on_events: F) -> Result<SessionTally, PipelineError>
where
    F: FnMut(&[ClickEvent]) -> Result<(), PipelineError>,
{
    let mut seed = double_click_seed(cfg);
    let mut tally = SessionTally::default();
    for_each_block(&cfg.apparatus(), plan, cfg.master_seed.0, |events| {
        on_events(events)?;
        squash_into(&mut tally, events, &mut seed)?;
        Ok::<_, PipelineError>(())
    })?;
    Ok(tally)
}

/// Tallies recorded click events with the configured double-click seed.
pub fn tally_events<'a, I>(cfg: &RunConfig, events: I) -> Result<SessionTally, PipelineError>
where
    I: IntoIterator<Item = &'a ClickEvent>,
{
    let mut seed = double_click_seed(cfg);
    let mut tally = SessionTally::default();
    squash_into(&mut tally, events, &mut seed)?;
    Ok(tally)
}

/// Seed for random bits assigned to Z double clicks.
pub fn double_click_seed(cfg: &RunConfig) -> impl SeedSource {
    RngSeedSource::new(stream_rng(cfg.master_seed.0, DOUBLE_CLICK_SEED_STREAM))
}

/// Toeplitz seed for the configured master seed.
pub fn toeplitz_seed(cfg: &RunConfig) -> impl SeedSource {
    RngSeedSource::new(stream_rng(cfg.master_seed.0, TOEPLITZ_SEED_STREAM))
}

/// Hashes the tally's Z bits with the configured seed and block size.
pub fn extract(
    cfg: &RunConfig,
    tally: &SessionTally,
    est: &EstimationResult<f64>,
) -> Result<SessionExtraction<f64>, PipelineError> {
    Ok(extract_session(
        &tally.z_bits,
        est,
        cfg.params.t_e,
        cfg.params.efficiency_ratio,
        cfg.extraction_block_bits,
        &mut toeplitz_seed(cfg),
    )?)
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub tally: SessionTally,
    pub estimation: EstimationResult<f64>,
    /// `None` when the run aborted.
    pub extraction: Option<SessionExtraction<f64>>,
    pub seeds: SeedLedger,
}

impl SessionRun {
    pub fn aborted(&self) -> bool {
        self.extraction.is_none()
    }
}

/// Basis plan, simulation, tally, estimation and, unless aborted, extraction.
pub fn run_session(cfg: &RunConfig) -> Result<SessionRun, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let (plan, basis_bits) = basis_plan(cfg)?;
    let tally = simulate_and_tally(cfg, &plan, |_| Ok(()))?;
    finish_session(cfg, tally, basis_bits)
}

/// Estimation and extraction of an existing tally.
pub fn finish_session(cfg: &RunConfig, tally: SessionTally, basis_bits: u64) -> Result<SessionRun, PipelineError> {
    let estimation = estimate(&tally, &cfg.params)?;
    let extraction = if estimation.abort {
        None
    } else {
        match extract(cfg, &tally, &estimation) {
            Ok(x) => Some(x),
            // too little raw data for a positive length is an abort, not an error
            Err(PipelineError::Extract(ExtractError::NonPositiveLength(_) | ExtractError::Aborted)) => None,
            Err(e) => return Err(e),
        }
    };
    let toeplitz = extraction.as_ref().map_or(0, |x| x.seed_bits_consumed);
    Ok(SessionRun {
        seeds: SeedLedger::new(basis_bits, tally.seed_bits_consumed, toeplitz),
        tally,
        estimation,
        extraction,
    })
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub loss_db: f64,
    pub mean_photon_number: f64,
    pub e_bx: f64,
    pub theta: f64,
    pub e_pz_bound: f64,
    pub n: u64,
    pub n_x: u64,
    pub n_z: u64,
    #[serde(rename = "K")]
    pub k: u64,
    /// `K` per session duration `N / repetition_rate`, capped by the dead time.
    pub rate_bits_per_s: f64,
    /// Empty when the point aborted.
    pub eps_t: Option<f64>,
    pub abort: bool,
}

/// Estimation and output length at one configuration, without hashing.
pub fn curve_point(cfg: &RunConfig) -> Result<CurvePoint, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let (plan, _) = basis_plan(cfg)?;
    curve_point_with_plan(cfg, &plan)
}

fn curve_point_with_plan(cfg: &RunConfig, plan: &BasisPlan) -> Result<CurvePoint, PipelineError> {
    let tally = simulate_and_tally(cfg, plan, |_| Ok(()))?;
    let mut point = CurvePoint {
        loss_db: cfg.channel.loss_db,
        mean_photon_number: cfg.source.mean_photon_number,
        e_bx: f64::NAN,
        theta: f64::NAN,
        e_pz_bound: f64::NAN,
        n: tally.n,
        n_x: tally.n_x,
        n_z: tally.n_z,
        k: 0,
        rate_bits_per_s: 0.0,
        eps_t: None,
        abort: true,
    };
    let est = match estimate(&tally, &cfg.params) {
        Ok(est) => est,
        Err(EstimationError::NoXSample | EstimationError::NoZSample) => return Ok(point),
        Err(e) => return Err(e.into()),
    };
    point.e_bx = est.e_bx;
    point.theta = est.theta;
    point.e_pz_bound = est.e_pz_bound;
    if est.abort {
        return Ok(point);
    }
    let session = match plan_session(
        tally.n_z,
        est.e_pz_bound,
        cfg.params.t_e,
        cfg.params.efficiency_ratio,
        cfg.extraction_block_bits,
    ) {
        Ok(s) => s,
        Err(ExtractError::NonPositiveLength(_) | ExtractError::Aborted) => return Ok(point),
        Err(e) => return Err(e.into()),
    };
    let report = composed_security_log2(est.log2_eps_theta, cfg.params.t_e, session.blocks.len() as u64)?;
    point.k = session.output_len();
    let duration = cfg.params.total_pulses as f64 / cfg.repetition_rate_hz;
    point.rate_bits_per_s = (point.k as f64 / duration).min(cfg.rate_ceiling());
    point.eps_t = Some(report.eps_t);
    point.abort = false;
    Ok(point)
}

/// Curve over the configured sweep; every point reuses the master seed.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<CurvePoint>, PipelineError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| PipelineError::Config("no sweep specified".into()))?;
    // neither sweep key touches N, N_x or the seed, so the plan is shared
    let (plan, _) = basis_plan(cfg)?;
    spec.values
        .iter()
        .map(|&v| {
            let mut point_cfg = cfg.clone();
            point_cfg.sweep = None;
            point_cfg.set_sweep_value(spec.key, v);
            point_cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            curve_point_with_plan(&point_cfg, &plan)
        })
        .collect()
}

/// The CSV header, in column order.
pub const CURVE_COLUMNS: [&str; 12] = [
    "loss_db",
    "mean_photon_number",
    "e_bx",
    "theta",
    "e_pz_bound",
    "n",
    "n_x",
    "n_z",
    "K",
    "rate_bits_per_s",
    "eps_t",
    "abort",
];

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for p in points {
            w.serialize(p).map_err(|e| PipelineError::Config(format!("csv: {e}")))?;
        }
        if points.is_empty() {
            w.write_record(CURVE_COLUMNS)
                .map_err(|e| PipelineError::Config(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| PipelineError::Config(format!("csv: {e}")))?;
    }
    write_atomic(path, |w| std::io::Write::write_all(w, &buf))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Seed64, SweepSpec};
    use crate::sim::SourceMode;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.params.total_pulses = 200_000;
        cfg.params.planned_x_count = 10_000;
        cfg.master_seed = Seed64(3);
        cfg
    }

    #[test]
    fn honest_session_end_to_end() {
        let cfg = small();
        let run = run_session(&cfg).unwrap();
        assert!(!run.aborted());
        let t = &run.tally;
        assert_eq!(t.n, t.n_x + t.n_z);
        assert_eq!(t.z_bits.len() as u64, t.n_z);
        assert_eq!(t.seed_bits_consumed, t.z_double);
        assert!(t.x_minus + t.x_double <= t.n_x);
        assert!(run.estimation.e_pz_bound < 0.1, "{:?}", run.estimation);
        let x = run.extraction.as_ref().unwrap();
        assert!(!x.output.is_empty());
        assert_eq!(run.seeds.toeplitz_bits, x.plan.seed_length);
        assert_eq!(
            run.seeds.total,
            run.seeds.basis_plan_bits + t.z_double + run.seeds.toeplitz_bits
        );
        // byte-identical reruns
        let again = run_session(&cfg).unwrap();
        assert_eq!(again.extraction.unwrap().output, x.output);
    }

    #[test]
    fn adversarial_session_aborts() {
        let mut cfg = small();
        cfg.source.mode = SourceMode::AdversarialFixedZ;
        let run = run_session(&cfg).unwrap();
        assert!(run.aborted());
        assert!(run.estimation.abort);
        assert!((run.estimation.e_bx - 0.5).abs() < 0.05);
        assert_eq!(run.seeds.toeplitz_bits, 0);
    }

    #[test]
    fn passive_choice_spends_no_basis_seed() {
        let mut cfg = small();
        cfg.basis_choice = BasisChoice::Passive { x_probability: 0.05 };
        let (plan, bits) = basis_plan(&cfg).unwrap();
        assert_eq!(bits, 0);
        let share = plan.x_positions().len() as f64 / plan.n_pulses() as f64;
        assert!((share - 0.05).abs() < 0.005);
        let (active, bits) = basis_plan(&small()).unwrap();
        assert_eq!(active.x_positions().len(), 10_000);
        assert_eq!(bits % crate::sampling::seed_length_required(200_000, 10_000), 0);
    }

    #[test]
    fn sweep_columns_and_monotone_length() {
        let mut cfg = small();
        cfg.sweep = Some("loss_db=0,6,12,40".parse::<SweepSpec>().unwrap());
        let points = sweep(&cfg).unwrap();
        assert_eq!(points.len(), 4);
        for w in points.windows(2) {
            assert!(w[1].k <= w[0].k);
        }
        assert!(points[3].abort);
        assert_eq!(points[3].k, 0);
        assert!(points[0].rate_bits_per_s > 0.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&path, &points).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CURVE_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 5);
        write_curve_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), CURVE_COLUMNS.join(","));
    }

    #[test]
    fn rate_is_capped_by_dead_time() {
        let mut cfg = small();
        cfg.repetition_rate_hz = 1e9;
        let p = curve_point(&cfg).unwrap();
        assert_eq!(p.rate_bits_per_s, 2e7);
    }
}
