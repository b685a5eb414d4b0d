//! `siqrng`: simulate, tally, estimate, extract, test and sweep.
//!
//! Every subcommand reads and writes files under `--out`. Exit status is 0
//! on success, 2 when the protocol aborts (an `abort.json` record is
//! written) and 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use siqrng_core::config::{RunConfig, Seed64, SweepSpec};
use siqrng_core::estimation::{estimate, EstimationResult};
use siqrng_core::extractor::{extract_session, ExtractError, SessionPlan};
use siqrng_core::formats::{
    read_bits, read_clicks_with, read_json, write_atomic, write_bits, write_clicks_with, write_json,
};
use siqrng_core::pipeline::{
    basis_plan, double_click_seed, finish_session, simulate_and_tally, sweep, toeplitz_seed, write_curve_csv,
    PipelineError, SeedLedger,
};
use siqrng_core::randtest::{autocorrelation, compare_raw_vs_final, run_battery, BatteryConfig, TestReport};
use siqrng_core::sampling::{squash_into, SessionTally};
use siqrng_core::{BitBlock, SecurityReport};

const SIMULATION_FILE: &str = "simulation.json";
const CLICKS_FILE: &str = "clicks.siqc";
const TALLY_FILE: &str = "tally.json";
const Z_BITS_FILE: &str = "z_bits.siq1";
const ESTIMATION_FILE: &str = "estimation.json";
const FINAL_FILE: &str = "final.siq1";
const SECURITY_FILE: &str = "security.json";
const REPORT_FILE: &str = "test_report.json";
const AUTOCORR_FILE: &str = "autocorrelation.csv";
const CURVE_FILE: &str = "curve.csv";
const ABORT_FILE: &str = "abort.json";
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "siqrng", version, about = "Source-independent QRNG post-processing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for all outputs and default inputs.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Master seed override, hex.
    #[arg(long, global = true, value_name = "HEX64")]
    seed: Option<Seed64>,
    /// Sweep override, e.g. `loss_db=0,2,4`.
    #[arg(long, global = true, value_name = "KEY=v1,v2,...")]
    sweep: Option<SweepSpec>,
    /// Extractor security parameter `t_e`.
    #[arg(long, global = true, value_name = "N")]
    te: Option<u32>,
    /// Target sampling failure exponent: `eps_theta = 2^-N`.
    #[arg(long = "eps-exponent", global = true, value_name = "N")]
    eps_exponent: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a session and write its click records.
    Simulate,
    /// Squash click records into a tally and the raw Z bit file.
    Tally {
        #[arg(long, value_name = "PATH")]
        clicks: Option<PathBuf>,
    },
    /// Estimate the phase error bound from a tally.
    Estimate {
        #[arg(long, value_name = "PATH")]
        tally: Option<PathBuf>,
    },
    /// Hash raw Z bits to the final output.
    Extract {
        #[arg(long = "z-bits", value_name = "PATH")]
        z_bits: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        estimation: Option<PathBuf>,
    },
    /// Run the statistical battery on a bit file.
    Test {
        /// Bits to test; the final output under `--out` by default.
        #[arg(long, value_name = "PATH")]
        bits: Option<PathBuf>,
        /// Raw bits to compare autocorrelation against.
        #[arg(long, value_name = "PATH")]
        raw: Option<PathBuf>,
        /// Equal sub-sequences the battery splits the input into.
        #[arg(long, default_value_t = BatteryConfig::default().subsequences)]
        subsequences: usize,
    },
    /// Curve of estimates and output lengths over the sweep values.
    Sweep,
    /// All stages in order.
    Pipeline,
}

enum Status {
    Done,
    Aborted,
}

#[derive(Debug, Serialize)]
struct SimulationRecord {
    master_seed: Seed64,
    pulses: u64,
    x_positions: u64,
    basis_plan_bits: u64,
}

#[derive(Debug, Serialize)]
struct AbortRecord {
    abort: bool,
    stage: &'static str,
    reason: String,
    e_bx: f64,
    theta: f64,
    e_pz_bound: f64,
    n: u64,
    n_x: u64,
}

impl AbortRecord {
    fn new(stage: &'static str, reason: impl Into<String>, est: &EstimationResult<f64>) -> Self {
        Self {
            abort: true,
            stage,
            reason: reason.into(),
            e_bx: est.e_bx,
            theta: est.theta,
            e_pz_bound: est.e_pz_bound,
            n: est.n,
            n_x: est.n_x,
        }
    }
}

#[derive(Debug, Serialize)]
struct SecurityRecord {
    output_bits: u64,
    report: SecurityReport,
    plan: SessionPlan,
    toeplitz_seed_bits: u64,
}

#[derive(Debug, Serialize)]
struct RunRecord {
    master_seed: Seed64,
    output_bits: u64,
    seed_ledger: SeedLedger,
    estimation: EstimationResult<f64>,
    security: SecurityReport,
    battery_pass: Option<bool>,
}

struct Workdir {
    cfg: RunConfig,
    out: PathBuf,
}

impl Workdir {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: Option<PathBuf>, name: &str) -> PathBuf {
        given.unwrap_or_else(|| self.path(name))
    }

    fn abort(&self, record: &AbortRecord) -> Result<Status> {
        write_json(&self.path(ABORT_FILE), record)?;
        eprintln!(
            "abort at {}: {} (e_bx = {:.4}, theta = {:.4})",
            record.stage, record.reason, record.e_bx, record.theta
        );
        Ok(Status::Aborted)
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    if let Some(spec) = &g.sweep {
        cfg.sweep = Some(spec.clone());
    }
    if let Some(te) = g.te {
        cfg.params.t_e = te;
    }
    if let Some(x) = g.eps_exponent {
        cfg.params.eps_theta_exponent = x;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Simulates into the click file and returns the tally and basis-plan bits.
fn simulate(ctx: &Workdir) -> Result<(SessionTally, u64)> {
    let cfg = &ctx.cfg;
    let (plan, basis_bits) = basis_plan(cfg)?;
    let mut tally = None;
    write_clicks_with(&ctx.path(CLICKS_FILE), plan.n_pulses(), |sink| {
        let t = simulate_and_tally(cfg, &plan, |events| {
            sink(events).map_err(|e| PipelineError::Config(format!("writing click records: {e}")))
        })
        .map_err(std::io::Error::other)?;
        tally = Some(t);
        Ok(())
    })?;
    write_json(
        &ctx.path(SIMULATION_FILE),
        &SimulationRecord {
            master_seed: cfg.master_seed,
            pulses: plan.n_pulses(),
            x_positions: plan.x_positions().len() as u64,
            basis_plan_bits: basis_bits,
        },
    )?;
    Ok((tally.expect("simulation ran"), basis_bits))
}

fn write_tally(ctx: &Workdir, tally: &SessionTally) -> Result<()> {
    write_json(&ctx.path(TALLY_FILE), tally)?;
    write_bits(&ctx.path(Z_BITS_FILE), &tally.z_bits)?;
    Ok(())
}

fn cmd_simulate(ctx: &Workdir) -> Result<Status> {
    let (tally, basis_bits) = simulate(ctx)?;
    println!(
        "simulated {} pulses: {} non-vacuum, {} in X; basis plan used {} seed bits",
        ctx.cfg.params.total_pulses, tally.n, tally.n_x, basis_bits
    );
    Ok(Status::Done)
}

fn cmd_tally(ctx: &Workdir, clicks: Option<PathBuf>) -> Result<Status> {
    let path = ctx.input(clicks, CLICKS_FILE);
    let mut seed = double_click_seed(&ctx.cfg);
    let mut tally = SessionTally::default();
    read_clicks_with(&path, |events| {
        squash_into(&mut tally, events, &mut seed).map_err(|e| siqrng_core::formats::FormatError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })
    })?;
    write_tally(ctx, &tally)?;
    println!(
        "n = {}, n_x = {}, n_z = {}, x_minus = {}, x_double = {}, z_double = {}",
        tally.n, tally.n_x, tally.n_z, tally.x_minus, tally.x_double, tally.z_double
    );
    Ok(Status::Done)
}

fn cmd_estimate(ctx: &Workdir, tally: Option<PathBuf>) -> Result<Status> {
    let tally: SessionTally = read_json(&ctx.input(tally, TALLY_FILE))?;
    let est = estimate(&tally, &ctx.cfg.params)?;
    write_json(&ctx.path(ESTIMATION_FILE), &est)?;
    println!(
        "e_bx = {:.6}, theta = {:.6}, e_pz bound = {:.6}",
        est.e_bx, est.theta, est.e_pz_bound
    );
    if est.abort {
        return ctx.abort(&AbortRecord::new("estimate", "phase error bound reaches 1/2", &est));
    }
    Ok(Status::Done)
}

fn cmd_extract(ctx: &Workdir, z_bits: Option<PathBuf>, estimation: Option<PathBuf>) -> Result<Status> {
    let raw = read_bits(&ctx.input(z_bits, Z_BITS_FILE))?;
    let est: EstimationResult<f64> = read_json(&ctx.input(estimation, ESTIMATION_FILE))?;
    if raw.len() as u64 != est.n - est.n_x {
        bail!(
            "raw file has {} bits but the estimation counts n_z = {}",
            raw.len(),
            est.n - est.n_x
        );
    }
    if est.abort {
        return ctx.abort(&AbortRecord::new("extract", "estimation aborted", &est));
    }
    let p = &ctx.cfg.params;
    let x = match extract_session(
        &raw,
        &est,
        p.t_e,
        p.efficiency_ratio,
        ctx.cfg.extraction_block_bits,
        &mut toeplitz_seed(&ctx.cfg),
    ) {
        Ok(x) => x,
        Err(e @ (ExtractError::NonPositiveLength(_) | ExtractError::Aborted)) => {
            return ctx.abort(&AbortRecord::new("extract", e.to_string(), &est));
        }
        Err(e) => return Err(e.into()),
    };
    write_bits(&ctx.path(FINAL_FILE), &x.output)?;
    write_json(
        &ctx.path(SECURITY_FILE),
        &SecurityRecord {
            output_bits: x.output.len() as u64,
            report: x.report,
            plan: x.plan.clone(),
            toeplitz_seed_bits: x.seed_bits_consumed,
        },
    )?;
    println!(
        "{} raw bits -> {} output bits in {} block(s), eps_t = {:.3e}",
        raw.len(),
        x.output.len(),
        x.plan.blocks.len(),
        x.report.eps_t
    );
    Ok(Status::Done)
}

fn write_single_autocorr(path: &Path, curve: &[f64]) -> Result<()> {
    let mut text = String::from("j,r\n");
    for (j, r) in curve.iter().enumerate() {
        text.push_str(&format!("{},{}\n", j + 1, r));
    }
    write_atomic(path, |w| std::io::Write::write_all(w, text.as_bytes()))?;
    Ok(())
}

fn battery(ctx: &Workdir, bits: &BitBlock, raw: Option<&BitBlock>, subsequences: usize) -> Result<TestReport> {
    let config = BatteryConfig {
        subsequences,
        ..BatteryConfig::default()
    };
    let report = run_battery(bits, &config)?;
    write_json(&ctx.path(REPORT_FILE), &report)?;
    match raw {
        Some(raw) => {
            compare_raw_vs_final(raw, bits, config.max_lag)?.write_csv(&ctx.path(AUTOCORR_FILE))?;
        }
        None => write_single_autocorr(&ctx.path(AUTOCORR_FILE), &autocorrelation(bits, config.max_lag)?)?,
    }
    for r in &report.records {
        println!(
            "{:<16} proportion {:.2}  uniformity p {:.4}  {}",
            r.name,
            r.proportion,
            r.p_value,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!("max |R(j)| = {:.3e}", report.autocorrelation_max_abs);
    Ok(report)
}

fn cmd_test(ctx: &Workdir, bits: Option<PathBuf>, raw: Option<PathBuf>, subsequences: usize) -> Result<Status> {
    let bits = read_bits(&ctx.input(bits, FINAL_FILE))?;
    let raw = raw.map(|p| read_bits(&p)).transpose()?;
    battery(ctx, &bits, raw.as_ref(), subsequences)?;
    Ok(Status::Done)
}

fn cmd_sweep(ctx: &Workdir) -> Result<Status> {
    if ctx.cfg.sweep.is_none() {
        bail!("no sweep given in the config or with --sweep");
    }
    let points = sweep(&ctx.cfg)?;
    write_curve_csv(&ctx.path(CURVE_FILE), &points)?;
    for p in &points {
        println!(
            "loss {:>5.1} dB  mu {:.3}  e_bx {:.4}  theta {:.4}  K {:>9}{}",
            p.loss_db,
            p.mean_photon_number,
            p.e_bx,
            p.theta,
            p.k,
            if p.abort { "  abort" } else { "" }
        );
    }
    Ok(Status::Done)
}

fn cmd_pipeline(ctx: &Workdir) -> Result<Status> {
    let (tally, basis_bits) = simulate(ctx)?;
    write_tally(ctx, &tally)?;
    let run = finish_session(&ctx.cfg, tally, basis_bits)?;
    write_json(&ctx.path(ESTIMATION_FILE), &run.estimation)?;
    let Some(x) = &run.extraction else {
        let reason = if run.estimation.abort {
            "phase error bound reaches 1/2"
        } else {
            "no positive output length"
        };
        return ctx.abort(&AbortRecord::new("pipeline", reason, &run.estimation));
    };
    write_bits(&ctx.path(FINAL_FILE), &x.output)?;
    write_json(
        &ctx.path(SECURITY_FILE),
        &SecurityRecord {
            output_bits: x.output.len() as u64,
            report: x.report,
            plan: x.plan.clone(),
            toeplitz_seed_bits: x.seed_bits_consumed,
        },
    )?;
    let config = BatteryConfig::default();
    let battery_pass = match battery(ctx, &x.output, Some(&run.tally.z_bits), config.subsequences) {
        Ok(report) => Some(report.all_pass),
        Err(e) => {
            eprintln!("battery skipped: {e}");
            None
        }
    };
    write_json(
        &ctx.path(RUN_FILE),
        &RunRecord {
            master_seed: ctx.cfg.master_seed,
            output_bits: x.output.len() as u64,
            seed_ledger: run.seeds,
            estimation: run.estimation,
            security: x.report,
            battery_pass,
        },
    )?;
    println!(
        "n_z = {}, e_pz bound = {:.4}: {} output bits, eps_t = {:.3e}, seed spent {} (excluding Toeplitz {})",
        run.tally.n_z,
        run.estimation.e_pz_bound,
        x.output.len(),
        x.report.eps_t,
        run.seeds.total,
        run.seeds.consumed_excluding_toeplitz()
    );
    Ok(Status::Done)
}

fn run(cli: Cli) -> Result<Status> {
    let cfg = load_config(&cli.global)?;
    std::fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    let ctx = Workdir {
        cfg,
        out: cli.global.out,
    };
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Tally { clicks } => cmd_tally(&ctx, clicks),
        Command::Estimate { tally } => cmd_estimate(&ctx, tally),
        Command::Extract { z_bits, estimation } => cmd_extract(&ctx, z_bits, estimation),
        Command::Test {
            bits,
            raw,
            subsequences,
        } => cmd_test(&ctx, bits, raw, subsequences),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Pipeline => cmd_pipeline(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the generic error status; 2 is reserved for aborts
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Aborted) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
