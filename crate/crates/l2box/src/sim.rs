//! Seeded Monte-Carlo experiments: BER-vs-SNR sweeps, per-iteration timing
//! benches, and CSV/JSON output.
//!
//! Every trial derives its own ChaCha substream from (seed, snr index, trial
//! index), so results are independent of scheduling and all detectors within
//! a trial see the same channel, bits, and noise realization.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::baselines::{self, MlSearchBudget};
use crate::detector::{self, AdmmConfig, PenaltySchedule};
use crate::model;
use crate::{Error, Result};

/// One detector entry of an experiment, with its ℓ2-box parameters (ignored
/// by the linear/ML baselines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub name: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_alpha() -> f64 {
    detector::DEFAULT_ALPHA
}
fn default_max_iters() -> usize {
    detector::DEFAULT_MAX_ITERS
}
fn default_tol() -> f64 {
    detector::DEFAULT_TOL
}

impl DetectorSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            alpha: default_alpha(),
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }
}

pub const DETECTOR_NAMES: &[&str] = &["l2box", "mmse", "zf", "ml"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub b: usize,
    pub u: usize,
    pub q: u32,
    pub snr_db_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub capture_traces: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        if self.u < 1 || self.b < self.u {
            return Err(Error::Invalid(format!(
                "need B >= U >= 1, got B={}, U={}",
                self.b, self.u
            )));
        }
        if self.snr_db_list.is_empty() {
            return Err(Error::Invalid("snr_db_list must be non-empty".into()));
        }
        if self.q < 1 {
            return Err(Error::Invalid("Q must be >= 1".into()));
        }
        for d in &self.detectors {
            if !DETECTOR_NAMES.contains(&d.name.as_str()) {
                return Err(Error::Invalid(format!(
                    "unknown detector '{}'; valid names: {}",
                    d.name,
                    DETECTOR_NAMES.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// One Monte-Carlo sweep point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BerRecord {
    pub detector: String,
    pub snr_db: f64,
    pub u: usize,
    pub b: usize,
    pub q: u32,
    pub trials: usize,
    pub total_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub avg_iterations: f64,
    pub avg_detect_micros: f64,
}

/// Per-detector outcome of a single trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialOutcome {
    pub bit_errors: u64,
    pub iterations: usize,
    pub micros: f64,
}

/// Deterministic substream for (seed, snr index, trial index).
pub fn trial_rng(seed: u64, snr_idx: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&snr_idx.to_le_bytes());
    key[16..24].copy_from_slice(&trial.to_le_bytes());
    key[24..32].copy_from_slice(b"l2boxsim");
    ChaCha8Rng::from_seed(key)
}

/// Run all configured detectors on one shared channel/bits/noise draw.
/// Trials hitting a singular baseline system are rerun with a fresh channel
/// (logged to stderr); other detector errors abort the trial.
pub fn run_trial<R: Rng>(
    config: &ExperimentConfig,
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<TrialOutcome>> {
    let sigma2 = model::snr_to_noise_variance(snr_db, config.u, config.q);
    for attempt in 0.. {
        let channel = model::sample_channel(config.b, config.u, rng)?;
        let frame = model::random_frame(config.u, config.q, rng)?;
        let x = model::symbols_to_vector(&frame.symbols);
        let received = model::transmit(&channel.h, &x, sigma2, rng)?;
        match run_detectors(config, &channel.h, &received.r, sigma2, &frame.bits) {
            Err(Error::Singular(msg)) if attempt < 16 => {
                eprintln!("trial rerun with fresh channel (attempt {attempt}): {msg}");
                continue;
            }
            other => return other,
        }
    }
    unreachable!()
}

fn run_detectors(
    config: &ExperimentConfig,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    sigma2: f64,
    tx_bits: &[u8],
) -> Result<Vec<TrialOutcome>> {
    let mut outcomes = Vec::with_capacity(config.detectors.len());
    // λ_max is shared by every l2box entry on this channel.
    let mut lambda_max: Option<f64> = None;
    for spec in &config.detectors {
        let start = Instant::now();
        let (bits, iterations) = match spec.name.as_str() {
            "l2box" => {
                let lmax = match lambda_max {
                    Some(l) => l,
                    None => {
                        let l = analysis::lambda_max_power(h, 1e-9)?;
                        lambda_max = Some(l);
                        l
                    }
                };
                let penalties = PenaltySchedule::proportional(spec.alpha, lmax, config.q)?;
                let cfg = AdmmConfig {
                    penalties,
                    max_iters: spec.max_iters,
                    tol: spec.tol,
                };
                let out = detector::detect(h, r, config.q, &cfg)?;
                (out.bits, out.iterations_used)
            }
            "mmse" => (baselines::mmse_detect(h, r, sigma2, config.q)?.bits, 0),
            "zf" => (baselines::zf_detect(h, r, config.q)?.bits, 0),
            "ml" => {
                let (symbols, _) =
                    baselines::ml_bruteforce(h, r, config.q, &MlSearchBudget::default())?;
                let layers = model::decompose_symbols(&symbols, config.q)?;
                (model::layers_to_bits(&layers), 0)
            }
            other => return Err(Error::Invalid(format!("unknown detector '{other}'"))),
        };
        let micros = start.elapsed().as_secs_f64() * 1e6;
        let bit_errors = bits
            .iter()
            .zip(tx_bits)
            .filter(|(a, b)| a != b)
            .count() as u64;
        outcomes.push(TrialOutcome {
            bit_errors,
            iterations,
            micros,
        });
    }
    Ok(outcomes)
}

/// Full sweep: one [`BerRecord`] per (detector, SNR), rows sorted by
/// (detector, snr_db). Trials run in parallel; aggregation is commutative.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<BerRecord>> {
    config.validate()?;
    let bits_per_trial = (2 * config.u) as u64 * config.q as u64;
    let mut records = Vec::new();
    for (snr_idx, &snr_db) in config.snr_db_list.iter().enumerate() {
        let sums: Result<Vec<(u64, u64, f64)>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(config.seed, snr_idx as u64, trial as u64);
                run_trial(config, snr_db, &mut rng)
            })
            .try_fold(
                || vec![(0u64, 0u64, 0f64); config.detectors.len()],
                |mut acc, outcomes| {
                    for (a, o) in acc.iter_mut().zip(outcomes?) {
                        a.0 += o.bit_errors;
                        a.1 += o.iterations as u64;
                        a.2 += o.micros;
                    }
                    Ok(acc)
                },
            )
            .try_reduce(
                || vec![(0u64, 0u64, 0f64); config.detectors.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        x.0 += y.0;
                        x.1 += y.1;
                        x.2 += y.2;
                    }
                    Ok(a)
                },
            );
        let sums = sums?;
        for (spec, (errors, iters, micros)) in config.detectors.iter().zip(sums) {
            let total_bits = bits_per_trial * config.trials as u64;
            records.push(BerRecord {
                detector: spec.name.clone(),
                snr_db,
                u: config.u,
                b: config.b,
                q: config.q,
                trials: config.trials,
                total_bits,
                bit_errors: errors,
                ber: errors as f64 / total_bits as f64,
                avg_iterations: iters as f64 / config.trials as f64,
                avg_detect_micros: micros / config.trials as f64,
            });
        }
    }
    records.sort_by(|a, b| {
        (&a.detector, a.snr_db)
            .partial_cmp(&(&b.detector, b.snr_db))
            .expect("finite SNR values")
    });
    Ok(records)
}

/// Pre-iteration vs per-iteration timing for one problem size.
#[derive(Debug, Clone, Serialize)]
pub struct SizeTiming {
    pub size: usize,
    pub pre_micros: f64,
    /// Absent when zero iterations were requested.
    pub per_iter_micros: Option<f64>,
}

/// Median pre-iteration (factorization) and per-iteration wall times over
/// `reps` repetitions for square B=U systems at SNR 20 dB.
pub fn timing_bench(sizes: &[usize], q: u32, iters: usize, seed: u64, reps: usize) -> Result<Vec<SizeTiming>> {
    if sizes.is_empty() {
        return Err(Error::Invalid("size list must be non-empty".into()));
    }
    let reps = reps.max(20);
    let mut out = Vec::with_capacity(sizes.len());
    for (i, &u) in sizes.iter().enumerate() {
        let mut rng = trial_rng(seed, u64::MAX, i as u64);
        let channel = model::sample_channel(u, u, &mut rng)?;
        let frame = model::random_frame(u, q, &mut rng)?;
        let sigma2 = model::snr_to_noise_variance(20.0, u, q);
        let received = model::transmit(&channel.h, &model::symbols_to_vector(&frame.symbols), sigma2, &mut rng)?;
        let lmax = analysis::lambda_max_power(&channel.h, 1e-9)?;
        let penalties = PenaltySchedule::proportional(detector::DEFAULT_ALPHA, lmax, q)?;

        let mut pre_times = Vec::with_capacity(reps);
        let mut iter_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            let solver = detector::precompute(&channel.h, &received.r, &penalties)?;
            pre_times.push(t0.elapsed().as_secs_f64() * 1e6);
            if iters > 0 {
                let mut state = detector::AdmmState::zeros(q as usize, 2 * u);
                let t1 = Instant::now();
                for _ in 0..iters {
                    detector::iterate(&mut state, &solver, &penalties);
                }
                iter_times.push(t1.elapsed().as_secs_f64() * 1e6 / iters as f64);
            }
        }
        out.push(SizeTiming {
            size: u,
            pre_micros: median(&mut pre_times),
            per_iter_micros: (iters > 0).then(|| median(&mut iter_times)),
        });
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const CSV_HEADER: &str =
    "detector,snr_db,U,B,Q,trials,total_bits,bit_errors,ber,avg_iterations,avg_detect_micros";

/// Format with 6 significant digits, shortest form (printf %g style).
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{exp}")
    } else {
        let dec = (5 - exp).max(0) as usize;
        let fixed = format!("{x:.dec$}");
        if fixed.contains('.') {
            fixed
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            fixed
        }
    }
}

fn record_line(r: &BerRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.detector,
        fmt_g6(r.snr_db),
        r.u,
        r.b,
        r.q,
        r.trials,
        r.total_bits,
        r.bit_errors,
        fmt_g6(r.ber),
        fmt_g6(r.avg_iterations),
        fmt_g6(r.avg_detect_micros)
    )
}

/// Render the CSV body (header plus one line per record).
pub fn render_csv(records: &[BerRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&record_line(r));
        s.push('\n');
    }
    s
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write contents atomically: write a sibling temp file, rename on success.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}partial",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_csv(records: &[BerRecord], path: &Path) -> Result<()> {
    write_atomic(path, &render_csv(records))
}

pub fn write_json<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut body = serde_json::to_string_pretty(report)?;
    body.push('\n');
    write_atomic(path, &body)
}

/// Parse a CSV produced by [`write_csv`] back into records.
pub fn parse_csv(contents: &str) -> Result<Vec<BerRecord>> {
    let mut lines = contents.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Invalid(format!(
                "unexpected CSV header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Invalid(format!(
                "CSV line {} has {} fields, expected 11",
                i + 2,
                f.len()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Invalid(format!("CSV line {}: {e}", i + 2)))
        };
        let parse_u = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| Error::Invalid(format!("CSV line {}: {e}", i + 2)))
        };
        records.push(BerRecord {
            detector: f[0].to_string(),
            snr_db: parse_f(f[1])?,
            u: parse_u(f[2])? as usize,
            b: parse_u(f[3])? as usize,
            q: parse_u(f[4])? as u32,
            trials: parse_u(f[5])? as usize,
            total_bits: parse_u(f[6])?,
            bit_errors: parse_u(f[7])?,
            ber: parse_f(f[8])?,
            avg_iterations: parse_f(f[9])?,
            avg_detect_micros: parse_f(f[10])?,
        });
    }
    Ok(records)
}
