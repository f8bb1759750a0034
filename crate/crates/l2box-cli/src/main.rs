//! `l2box` CLI: detection, BER sweeps, convergence diagnostics, timing benches.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use l2box::baselines::{self, MlSearchBudget};
use l2box::detector::{self, AdmmConfig, PenaltySchedule};
use l2box::{analysis, model, sim};

#[derive(Parser)]
#[command(
    name = "l2box",
    version,
    about = "ℓ2-box ADMM detector for 4^Q-QAM massive MIMO: detection, BER sweeps, diagnostics, benches"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo BER-vs-SNR sweep, written as CSV
    Sweep(SweepArgs),
    /// Run one detector on a JSON problem instance
    Detect(DetectArgs),
    /// Single traced run with convergence diagnostics (JSON report)
    Diagnose(DiagnoseArgs),
    /// Pre-iteration vs per-iteration timing across problem sizes (CSV)
    Bench(BenchArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment config; overrides the inline flags
    #[arg(long, conflicts_with_all = ["tx", "rx", "snr_db"])]
    config: Option<PathBuf>,
    /// Number of transmit users U
    #[arg(long, required_unless_present = "config")]
    tx: Option<usize>,
    /// Number of receive antennas B
    #[arg(long, required_unless_present = "config")]
    rx: Option<usize>,
    /// QAM order, a power of 4 (16 means Q=2)
    #[arg(long, default_value_t = 16)]
    qam: u64,
    /// Comma-separated SNR points in dB
    #[arg(long, value_delimiter = ',', required_unless_present = "config")]
    snr_db: Vec<f64>,
    /// Monte-Carlo trials per SNR point
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Base RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated detector names (l2box, mmse, zf, ml)
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("l2box"), String::from("mmse")])]
    detectors: Vec<String>,
    /// Penalty scale: rho_q = alpha * 4^(q-1) * sqrt(2) * lambda_max(H^T H)
    #[arg(long, default_value_t = detector::DEFAULT_ALPHA)]
    alpha: f64,
    /// Maximum ADMM iterations T
    #[arg(long, default_value_t = detector::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Stopping tolerance on the residual sum_q ||x_q^{k+1}-x_q^k||^2
    #[arg(long, default_value_t = detector::DEFAULT_TOL)]
    tol: f64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// JSON instance file (fields: Hc or H, r_c or r, Q, optional alpha/max_iters/tol/sigma2)
    #[arg(long)]
    instance: PathBuf,
    /// Detector name (l2box, mmse, zf, ml)
    #[arg(long, default_value = "l2box")]
    detector: String,
    /// Output JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Number of transmit users U
    #[arg(long)]
    tx: usize,
    /// Number of receive antennas B
    #[arg(long)]
    rx: usize,
    /// QAM order, a power of 4
    #[arg(long, default_value_t = 16)]
    qam: u64,
    /// SNR in dB
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Penalty scale relative to the convergence threshold
    #[arg(long, default_value_t = detector::DEFAULT_ALPHA)]
    alpha: f64,
    /// Maximum ADMM iterations T
    #[arg(long, default_value_t = detector::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Stopping tolerance
    #[arg(long, default_value_t = detector::DEFAULT_TOL)]
    tol: f64,
    /// Output JSON path (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated ascending sizes (U=B)
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// QAM order, a power of 4
    #[arg(long, default_value_t = 16)]
    qam: u64,
    /// Iterations timed per repetition
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

/// CLI failure with its process exit code: 2 for bad input, 1 for runtime errors.
struct Failure {
    code: u8,
    message: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: msg.into(),
    }
}

impl From<l2box::Error> for Failure {
    fn from(e: l2box::Error) -> Self {
        match e {
            l2box::Error::Invalid(_)
            | l2box::Error::Dimension(_)
            | l2box::Error::BudgetExceeded(..) => usage(e.to_string()),
            other => runtime(other.to_string()),
        }
    }
}

fn qam_to_q(qam: u64) -> Result<u32, Failure> {
    let mut q = 0u32;
    let mut v = 1u64;
    while v < qam {
        v *= 4;
        q += 1;
    }
    if v != qam || q == 0 {
        return Err(usage(format!(
            "--qam {qam} is not a power of 4 (expected 4, 16, 64, ...)"
        )));
    }
    Ok(q)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(threads) = std::env::var("L2BOX_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: L2BOX_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.cmd {
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Detect(a) => cmd_detect(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let config = if let Some(path) = &a.config {
        let body = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str::<sim::ExperimentConfig>(&body)
            .map_err(|e| usage(format!("malformed config {}: {e}", path.display())))?
    } else {
        let q = qam_to_q(a.qam)?;
        sim::ExperimentConfig {
            b: a.rx.expect("required by clap"),
            u: a.tx.expect("required by clap"),
            q,
            snr_db_list: a.snr_db.clone(),
            trials: a.trials,
            seed: a.seed,
            detectors: a
                .detectors
                .iter()
                .map(|name| sim::DetectorSpec {
                    name: name.clone(),
                    alpha: a.alpha,
                    max_iters: a.max_iters,
                    tol: a.tol,
                })
                .collect(),
            capture_traces: false,
        }
    };
    config.validate().map_err(Failure::from)?;
    let records = sim::sweep(&config)?;
    sim::write_csv(&records, &a.out)?;
    Ok(())
}

/// JSON problem instance accepted by `detect`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Instance {
    /// Complex channel: rows of [re, im] pairs.
    #[serde(rename = "Hc")]
    hc: Option<Vec<Vec<[f64; 2]>>>,
    /// Complex received vector: [re, im] pairs.
    r_c: Option<Vec<[f64; 2]>>,
    /// Raw real 2B×2U channel (alternative to Hc).
    #[serde(rename = "H")]
    h: Option<Vec<Vec<f64>>>,
    /// Raw real received vector (alternative to r_c).
    r: Option<Vec<f64>>,
    #[serde(rename = "Q")]
    q: u32,
    alpha: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    /// Noise variance per complex entry; used by the MMSE detector.
    sigma2: Option<f64>,
}

#[derive(Serialize)]
struct DetectReport {
    detector: String,
    soft_layers: Vec<Vec<f64>>,
    hard_layers: Vec<Vec<f64>>,
    symbols: Vec<i64>,
    bits: Vec<u8>,
    iterations_used: usize,
    objective: f64,
    residual_trace: Vec<f64>,
}

fn load_instance(inst: &Instance) -> Result<(DMatrix<f64>, DVector<f64>), Failure> {
    let h = match (&inst.hc, &inst.h) {
        (Some(hc), None) => {
            let b = hc.len();
            let u = hc.first().map_or(0, Vec::len);
            if b == 0 || u == 0 || hc.iter().any(|row| row.len() != u) {
                return Err(usage("field Hc: rows must be non-empty and of equal length"));
            }
            let m = DMatrix::from_fn(b, u, |i, j| Complex::new(hc[i][j][0], hc[i][j][1]));
            model::embed_real(&m).map_err(Failure::from)?
        }
        (None, Some(h)) => {
            let rows = h.len();
            let cols = h.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || h.iter().any(|row| row.len() != cols) {
                return Err(usage("field H: rows must be non-empty and of equal length"));
            }
            if rows % 2 != 0 || cols % 2 != 0 {
                return Err(usage("field H: real embedding must have even dimensions"));
            }
            DMatrix::from_fn(rows, cols, |i, j| h[i][j])
        }
        _ => return Err(usage("provide exactly one of Hc (complex) or H (real)")),
    };
    let r = match (&inst.r_c, &inst.r) {
        (Some(rc), None) => model::embed_real_vector(
            &rc.iter().map(|p| Complex::new(p[0], p[1])).collect::<Vec<_>>(),
        ),
        (None, Some(r)) => DVector::from_column_slice(r),
        _ => return Err(usage("provide exactly one of r_c (complex) or r (real)")),
    };
    if r.len() != h.nrows() {
        return Err(usage(format!(
            "field r: length {} does not match the channel's {} rows",
            r.len(),
            h.nrows()
        )));
    }
    Ok((h, r))
}

fn cmd_detect(a: DetectArgs) -> Result<(), Failure> {
    let body = std::fs::read_to_string(&a.instance)
        .map_err(|e| usage(format!("cannot read instance {}: {e}", a.instance.display())))?;
    let inst: Instance = serde_json::from_str(&body)
        .map_err(|e| usage(format!("malformed instance {}: {e}", a.instance.display())))?;
    if inst.q < 1 {
        return Err(usage("field Q: must be >= 1"));
    }
    let (h, r) = load_instance(&inst)?;
    let report = match a.detector.as_str() {
        "l2box" => {
            let lmax = analysis::lambda_max_power(&h, 1e-9)?;
            let penalties = PenaltySchedule::proportional(
                inst.alpha.unwrap_or(detector::DEFAULT_ALPHA),
                lmax,
                inst.q,
            )?;
            let cfg = AdmmConfig {
                penalties,
                max_iters: inst.max_iters.unwrap_or(detector::DEFAULT_MAX_ITERS),
                tol: inst.tol.unwrap_or(detector::DEFAULT_TOL),
            };
            let out = detector::detect(&h, &r, inst.q, &cfg)?;
            DetectReport {
                detector: a.detector.clone(),
                soft_layers: out.soft_layers.iter().map(|v| v.as_slice().to_vec()).collect(),
                hard_layers: out.hard_layers.iter().map(|v| v.as_slice().to_vec()).collect(),
                symbols: out.symbols,
                bits: out.bits,
                iterations_used: out.iterations_used,
                objective: out.objective,
                residual_trace: out.residual_trace,
            }
        }
        "mmse" | "zf" => {
            let out = if a.detector == "mmse" {
                baselines::mmse_detect(&h, &r, inst.sigma2.unwrap_or(0.0), inst.q)?
            } else {
                baselines::zf_detect(&h, &r, inst.q)?
            };
            let hard = model::decompose_symbols(&out.symbols, inst.q).map_err(Failure::from)?;
            DetectReport {
                detector: a.detector.clone(),
                soft_layers: vec![out.soft.as_slice().to_vec()],
                hard_layers: hard.iter().map(|v| v.as_slice().to_vec()).collect(),
                symbols: out.symbols,
                bits: out.bits,
                iterations_used: 0,
                objective: out.objective,
                residual_trace: vec![],
            }
        }
        "ml" => {
            let (symbols, obj) = baselines::ml_bruteforce(&h, &r, inst.q, &MlSearchBudget::default())?;
            let hard = model::decompose_symbols(&symbols, inst.q).map_err(Failure::from)?;
            let bits = model::layers_to_bits(&hard);
            DetectReport {
                detector: a.detector.clone(),
                soft_layers: vec![],
                hard_layers: hard.iter().map(|v| v.as_slice().to_vec()).collect(),
                symbols,
                bits,
                iterations_used: 0,
                objective: 0.5 * obj,
                residual_trace: vec![],
            }
        }
        other => {
            return Err(usage(format!(
                "unknown detector '{other}'; valid names: {}",
                sim::DETECTOR_NAMES.join(", ")
            )))
        }
    };
    sim::write_json(&report, &a.out)?;
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    let q = qam_to_q(a.qam)?;
    let mut rng = sim::trial_rng(a.seed, 0, 0);
    let channel = model::sample_channel(a.rx, a.tx, &mut rng)?;
    let frame = model::random_frame(a.tx, q, &mut rng)?;
    let sigma2 = model::snr_to_noise_variance(a.snr_db, a.tx, q);
    let received = model::transmit(
        &channel.h,
        &model::symbols_to_vector(&frame.symbols),
        sigma2,
        &mut rng,
    )?;
    let lmax = analysis::lambda_max_power(&channel.h, 1e-9)?;
    let penalties = PenaltySchedule::proportional(a.alpha, lmax, q)?;
    let cfg = AdmmConfig {
        penalties: penalties.clone(),
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let (out, trace) = detector::detect_traced(&channel.h, &received.r, q, &cfg)?;
    let report = analysis::convergence_report(
        &trace,
        &out.residual_trace,
        &channel.h,
        &received.r,
        &penalties,
        a.tol,
    )?;
    if !report.penalties_compliant {
        eprintln!(
            "note: penalties are below the convergence threshold (alpha = {}); theorem hypotheses unmet, checks still evaluated",
            a.alpha
        );
    }
    match &a.out {
        Some(path) => sim::write_json(&report, path)?,
        None => {
            let body = serde_json::to_string_pretty(&report)
                .map_err(|e| runtime(format!("serialization failed: {e}")))?;
            println!("{body}");
        }
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let q = qam_to_q(a.qam)?;
    if a.sizes.is_empty() {
        return Err(usage("--sizes must list at least one size"));
    }
    if a.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--sizes must be strictly ascending"));
    }
    let timings = sim::timing_bench(&a.sizes, q, a.iters, 0, 20)?;
    let mut csv = String::from("size,pre_micros,per_iter_micros\n");
    for t in &timings {
        csv.push_str(&format!(
            "{},{},{}\n",
            t.size,
            sim::fmt_g6(t.pre_micros),
            t.per_iter_micros.map(sim::fmt_g6).unwrap_or_default()
        ));
    }
    sim::write_atomic(&a.out, &csv)?;
    Ok(())
}
