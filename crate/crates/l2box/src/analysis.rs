//! Convergence diagnostics: spectral bounds of HᵀH, penalty thresholds,
//! augmented Lagrangian evaluation, descent/bound checks, and stationarity
//! residuals.
//!
//! The checks work on the stacked per-layer view x̄_q = [x_q; x_q],
//! z_q = [z_{1q}; z_{2q}], y_q = [y_{1q}; y_{2q}] with equal penalties
//! ρ_{1q} = ρ_{2q} = ρ_q (enforced in diagnostic mode).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::detector::{AdmmState, AdmmTrace, PenaltySchedule};
use crate::{Error, Result};

const REL_SLACK: f64 = 1e-9;

/// Extremal eigenvalues of HᵀH.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralInfo {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub tol: f64,
}

/// λ_max by power iteration on HᵀH, λ_min by dense symmetric
/// eigendecomposition (desk-scale matrices).
pub fn spectral_bounds(h: &DMatrix<f64>, tol: f64) -> Result<SpectralInfo> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral_bounds"));
    }
    let hth = h.transpose() * h;
    let n = hth.nrows();
    let lambda_max = power_iteration(&hth, tol)?;
    let eig = hth.symmetric_eigen();
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_min = lambda_min.max(0.0);
    if n > 0 && lambda_max < lambda_min {
        // Power iteration can only undershoot; trust the dense result.
        let dense_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        return Ok(SpectralInfo {
            lambda_max: dense_max,
            lambda_min,
            tol,
        });
    }
    Ok(SpectralInfo {
        lambda_max,
        lambda_min,
        tol,
    })
}

/// λ_max(HᵀH) alone, by power iteration (no dense eigendecomposition).
pub fn lambda_max_power(h: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lambda_max_power"));
    }
    power_iteration(&(h.transpose() * h), tol)
}

fn power_iteration(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::Invalid("empty matrix".into()));
    }
    // Deterministic start with all modes present.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) / (n as f64));
    v /= v.norm();
    let mut lambda = 0.0;
    let cap = 10_000;
    for _ in 0..cap {
        let mut w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(0.0); // zero matrix
        }
        w /= nw;
        let next = (a * &w).dot(&w);
        let done = (next - lambda).abs() <= tol * next.abs().max(1e-300);
        lambda = next;
        v = w;
        if done {
            return Ok(lambda);
        }
    }
    Err(Error::Invalid(format!(
        "power iteration did not converge within {cap} iterations (last estimate {lambda})"
    )))
}

/// Convergence thresholds 4^{q−1}√2·λ_max for q = 1..Q.
pub fn penalty_threshold(q: u32, lambda_max: f64) -> Vec<f64> {
    (0..q)
        .map(|l| 4f64.powi(l as i32) * 2f64.sqrt() * lambda_max)
        .collect()
}

/// Augmented Lagrangian:
/// ½‖r−HΣ2^{q−1}x_q‖² + Σ_q [y₁ᵀ(x−z₁) + (ρ₁/2)‖x−z₁‖² + y₂ᵀ(x−z₂) + (ρ₂/2)‖x−z₂‖²].
pub fn augmented_lagrangian(
    state: &AdmmState,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    penalties: &PenaltySchedule,
) -> f64 {
    let mut l = 0.5 * (r - h * state.composite()).norm_squared();
    for q in 0..state.x.len() {
        let d1 = &state.x[q] - &state.z1[q];
        let d2 = &state.x[q] - &state.z2[q];
        l += state.y1[q].dot(&d1) + 0.5 * penalties.rho1[q] * d1.norm_squared();
        l += state.y2[q].dot(&d2) + 0.5 * penalties.rho2[q] * d2.norm_squared();
    }
    l
}

/// Per-layer descent constants C_q = (ρ_q + 4^{q−1}λ_min)/2 − 16^{q−1}λ_max²/ρ_q.
pub fn descent_constants(penalties: &PenaltySchedule, spectral: &SpectralInfo) -> Result<Vec<f64>> {
    if !penalties.is_equal_pairs() {
        return Err(Error::Invalid(
            "diagnostic mode requires equal penalty pairs ρ_{1q} = ρ_{2q}".into(),
        ));
    }
    Ok(penalties
        .rho1
        .iter()
        .enumerate()
        .map(|(l, &rho)| {
            let four = 4f64.powi(l as i32);
            (rho + four * spectral.lambda_min) / 2.0 - four * four * spectral.lambda_max.powi(2) / rho
        })
        .collect())
}

/// C = min_q C_q, the constant of the iteration bound.
pub fn theorem2_constant(penalties: &PenaltySchedule, spectral: &SpectralInfo) -> Result<f64> {
    Ok(descent_constants(penalties, spectral)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Iteration bound (L¹ − f_star)/(C·ε). f_star is a post-hoc proxy (the final
/// objective of the run); callers must label it as such.
pub fn iteration_bound(l1: f64, f_star: f64, c: f64, eps: f64) -> Result<f64> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Invalid(format!(
            "iteration bound undefined: C = {c} is not positive"
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Invalid(format!("need ε > 0, got {eps}")));
    }
    Ok((l1 - f_star) / (c * eps))
}

/// Count iterations/layers where the stacked dual-increment bound
/// ‖Δy₁‖² + ‖Δy₂‖² ≤ 16^{q−1}λ_max²·‖Δx̄_q‖² fails beyond relative slack
/// (‖Δx̄_q‖² = 2‖Δx_q‖² since both halves of x̄_q are x_q).
pub fn check_lemma1(trace: &AdmmTrace, spectral: &SpectralInfo) -> usize {
    let mut violations = 0;
    for w in trace.states.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        for q in 0..prev.x.len() {
            let lhs = (&next.y1[q] - &prev.y1[q]).norm_squared()
                + (&next.y2[q] - &prev.y2[q]).norm_squared();
            let sixteen = 16f64.powi(q as i32);
            let rhs =
                sixteen * spectral.lambda_max.powi(2) * 2.0 * (&next.x[q] - &prev.x[q]).norm_squared();
            if lhs > rhs + REL_SLACK * (1.0 + rhs) {
                violations += 1;
            }
        }
    }
    violations
}

/// Count iterations where L^{k+1} − L^k > −Σ_q C_q‖Δx̄_q‖² beyond relative slack.
pub fn check_descent(lagrangian_trace: &[f64], c_per_layer: &[f64], trace: &AdmmTrace) -> usize {
    let mut violations = 0;
    for (k, w) in trace.states.windows(2).enumerate() {
        let (prev, next) = (&w[0], &w[1]);
        let bound: f64 = (0..prev.x.len())
            .map(|q| -c_per_layer[q] * 2.0 * (&next.x[q] - &prev.x[q]).norm_squared())
            .sum();
        let dl = lagrangian_trace[k + 1] - lagrangian_trace[k];
        if dl > bound + REL_SLACK * (1.0 + lagrangian_trace[k].abs()) {
            violations += 1;
        }
    }
    violations
}

/// Count iterations where L^k < f(z^k) beyond relative slack, with
/// f(z) = ½‖r − HΣ2^{q−1}(z_{1q}+z_{2q})/2‖² (the consensus value of the
/// stacked z, both halves of x̄_q being x_q).
pub fn check_lower_bound(
    lagrangian_trace: &[f64],
    trace: &AdmmTrace,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
) -> usize {
    let mut violations = 0;
    // State 0 has z = 0 from initialization, before any projection; start at 1.
    for (k, state) in trace.states.iter().enumerate().skip(1) {
        let two_u = state.x[0].len();
        let mut zmid = DVector::zeros(two_u);
        for q in 0..state.x.len() {
            let w = (1u64 << q) as f64 * 0.5;
            zmid.axpy(w, &state.z1[q], 1.0);
            zmid.axpy(w, &state.z2[q], 1.0);
        }
        let fz = 0.5 * (r - h * zmid).norm_squared();
        if lagrangian_trace[k] < fz - REL_SLACK * (1.0 + fz.abs()) {
            violations += 1;
        }
    }
    violations
}

/// Final-state stationarity residuals.
#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    /// ‖y_{1q}+y_{2q}+∇_{x_q}f(x)‖ per layer (the stacked dual equals −∇f at
    /// a stationary point).
    pub dual_gradient: Vec<f64>,
    /// ‖x̄_q − z_q‖ per layer (stacked consensus residual).
    pub consensus: Vec<f64>,
    /// min over z₁∈[−1,1]^{2U} of ⟨z₁−z₁*, −y₁*⟩ per layer; coordinatewise the
    /// minimum is attained at z₁ = ±1. Nonnegative at a stationary point.
    pub box_margin: Vec<f64>,
    /// ‖z₂* − √(2U)(ρ₂x*+y₂*)/‖ρ₂x*+y₂*‖‖ per layer.
    pub sphere: Vec<f64>,
}

/// Evaluate the stationarity residuals at a final state.
pub fn stationarity_residuals(
    state: &AdmmState,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    penalties: &PenaltySchedule,
) -> StationarityReport {
    let q_total = state.x.len();
    let two_u = state.x[0].len();
    let grad_common = h.transpose() * (h * state.composite() - r);
    let mut dual_gradient = Vec::with_capacity(q_total);
    let mut consensus = Vec::with_capacity(q_total);
    let mut box_margin = Vec::with_capacity(q_total);
    let mut sphere = Vec::with_capacity(q_total);
    for q in 0..q_total {
        let grad = &grad_common * (1u64 << q) as f64;
        dual_gradient.push((&state.y1[q] + &state.y2[q] + grad).norm());
        consensus.push(
            ((&state.x[q] - &state.z1[q]).norm_squared()
                + (&state.x[q] - &state.z2[q]).norm_squared())
            .sqrt(),
        );
        let mut margin = 0.0;
        for i in 0..two_u {
            // Linear in z1[i] on [−1,1]: minimum of (z − z1*)·(−y1) at z = ±1.
            let a = (-1.0 - state.z1[q][i]) * -state.y1[q][i];
            let b = (1.0 - state.z1[q][i]) * -state.y1[q][i];
            margin += a.min(b);
        }
        box_margin.push(margin);
        let mut v = &state.x[q] * penalties.rho2[q];
        v += &state.y2[q];
        let n = v.norm();
        sphere.push(if n < crate::detector::SPHERE_DEGENERACY_EPS {
            0.0
        } else {
            (&state.z2[q] - (two_u as f64).sqrt() / n * v).norm()
        });
    }
    StationarityReport {
        dual_gradient,
        consensus,
        box_margin,
        sphere,
    }
}

/// Violation counts for the three trace inequalities.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaViolations {
    pub lemma1: usize,
    pub lemma2: usize,
    pub lemma3: usize,
}

/// Full diagnostic report for one traced run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub thresholds: Vec<f64>,
    /// Whether every penalty exceeds its threshold (both components).
    pub penalties_compliant: bool,
    pub spectral: SpectralInfo,
    pub c: f64,
    pub lagrangian_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    /// (L¹ − f_final)/(C·ε); f_star is proxied by the final objective
    /// f(x̄*) of the run. None when C ≤ 0.
    pub iteration_bound: Option<f64>,
    pub iterations_used: usize,
    pub lemma_violations: LemmaViolations,
    pub stationarity: StationarityReport,
}

/// Build the full report from a traced run.
pub fn convergence_report(
    trace: &AdmmTrace,
    residual_trace: &[f64],
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    penalties: &PenaltySchedule,
    eps: f64,
) -> Result<ConvergenceReport> {
    let spectral = spectral_bounds(h, 1e-10)?;
    let q = penalties.q() as u32;
    let thresholds = penalty_threshold(q, spectral.lambda_max);
    let penalties_compliant = thresholds
        .iter()
        .enumerate()
        .all(|(l, &t)| penalties.rho1[l] > t && penalties.rho2[l] > t);
    let lagrangian_trace: Vec<f64> = trace
        .states
        .iter()
        .map(|s| augmented_lagrangian(s, h, r, penalties))
        .collect();
    let c_per_layer = descent_constants(penalties, &spectral)?;
    let c = c_per_layer.iter().cloned().fold(f64::INFINITY, f64::min);
    let lemma_violations = LemmaViolations {
        lemma1: check_lemma1(trace, &spectral),
        lemma2: check_descent(&lagrangian_trace, &c_per_layer, trace),
        lemma3: check_lower_bound(&lagrangian_trace, trace, h, r),
    };
    let final_state = trace.states.last().expect("non-empty trace");
    let f_final = 0.5 * (r - h * final_state.composite()).norm_squared();
    let iteration_bound = if lagrangian_trace.len() > 1 && c > 0.0 {
        Some(iteration_bound(lagrangian_trace[1], f_final, c, eps)?)
    } else {
        None
    };
    let stationarity = stationarity_residuals(final_state, h, r, penalties);
    Ok(ConvergenceReport {
        thresholds,
        penalties_compliant,
        spectral,
        c,
        lagrangian_trace,
        residual_trace: residual_trace.to_vec(),
        iteration_bound,
        iterations_used: trace.states.len() - 1,
        lemma_violations,
        stationarity,
    })
}
