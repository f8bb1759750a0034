//! ℓ2-box ADMM detector.
//!
//! The binary constraint on each layer x_q is relaxed to the intersection of
//! the box [−1,1]^{2U} and the sphere ‖x_q‖² = 2U. Each constraint gets an
//! auxiliary copy (z_{1q} for the box, z_{2q} for the sphere) with scaled
//! duals y_{1q}, y_{2q}; the three primal blocks have closed-form updates and
//! the x-update reuses a cached Cholesky factorization of
//! P_q = 4^{q−1}HᵀH + (ρ_{1q}+ρ_{2q})I across iterations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::baselines::quantize_to_alphabet;
use crate::model::{decompose_symbols, layers_to_bits, symbols_to_vector};
use crate::{Error, Result};

/// Norm threshold below which the sphere-projection direction is degenerate.
pub const SPHERE_DEGENERACY_EPS: f64 = 1e-14;

/// Default penalty scale: ρ_q = DEFAULT_ALPHA · 4^{q−1}√2·λ_max(HᵀH).
pub const DEFAULT_ALPHA: f64 = 0.005;
pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-5;

/// Per-layer penalties (ρ_{1q}, ρ_{2q}).
#[derive(Debug, Clone)]
pub struct PenaltySchedule {
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
}

impl PenaltySchedule {
    pub fn new(rho1: Vec<f64>, rho2: Vec<f64>) -> Result<Self> {
        if rho1.len() != rho2.len() || rho1.is_empty() {
            return Err(Error::Invalid("penalty vectors must be non-empty and of equal length".into()));
        }
        if rho1.iter().chain(&rho2).any(|&r| !r.is_finite() || r <= 0.0) {
            return Err(Error::Invalid("penalties must be strictly positive and finite".into()));
        }
        Ok(Self { rho1, rho2 })
    }

    /// Equal pair per layer, ρ_{1q} = ρ_{2q} = rho[q].
    pub fn equal(rho: Vec<f64>) -> Result<Self> {
        Self::new(rho.clone(), rho)
    }

    /// ρ_{1q} = ρ_{2q} = α · 4^{q−1}√2·λ_max, the scaled convergence threshold.
    pub fn proportional(alpha: f64, lambda_max: f64, q: u32) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 || lambda_max.is_nan() || lambda_max <= 0.0 {
            return Err(Error::Invalid(format!(
                "alpha and lambda_max must be positive, got {alpha}, {lambda_max}"
            )));
        }
        let rho: Vec<f64> = (0..q)
            .map(|l| alpha * 4f64.powi(l as i32) * 2f64.sqrt() * lambda_max)
            .collect();
        Self::equal(rho)
    }

    pub fn q(&self) -> usize {
        self.rho1.len()
    }

    pub fn is_equal_pairs(&self) -> bool {
        self.rho1.iter().zip(&self.rho2).all(|(a, b)| a == b)
    }
}

/// Per-layer iterates (z_{1q}, z_{2q}, x_q, y_{1q}, y_{2q}) and the iteration counter.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Vec<DVector<f64>>,
    pub z1: Vec<DVector<f64>>,
    pub z2: Vec<DVector<f64>>,
    pub y1: Vec<DVector<f64>>,
    pub y2: Vec<DVector<f64>>,
    pub k: usize,
    pub sphere_degenerate: bool,
    // Reused iteration buffers; keeping the hot loop allocation-free makes
    // per-iteration timings reflect the O(U²) arithmetic.
    comp: DVector<f64>,
    others: DVector<f64>,
    rhs: DVector<f64>,
}

impl AdmmState {
    /// All-zeros initialization for Q layers of dimension 2U.
    pub fn zeros(q: usize, two_u: usize) -> Self {
        let zv = || vec![DVector::zeros(two_u); q];
        Self {
            x: zv(),
            z1: zv(),
            z2: zv(),
            y1: zv(),
            y2: zv(),
            k: 0,
            sphere_degenerate: false,
            comp: DVector::zeros(two_u),
            others: DVector::zeros(two_u),
            rhs: DVector::zeros(two_u),
        }
    }

    /// Composite soft estimate Σ_q 2^{q−1} x_q.
    pub fn composite(&self) -> DVector<f64> {
        composite_of(&self.x)
    }
}

pub(crate) fn composite_of(layers: &[DVector<f64>]) -> DVector<f64> {
    let mut s = DVector::zeros(layers[0].len());
    for (l, xq) in layers.iter().enumerate() {
        s.axpy((1u64 << l) as f64, xq, 1.0);
    }
    s
}

/// Cached HᵀH, Hᵀr, and per-layer Cholesky factors of P_q.
pub struct PrecomputedSolver {
    pub hth: DMatrix<f64>,
    pub htr: DVector<f64>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

impl PrecomputedSolver {
    /// Solve P_q v = w for layer q (0-based).
    pub fn solve(&self, q: usize, w: &DVector<f64>) -> DVector<f64> {
        self.chol[q].solve(w)
    }

    /// In-place variant of [`Self::solve`].
    pub fn solve_in_place(&self, q: usize, w: &mut DVector<f64>) {
        self.chol[q].solve_mut(w);
    }
}

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub penalties: PenaltySchedule,
    pub max_iters: usize,
    pub tol: f64,
}

impl AdmmConfig {
    pub fn new(penalties: PenaltySchedule) -> Self {
        Self {
            penalties,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorOutput {
    pub soft_layers: Vec<DVector<f64>>,
    pub hard_layers: Vec<DVector<f64>>,
    pub symbols: Vec<i64>,
    pub bits: Vec<u8>,
    pub iterations_used: usize,
    /// Σ_q‖x_q^{k+1}−x_q^k‖² per iteration; length = iterations_used.
    pub residual_trace: Vec<f64>,
    /// ½‖r − Hx̂‖² at the hardened symbols.
    pub objective: f64,
    pub sphere_degenerate: bool,
}

/// Full per-iteration state snapshots (index 0 is the all-zeros start).
#[derive(Debug, Clone)]
pub struct AdmmTrace {
    pub states: Vec<AdmmState>,
}

/// Factor P_q = 4^{q−1}HᵀH + (ρ_{1q}+ρ_{2q})I for every layer and cache HᵀH, Hᵀr.
pub fn precompute(
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    penalties: &PenaltySchedule,
) -> Result<PrecomputedSolver> {
    if h.nrows() != r.len() {
        return Err(Error::Dimension(format!(
            "H has {} rows but r has length {}",
            h.nrows(),
            r.len()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("precompute"));
    }
    let hth = h.transpose() * h;
    let htr = h.transpose() * r;
    let n = hth.nrows();
    let mut chol = Vec::with_capacity(penalties.q());
    for l in 0..penalties.q() {
        let mut p = &hth * 4f64.powi(l as i32);
        let shift = penalties.rho1[l] + penalties.rho2[l];
        for i in 0..n {
            p[(i, i)] += shift;
        }
        let f = p
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("P_{} is not positive definite", l + 1)))?;
        chol.push(f);
    }
    Ok(PrecomputedSolver { hth, htr, chol })
}

/// Box projection: clamp(x_q + y_{1q}/ρ_{1q}, −1, 1).
pub fn update_z1(xq: &DVector<f64>, y1q: &DVector<f64>, rho1q: f64) -> DVector<f64> {
    DVector::from_fn(xq.len(), |i, _| (xq[i] + y1q[i] / rho1q).clamp(-1.0, 1.0))
}

/// Sphere projection: √(2U)·(ρ_{2q}x_q + y_{2q})/‖·‖, with an all-ones
/// fallback (norm √(2U)) when the direction is degenerate.
pub fn update_z2(xq: &DVector<f64>, y2q: &DVector<f64>, rho2q: f64) -> (DVector<f64>, bool) {
    let two_u = xq.len();
    let mut v = xq * rho2q;
    v += y2q;
    let n = v.norm();
    if n < SPHERE_DEGENERACY_EPS {
        (DVector::from_element(two_u, 1.0), true)
    } else {
        ((two_u as f64).sqrt() / n * v, false)
    }
}

/// x_q-update: solve P_q x_q = 2^{q−1}Hᵀr − 2^{q−1}HᵀH·Σ_{i≠q}2^{i−1}x_i
/// + ρ_{1q}z_{1q} + ρ_{2q}z_{2q} − y_{1q} − y_{2q}, using the latest x_i.
pub fn update_x(
    q: usize,
    state: &AdmmState,
    solver: &PrecomputedSolver,
    penalties: &PenaltySchedule,
) -> DVector<f64> {
    let two_u = state.x[0].len();
    let mut others = DVector::zeros(two_u);
    for (i, xi) in state.x.iter().enumerate() {
        if i != q {
            others.axpy((1u64 << i) as f64, xi, 1.0);
        }
    }
    let w = (1u64 << q) as f64;
    let mut rhs = &solver.htr * w;
    rhs.gemv(-w, &solver.hth, &others, 1.0);
    rhs.axpy(penalties.rho1[q], &state.z1[q], 1.0);
    rhs.axpy(penalties.rho2[q], &state.z2[q], 1.0);
    rhs -= &state.y1[q];
    rhs -= &state.y2[q];
    solver.solve(q, &rhs)
}

/// Dual ascent: y ← y + ρ(x − z) for both multipliers of every layer.
pub fn update_duals(state: &mut AdmmState, penalties: &PenaltySchedule) {
    for q in 0..state.x.len() {
        for i in 0..state.x[q].len() {
            state.y1[q][i] += penalties.rho1[q] * (state.x[q][i] - state.z1[q][i]);
            state.y2[q][i] += penalties.rho2[q] * (state.x[q][i] - state.z2[q][i]);
        }
    }
}

/// One full ADMM iteration: z-blocks (independent across q), x-block
/// (sequential in q), dual ascent. Returns Σ_q‖Δx_q‖².
///
/// Equivalent to calling [`update_z1`]/[`update_z2`], [`update_x`], and
/// [`update_duals`] in order, but allocation-free.
pub fn iterate(state: &mut AdmmState, solver: &PrecomputedSolver, penalties: &PenaltySchedule) -> f64 {
    let q_total = state.x.len();
    let n = state.x[0].len();
    for q in 0..q_total {
        let (rho1, rho2) = (penalties.rho1[q], penalties.rho2[q]);
        for i in 0..n {
            state.z1[q][i] = (state.x[q][i] + state.y1[q][i] / rho1).clamp(-1.0, 1.0);
        }
        let mut norm_sq = 0.0;
        for i in 0..n {
            let v = rho2 * state.x[q][i] + state.y2[q][i];
            state.z2[q][i] = v;
            norm_sq += v * v;
        }
        let norm = norm_sq.sqrt();
        if norm < SPHERE_DEGENERACY_EPS {
            state.z2[q].fill(1.0);
            state.sphere_degenerate = true;
        } else {
            state.z2[q] *= (n as f64).sqrt() / norm;
        }
    }
    // Running composite Σ 2^i x_i; updated as each layer's x changes.
    state.comp.fill(0.0);
    for (i, xi) in state.x.iter().enumerate() {
        state.comp.axpy((1u64 << i) as f64, xi, 1.0);
    }
    let mut residual = 0.0;
    for q in 0..q_total {
        let w = (1u64 << q) as f64;
        state.others.copy_from(&state.comp);
        state.others.axpy(-w, &state.x[q], 1.0);
        state.rhs.copy_from(&solver.htr);
        state.rhs *= w;
        state.rhs.gemv(-w, &solver.hth, &state.others, 1.0);
        state.rhs.axpy(penalties.rho1[q], &state.z1[q], 1.0);
        state.rhs.axpy(penalties.rho2[q], &state.z2[q], 1.0);
        state.rhs -= &state.y1[q];
        state.rhs -= &state.y2[q];
        solver.solve_in_place(q, &mut state.rhs);
        for i in 0..n {
            let d = state.rhs[i] - state.x[q][i];
            residual += d * d;
        }
        state.comp.axpy(w, &state.rhs, 1.0);
        state.comp.axpy(-w, &state.x[q], 1.0);
        // The old x_q becomes the next sweep's scratch buffer.
        std::mem::swap(&mut state.x[q], &mut state.rhs);
    }
    update_duals(state, penalties);
    state.k += 1;
    residual
}

/// Quantize the composite soft estimate to the alphabet (ties toward +∞),
/// then decompose into hard layers and layer-major bits.
pub fn harden(soft_layers: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<i64>, Vec<u8>) {
    let q = soft_layers.len() as u32;
    let symbols = quantize_to_alphabet(&composite_of(soft_layers), q);
    let hard_layers = decompose_symbols(&symbols, q).expect("quantized symbols are in-alphabet");
    let bits = layers_to_bits(&hard_layers);
    (hard_layers, symbols, bits)
}

/// Run Algorithm 1 from the all-zeros start until Σ_q‖Δx_q‖² < tol or max_iters.
pub fn detect(
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    q: u32,
    config: &AdmmConfig,
) -> Result<DetectorOutput> {
    let (out, _) = run(h, r, q, config, false)?;
    Ok(out)
}

/// As [`detect`], additionally capturing every per-iteration state snapshot.
pub fn detect_traced(
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    q: u32,
    config: &AdmmConfig,
) -> Result<(DetectorOutput, AdmmTrace)> {
    let (out, trace) = run(h, r, q, config, true)?;
    Ok((out, trace.expect("trace requested")))
}

fn run(
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    q: u32,
    config: &AdmmConfig,
    capture: bool,
) -> Result<(DetectorOutput, Option<AdmmTrace>)> {
    if config.penalties.q() != q as usize {
        return Err(Error::Invalid(format!(
            "penalty schedule has {} layers, expected Q={q}",
            config.penalties.q()
        )));
    }
    if config.max_iters < 1 || config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::Invalid("need max_iters >= 1 and tol > 0".into()));
    }
    let solver = precompute(h, r, &config.penalties)?;
    let two_u = h.ncols();
    let mut state = AdmmState::zeros(q as usize, two_u);
    let mut trace = capture.then(|| AdmmTrace {
        states: vec![state.clone()],
    });
    let mut residual_trace = Vec::new();
    for _ in 0..config.max_iters {
        let res = iterate(&mut state, &solver, &config.penalties);
        residual_trace.push(res);
        if let Some(t) = trace.as_mut() {
            t.states.push(state.clone());
        }
        if res < config.tol {
            break;
        }
    }
    let (hard_layers, symbols, bits) = harden(&state.x);
    let objective = 0.5 * (r - h * symbols_to_vector(&symbols)).norm_squared();
    let out = DetectorOutput {
        soft_layers: state.x.clone(),
        hard_layers,
        symbols,
        bits,
        iterations_used: state.k,
        residual_trace,
        objective,
        sphere_degenerate: state.sphere_degenerate,
    };
    Ok((out, trace))
}
