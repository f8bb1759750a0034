//! Reference detectors: nearest-alphabet quantizer, MMSE, zero-forcing, and
//! exhaustive ML search for tiny instances.

use nalgebra::{DMatrix, DVector};

use crate::model::{decompose_symbols, layers_to_bits, symbols_to_vector, ModulationScheme};
use crate::{Error, Result};

/// Cap on the 4^{QU} ML enumeration.
#[derive(Debug, Clone, Copy)]
pub struct MlSearchBudget {
    pub max_candidates: u64,
}

impl Default for MlSearchBudget {
    fn default() -> Self {
        Self {
            max_candidates: 1 << 20,
        }
    }
}

/// Output of a one-shot (non-iterative) detector.
#[derive(Debug, Clone)]
pub struct LinearOutput {
    pub soft: DVector<f64>,
    pub symbols: Vec<i64>,
    pub bits: Vec<u8>,
    /// ½‖r − Hx̂‖² at the hardened symbols.
    pub objective: f64,
}

/// Entrywise nearest odd integer in {±1, …, ±(2^Q−1)}; even-midpoint ties
/// round toward +∞.
pub fn quantize_to_alphabet(v: &DVector<f64>, q: u32) -> Vec<i64> {
    let half = 1i64 << (q - 1);
    v.iter()
        .map(|&x| {
            // Nearest odd 2m+1 to x is m = floor(x/2); midpoints (even x) pick
            // the larger neighbor. Clamp m so 2m+1 stays inside the alphabet.
            let m = ((x / 2.0).floor() as i64).clamp(-half, half - 1);
            2 * m + 1
        })
        .collect()
}

fn finish(h: &DMatrix<f64>, r: &DVector<f64>, soft: DVector<f64>, q: u32) -> LinearOutput {
    let symbols = quantize_to_alphabet(&soft, q);
    let layers = decompose_symbols(&symbols, q).expect("quantized symbols are in-alphabet");
    let bits = layers_to_bits(&layers);
    let objective = 0.5 * (r - h * symbols_to_vector(&symbols)).norm_squared();
    LinearOutput {
        soft,
        symbols,
        bits,
        objective,
    }
}

/// MMSE: x̂ = (HᵀH + (σ²/(2·Es_real))I)^{−1}Hᵀr, then quantize. The complex
/// noise power σ² splits as σ²/2 per real dimension against symbol energy
/// Es_real per real dimension.
pub fn mmse_detect(h: &DMatrix<f64>, r: &DVector<f64>, sigma2: f64, q: u32) -> Result<LinearOutput> {
    if h.nrows() != r.len() {
        return Err(Error::Dimension(format!(
            "H has {} rows but r has length {}",
            h.nrows(),
            r.len()
        )));
    }
    if sigma2 < 0.0 {
        return Err(Error::Invalid(format!("negative noise variance {sigma2}")));
    }
    let es_real = ModulationScheme::new(q)?.es_real();
    let mut a = h.transpose() * h;
    let reg = sigma2 / (2.0 * es_real);
    for i in 0..a.nrows() {
        a[(i, i)] += reg;
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::Singular("HᵀH + regularizer is singular (rank-deficient H at σ²=0)".into())
    })?;
    let soft = chol.solve(&(h.transpose() * r));
    Ok(finish(h, r, soft, q))
}

/// Zero-forcing: least-squares solve, then quantize.
pub fn zf_detect(h: &DMatrix<f64>, r: &DVector<f64>, q: u32) -> Result<LinearOutput> {
    match mmse_detect(h, r, 0.0, q) {
        Err(Error::Singular(_)) => Err(Error::Singular("rank-deficient H in zero-forcing".into())),
        other => other,
    }
}

/// Exact ML: exhaustive minimization of ‖r − Hx‖² over the symbol lattice.
/// Candidates are enumerated in lexicographic symbol order (last coordinate
/// fastest) and ties keep the first minimizer.
pub fn ml_bruteforce(
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    q: u32,
    budget: &MlSearchBudget,
) -> Result<(Vec<i64>, f64)> {
    let two_u = h.ncols();
    if h.nrows() != r.len() {
        return Err(Error::Dimension(format!(
            "H has {} rows but r has length {}",
            h.nrows(),
            r.len()
        )));
    }
    let scheme = ModulationScheme::new(q)?;
    let m = scheme.alphabet.len() as u128;
    let total = m
        .checked_pow(two_u as u32)
        .ok_or(Error::BudgetExceeded(u128::MAX, budget.max_candidates))?;
    if total > budget.max_candidates as u128 {
        return Err(Error::BudgetExceeded(total, budget.max_candidates));
    }
    let mut idx = vec![0usize; two_u];
    let mut best: Option<(Vec<i64>, f64)> = None;
    loop {
        let x = DVector::from_fn(two_u, |i, _| scheme.alphabet[idx[i]] as f64);
        let obj = (r - h * &x).norm_squared();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((idx.iter().map(|&i| scheme.alphabet[i]).collect(), obj));
        }
        // Odometer increment, last coordinate fastest.
        let mut pos = two_u;
        loop {
            if pos == 0 {
                let (symbols, obj) = best.expect("at least one candidate");
                return Ok((symbols, obj));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < scheme.alphabet.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}
