//! Transmission model: i.i.d. Rayleigh channels, the real block embedding,
//! bit/layer/symbol maps for 4^Q-QAM, and noisy transmission.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Complex channel together with its real block embedding.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    pub hc: DMatrix<Complex<f64>>,
    /// 2B×2U real embedding [[Re, −Im], [Im, Re]].
    pub h: DMatrix<f64>,
}

impl ChannelInstance {
    pub fn from_complex(hc: DMatrix<Complex<f64>>) -> Result<Self> {
        let (b, u) = hc.shape();
        if u < 1 || b < u {
            return Err(Error::Invalid(format!(
                "need B >= U >= 1, got B={b}, U={u}"
            )));
        }
        let h = embed_real(&hc)?;
        Ok(Self { hc, h })
    }

    pub fn b(&self) -> usize {
        self.hc.nrows()
    }

    pub fn u(&self) -> usize {
        self.hc.ncols()
    }
}

/// Per-real-dimension PAM alphabet {±1, ±3, …, ±(2^Q−1)} for 4^Q-QAM.
#[derive(Debug, Clone)]
pub struct ModulationScheme {
    pub q: u32,
    pub alphabet: Vec<i64>,
}

impl ModulationScheme {
    pub fn new(q: u32) -> Result<Self> {
        if !(1..=16).contains(&q) {
            return Err(Error::Invalid(format!("Q must be in 1..=16, got {q}")));
        }
        let m = 1i64 << q;
        let alphabet = (0..m).map(|i| 2 * i - (m - 1)).collect();
        Ok(Self { q, alphabet })
    }

    /// Average alphabet energy per real dimension, (4^Q − 1)/3.
    pub fn es_real(&self) -> f64 {
        ((1u64 << (2 * self.q)) as f64 - 1.0) / 3.0
    }

    pub fn contains(&self, s: i64) -> bool {
        let m = 1i64 << self.q;
        s.abs() < m && s.rem_euclid(2) == 1
    }
}

/// One transmitted frame: bits, their binary layers, and the composed symbols.
#[derive(Debug, Clone)]
pub struct TransmitFrame {
    /// Layer-major bit layout: bits[(q−1)·2U + i] maps to layers[q][i].
    pub bits: Vec<u8>,
    pub layers: Vec<DVector<f64>>,
    pub symbols: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct ReceivedVector {
    pub r: DVector<f64>,
    /// σ² per complex noise entry (linear power); the real embedding uses σ²/2 per entry.
    pub noise_variance: f64,
}

/// Real block embedding of a complex matrix: [[Re, −Im], [Im, Re]].
pub fn embed_real(hc: &DMatrix<Complex<f64>>) -> Result<DMatrix<f64>> {
    if hc.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("embed_real"));
    }
    let (b, u) = hc.shape();
    let mut h = DMatrix::<f64>::zeros(2 * b, 2 * u);
    for i in 0..b {
        for j in 0..u {
            let c = hc[(i, j)];
            h[(i, j)] = c.re;
            h[(i, j + u)] = -c.im;
            h[(i + b, j)] = c.im;
            h[(i + b, j + u)] = c.re;
        }
    }
    Ok(h)
}

/// Stack a complex vector as [Re; Im].
pub fn embed_real_vector(v: &[Complex<f64>]) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Map a 2U·Q bit vector to Q binary layers via b → 2b − 1.
pub fn map_bits_to_layers(bits: &[u8], q: u32, u: usize) -> Result<Vec<DVector<f64>>> {
    let two_u = 2 * u;
    if bits.len() != two_u * q as usize {
        return Err(Error::Dimension(format!(
            "expected {} bits (2U·Q), got {}",
            two_u * q as usize,
            bits.len()
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Invalid(format!("bit value {b} is not 0/1")));
    }
    Ok((0..q as usize)
        .map(|layer| {
            DVector::from_fn(two_u, |i, _| 2.0 * f64::from(bits[layer * two_u + i]) - 1.0)
        })
        .collect())
}

/// Extract the layer-major bit vector from ±1 layers.
pub fn layers_to_bits(layers: &[DVector<f64>]) -> Vec<u8> {
    layers
        .iter()
        .flat_map(|l| l.iter().map(|&v| u8::from(v > 0.0)))
        .collect()
}

/// Compose symbols x = Σ_q 2^{q−1}·layer[q] from ±1 layers.
pub fn compose_symbols(layers: &[DVector<f64>]) -> Result<Vec<i64>> {
    let q = layers.len();
    if q == 0 {
        return Err(Error::Invalid("no layers given".into()));
    }
    let n = layers[0].len();
    if layers.iter().any(|l| l.len() != n) {
        return Err(Error::Dimension("layers have unequal lengths".into()));
    }
    let mut out = vec![0i64; n];
    for (li, layer) in layers.iter().enumerate() {
        for (i, &v) in layer.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(Error::Invalid(format!(
                    "layer {li} entry {i} is {v}, expected ±1"
                )));
            }
            out[i] += (1i64 << li) * v as i64;
        }
    }
    Ok(out)
}

/// Unique binary layers recomposing to the given alphabet symbols.
pub fn decompose_symbols(x: &[i64], q: u32) -> Result<Vec<DVector<f64>>> {
    let scheme = ModulationScheme::new(q)?;
    let m = 1i64 << q;
    let mut layers = vec![DVector::<f64>::zeros(x.len()); q as usize];
    for (i, &s) in x.iter().enumerate() {
        if !scheme.contains(s) {
            return Err(Error::Invalid(format!(
                "symbol {s} outside alphabet for Q={q}"
            )));
        }
        // s = Σ 2^l · (2b_l − 1)  ⇔  (s + (2^Q − 1))/2 has binary digits b_l.
        let idx = (s + (m - 1)) / 2;
        for (l, layer) in layers.iter_mut().enumerate() {
            layer[i] = if (idx >> l) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
    Ok(layers)
}

/// Per-receive-antenna SNR convention with unit-variance channel entries:
/// σ² = U · Es_complex / 10^(snr_db/10), Es_complex = 2·Es_real.
pub fn snr_to_noise_variance(snr_db: f64, u: usize, q: u32) -> f64 {
    let es_real = ((1u64 << (2 * q)) as f64 - 1.0) / 3.0;
    u as f64 * 2.0 * es_real / 10f64.powf(snr_db / 10.0)
}

/// r = Hx + n with real-domain noise of per-entry variance σ²/2.
pub fn transmit<R: Rng>(
    h: &DMatrix<f64>,
    x: &DVector<f64>,
    sigma2: f64,
    rng: &mut R,
) -> Result<ReceivedVector> {
    if h.ncols() != x.len() {
        return Err(Error::Dimension(format!(
            "H is {}×{} but x has length {}",
            h.nrows(),
            h.ncols(),
            x.len()
        )));
    }
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::Invalid(format!("noise variance {sigma2}")));
    }
    let mut r = h * x;
    if sigma2 > 0.0 {
        let sd = (sigma2 / 2.0).sqrt();
        for v in r.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += sd * n;
        }
    }
    Ok(ReceivedVector {
        r,
        noise_variance: sigma2,
    })
}

/// B×U channel with i.i.d. CN(0, 1) entries (real/imag parts variance 1/2).
pub fn sample_channel<R: Rng>(b: usize, u: usize, rng: &mut R) -> Result<ChannelInstance> {
    if u < 1 || b < u {
        return Err(Error::Invalid(format!(
            "need B >= U >= 1, got B={b}, U={u}"
        )));
    }
    let s = 0.5f64.sqrt();
    let hc = DMatrix::from_fn(b, u, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(s * re, s * im)
    });
    ChannelInstance::from_complex(hc)
}

/// Uniformly random frame of 2U·Q bits with its layers and symbols.
pub fn random_frame<R: Rng>(u: usize, q: u32, rng: &mut R) -> Result<TransmitFrame> {
    let bits: Vec<u8> = (0..2 * u * q as usize)
        .map(|_| u8::from(rng.random::<bool>()))
        .collect();
    let layers = map_bits_to_layers(&bits, q, u)?;
    let symbols = compose_symbols(&layers)?;
    Ok(TransmitFrame {
        bits,
        layers,
        symbols,
    })
}

/// Symbols as a real vector, the detector-facing view.
pub fn symbols_to_vector(x: &[i64]) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().map(|&s| s as f64))
}
