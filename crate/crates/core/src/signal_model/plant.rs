//! Loudspeaker-enclosure-microphone (LEM) impulse responses.

use std::f64::consts::{LN_10, PI};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Parameters of the synthetic plant generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub mics: usize,
    pub taps: usize,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Reverberation time in seconds (60 dB energy decay).
    pub t60: f64,
    /// Oversampling factor of the prototype response.
    pub oversampling: usize,
    /// Inter-microphone offset in oversampled ticks.
    pub mic_spacing: usize,
}

/// The `M` echo paths as columns of an `N_h × M` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LemPlant<T: Real> {
    pub h: DMatrix<T>,
    pub fs: f64,
    pub t60: f64,
    pub oversampling: usize,
}

impl<T: Real> LemPlant<T> {
    /// Wraps an explicit response matrix (one column per microphone).
    pub fn from_matrix(h: DMatrix<T>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidParameter("plant matrix must be non-empty".into()));
        }
        for (m, col) in h.column_iter().enumerate() {
            let e = col.norm_squared();
            if !e.is_finite() || e <= T::zero() {
                return Err(Error::InvalidParameter(format!("plant column {m} is zero or non-finite")));
            }
        }
        Ok(Self { h, fs: f64::NAN, t60: f64::NAN, oversampling: 1 })
    }

    pub fn taps(&self) -> usize {
        self.h.nrows()
    }

    pub fn mics(&self) -> usize {
        self.h.ncols()
    }

    pub fn column_energies(&self) -> Vec<T> {
        self.h.column_iter().map(|c| c.norm_squared()).collect()
    }

    /// Delays column `m` by `delays[m]` whole samples (rows grow by the
    /// largest delay). Used to presteer the array toward a look direction.
    pub fn presteer(&self, delays: &[usize]) -> Result<Self> {
        if delays.len() != self.mics() {
            return Err(Error::Dimension(format!("{} steering delays for {} microphones", delays.len(), self.mics())));
        }
        let extra = delays.iter().copied().max().unwrap_or(0);
        if extra == 0 {
            return Ok(self.clone());
        }
        let n_h = self.taps();
        let mut h = DMatrix::zeros(n_h + extra, self.mics());
        for (m, &d) in delays.iter().enumerate() {
            h.view_mut((d, m), (n_h, 1)).copy_from(&self.h.column(m));
        }
        Ok(Self { h, ..self.clone() })
    }
}

/// Per-microphone presteering delays that align a source whose arrival at
/// microphone `m` lags microphone 0 by `m * delay_step` samples.
pub fn steering_delays(mics: usize, delay_step: i64) -> Vec<usize> {
    let arrivals: Vec<i64> = (0..mics as i64).map(|m| m * delay_step).collect();
    let latest = arrivals.iter().copied().max().unwrap_or(0);
    arrivals.iter().map(|a| (latest - a) as usize).collect()
}

/// Relative arrival offsets (non-negative) of a plane wave with the given
/// inter-microphone delay.
pub fn arrival_offsets(mics: usize, delay_step: i64) -> Vec<usize> {
    let arrivals: Vec<i64> = (0..mics as i64).map(|m| m * delay_step).collect();
    let earliest = arrivals.iter().copied().min().unwrap_or(0);
    arrivals.iter().map(|a| (a - earliest) as usize).collect()
}

/// Half-length (in oversampled ticks, per unit of oversampling) of the
/// band-limiting interpolator applied to the prototype.
const INTERP_HALF_SPAN: usize = 4;

/// Generates spatially correlated, exponentially decaying responses.
///
/// A single prototype is drawn at `F` times the sampling rate: white
/// Gaussian noise band-limited to the base-rate Nyquist frequency by a
/// Hann-windowed sinc, then shaped by the amplitude envelope
/// `exp(-3 ln10 · i / (F fs T60))`. Microphone `m` decimates the prototype
/// after an offset of `m · mic_spacing` ticks, i.e. `h_m[n] = g[nF - o_m]`
/// with `g` zero before the start. An offset `o = kF + p` is therefore a
/// whole-sample delay `k` plus a sub-sample phase `p/F`; offsets are not
/// wrapped. All columns are scaled so that column 0 has unit energy.
pub fn gen_lem_plant<T: Real>(params: &PlantParams, seed: u64) -> Result<LemPlant<T>> {
    let PlantParams { mics, taps, fs, t60, oversampling: f, mic_spacing } = *params;
    if mics == 0 || taps == 0 {
        return Err(Error::InvalidParameter("plant needs at least one microphone and one tap".into()));
    }
    if f == 0 {
        return Err(Error::InvalidParameter("oversampling factor must be >= 1".into()));
    }
    if !(t60 > 0.0 && t60.is_finite()) || !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidParameter("T60 and fs must be positive".into()));
    }
    let proto_len = f.checked_mul(taps).ok_or_else(|| Error::InvalidParameter("F * N_h overflows".into()))?;
    let max_offset = (mics - 1)
        .checked_mul(mic_spacing)
        .ok_or_else(|| Error::InvalidParameter("microphone offsets overflow".into()))?;
    if max_offset >= proto_len {
        return Err(Error::InvalidParameter(format!(
            "largest microphone offset {max_offset} ticks leaves no support within {proto_len} ticks"
        )));
    }

    let half = INTERP_HALF_SPAN * f;
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let k = i as f64 - half as f64;
            let x = k / f as f64;
            let sinc = if k == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            let window = 0.5 + 0.5 * (PI * k / (half as f64 + 1.0)).cos();
            sinc * window
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..proto_len + 2 * half).map(|_| StandardNormal.sample(&mut rng)).collect();
    let decay = 3.0 * LN_10 / (f as f64 * fs * t60);
    let proto: Vec<f64> = (0..proto_len)
        .map(|i| {
            let smooth: f64 = kernel.iter().zip(&white[i..i + kernel.len()]).map(|(a, b)| a * b).sum();
            smooth * (-decay * i as f64).exp()
        })
        .collect();

    let mut h = DMatrix::<f64>::zeros(taps, mics);
    for m in 0..mics {
        let offset = m * mic_spacing;
        for n in 0..taps {
            let tick = n * f;
            if tick >= offset {
                h[(n, m)] = proto[tick - offset];
            }
        }
    }
    let e0 = h.column(0).norm();
    if !(e0 > 0.0) {
        return Err(Error::Numerical("reference column has zero energy".into()));
    }
    h /= e0;
    for (m, col) in h.column_iter().enumerate() {
        if !(col.norm_squared() > 0.0) {
            return Err(Error::InvalidParameter(format!("plant column {m} is zero")));
        }
    }
    Ok(LemPlant { h: h.map(T::of), fs, t60, oversampling: f })
}

/// The `(N_h + N_BF − 1) × M·N_BF` block-shift matrix: column block `ℓ`
/// holds `H` moved down by `ℓ` rows, so that the stacked echo snapshots over
/// a window of `N_BF` samples equal `calHᵀ u` for the extended far-end
/// vector `u`.
pub fn modified_channel_matrix<T: Real>(h: &DMatrix<T>, n_bf: usize) -> Result<DMatrix<T>> {
    if n_bf == 0 {
        return Err(Error::InvalidParameter("N_BF must be >= 1".into()));
    }
    let (n_h, m) = h.shape();
    let mut cal = DMatrix::zeros(n_h + n_bf - 1, m * n_bf);
    for l in 0..n_bf {
        cal.view_mut((l, l * m), (n_h, m)).copy_from(h);
    }
    Ok(cal)
}
