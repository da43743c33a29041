//! Far-end and near-end signal models.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// RNG stream indices; one seed feeds independent streams per source.
pub(crate) const FAR_END_STREAM: u64 = 0;
pub(crate) const NOISE_STREAM: u64 = 1;
pub(crate) const INTERFERER_STREAM: u64 = 2;
pub(crate) const WALK_STREAM: u64 = 3;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FarEndModel {
    White {
        variance: f64,
    },
    /// `u[n] = -a1 u[n-1] + z[n]` with the driving variance chosen so that
    /// `u` has the given variance.
    Ar1 {
        a1: f64,
        variance: f64,
    },
    /// Mono 16-bit PCM WAV, normalized to unit power and played in a loop
    /// from a seed-dependent starting point.
    Wav {
        path: PathBuf,
    },
}

impl FarEndModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FarEndModel::White { variance } if !(variance >= 0.0 && variance.is_finite()) => {
                Err(Error::InvalidParameter(format!("far-end variance {variance}")))
            }
            FarEndModel::Ar1 { a1, variance } => {
                if !(a1.abs() < 1.0) {
                    return Err(Error::InvalidParameter(format!("AR(1) coefficient |a1| = {} >= 1", a1.abs())));
                }
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidParameter(format!("far-end variance {variance}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `E{u[n] u[n-lag]}` when it has a closed form.
    pub fn autocorrelation(&self, lag: usize) -> Option<f64> {
        match *self {
            FarEndModel::White { variance } => Some(if lag == 0 { variance } else { 0.0 }),
            FarEndModel::Ar1 { a1, variance } => Some(variance * (-a1).powi(lag as i32)),
            FarEndModel::Wav { .. } => None,
        }
    }
}

/// Local interference present during double-talk: an AR(1) source reaching
/// the array as a plane wave with integer inter-microphone delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interferer {
    pub power: f64,
    pub a1: f64,
    /// Arrival lag of microphone `m` relative to microphone 0 is `m * delay_step`.
    #[serde(default)]
    pub delay_step: i64,
}

impl Interferer {
    pub fn validate(&self) -> Result<()> {
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidParameter(format!("interferer power {}", self.power)));
        }
        if !(self.a1.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("interferer |a1| = {} >= 1", self.a1.abs())));
        }
        Ok(())
    }

    pub fn autocorrelation(&self, lag: usize) -> f64 {
        self.power * (-self.a1).powi(lag as i32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearEndModel {
    /// White Gaussian noise variance at every microphone.
    pub noise_var: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer: Option<Interferer>,
}

impl NearEndModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {}", self.noise_var)));
        }
        if let Some(i) = &self.interferer {
            i.validate()?;
        }
        Ok(())
    }
}

/// Reads a mono 16-bit PCM WAV file and scales it to unit mean power.
pub fn load_wav_unit_power(path: &Path) -> Result<Vec<f64>> {
    let fmt_err = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => fmt_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(fmt_err(format!(
            "expected mono 16-bit PCM, found {} channel(s), {} bits, {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(f64::from))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fmt_err(e.to_string()))?;
    let power = samples.iter().map(|s| s * s).sum::<f64>() / samples.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(fmt_err("file is empty or silent".into()));
    }
    let scale = power.sqrt().recip();
    Ok(samples.into_iter().map(|s| s * scale).collect())
}

#[derive(Debug, Clone)]
enum Generator {
    White { std: f64 },
    Ar1 { coef: f64, drive_std: f64, prev: f64 },
    Samples { data: Arc<[f64]>, pos: usize },
}

/// Sample-by-sample far-end generator.
#[derive(Debug, Clone)]
pub struct FarEndSource {
    generator: Generator,
    rng: ChaCha8Rng,
    /// Optional log-power random walk `(eta, current log-power, rng)`.
    walk: Option<(f64, f64, ChaCha8Rng)>,
}

impl FarEndSource {
    /// Creates a generator. WAV data is loaded from disk; use
    /// [`FarEndSource::from_samples`] to share loaded samples across runs.
    pub fn new(model: &FarEndModel, seed: u64) -> Result<Self> {
        match model {
            FarEndModel::Wav { path } => {
                let data: Arc<[f64]> = load_wav_unit_power(path)?.into();
                Ok(Self::from_samples(data, seed))
            }
            _ => Self::parametric(model, seed),
        }
    }

    fn parametric(model: &FarEndModel, seed: u64) -> Result<Self> {
        model.validate()?;
        let mut rng = rng_for(seed, FAR_END_STREAM);
        let generator = match *model {
            FarEndModel::White { variance } => Generator::White { std: variance.sqrt() },
            FarEndModel::Ar1 { a1, variance } => {
                // Start from the stationary distribution.
                let z: f64 = StandardNormal.sample(&mut rng);
                Generator::Ar1 { coef: -a1, drive_std: (variance * (1.0 - a1 * a1)).sqrt(), prev: z * variance.sqrt() }
            }
            FarEndModel::Wav { .. } => unreachable!(),
        };
        Ok(Self { generator, rng, walk: None })
    }

    pub fn from_samples(data: Arc<[f64]>, seed: u64) -> Self {
        let mut rng = rng_for(seed, FAR_END_STREAM);
        let pos = if data.is_empty() { 0 } else { rng.random_range(0..data.len()) };
        Self { generator: Generator::Samples { data, pos }, rng, walk: None }
    }

    /// Modulates the output by `exp(l[n]/2)` where the log-power `l` takes
    /// independent Gaussian steps of standard deviation `eta` per sample.
    pub fn with_power_walk(mut self, eta: f64, seed: u64) -> Self {
        if eta > 0.0 {
            self.walk = Some((eta, 0.0, rng_for(seed, WALK_STREAM)));
        }
        self
    }

    pub fn next_sample(&mut self) -> f64 {
        let raw = match &mut self.generator {
            Generator::White { std } => {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *std * z
            }
            Generator::Ar1 { coef, drive_std, prev } => {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let u = *coef * *prev + *drive_std * z;
                *prev = u;
                u
            }
            Generator::Samples { data, pos } => {
                if data.is_empty() {
                    0.0
                } else {
                    let u = data[*pos];
                    *pos = (*pos + 1) % data.len();
                    u
                }
            }
        };
        match &mut self.walk {
            Some((eta, level, rng)) => {
                let z: f64 = StandardNormal.sample(rng);
                *level += *eta * z;
                raw * (0.5 * *level).exp()
            }
            None => raw,
        }
    }
}

/// Generates `n` far-end samples; identical to what a regressor stream
/// built with the same seed consumes.
pub fn gen_far_end<T: Real>(model: &FarEndModel, n_samples: usize, seed: u64) -> Result<Vec<T>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let mut src = FarEndSource::new(model, seed)?;
    Ok((0..n_samples).map(|_| T::of(src.next_sample())).collect())
}

/// AR(1) interferer generator, stationary from the first sample.
#[derive(Debug, Clone)]
pub(crate) struct InterfererSource {
    coef: f64,
    drive_std: f64,
    prev: f64,
    rng: ChaCha8Rng,
}

impl InterfererSource {
    pub(crate) fn new(i: &Interferer, seed: u64) -> Self {
        let mut rng = rng_for(seed, INTERFERER_STREAM);
        let z: f64 = StandardNormal.sample(&mut rng);
        Self { coef: -i.a1, drive_std: (i.power * (1.0 - i.a1 * i.a1)).sqrt(), prev: z * i.power.sqrt(), rng }
    }

    pub(crate) fn next_sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let s = self.coef * self.prev + self.drive_std * z;
        self.prev = s;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_variance() {
        let u: Vec<f64> = gen_far_end(&FarEndModel::White { variance: 1.0 }, 1_000_000, 1).unwrap();
        let var = u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn ar1_lag_one_correlation() {
        // Long-run sample autocorrelation oracle: r(1)/r(0) -> -a1.
        let u: Vec<f64> = gen_far_end(&FarEndModel::Ar1 { a1: -0.9, variance: 1.0 }, 1_000_000, 2).unwrap();
        let r0 = u.iter().map(|x| x * x).sum::<f64>();
        let r1 = u.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        let rho = r1 / r0;
        assert!((rho - 0.9).abs() < 0.9 * 0.02, "{rho}");
        let var = r0 / u.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn ar1_half_pole() {
        let m = FarEndModel::Ar1 { a1: -0.5, variance: 1.0 };
        assert_eq!(m.autocorrelation(2), Some(0.25));
        let u: Vec<f64> = gen_far_end(&m, 200_000, 3).unwrap();
        let r0 = u.iter().map(|x| x * x).sum::<f64>();
        let r1 = u.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        assert!((r1 / r0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn deterministic_and_validated() {
        let m = FarEndModel::Ar1 { a1: 0.3, variance: 2.0 };
        let a: Vec<f64> = gen_far_end(&m, 100, 9).unwrap();
        let b: Vec<f64> = gen_far_end(&m, 100, 9).unwrap();
        assert_eq!(a, b);
        assert!(gen_far_end::<f64>(&FarEndModel::Ar1 { a1: 1.0, variance: 1.0 }, 10, 0).is_err());
        assert!(gen_far_end::<f64>(&m, 0, 0).is_err());
    }

    #[test]
    fn wav_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speech.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..1000 {
            w.write_sample(((i % 7) as i16 - 3) * 1000).unwrap();
        }
        w.finalize().unwrap();
        let data = load_wav_unit_power(&path).unwrap();
        let p = data.iter().map(|x| x * x).sum::<f64>() / data.len() as f64;
        assert!((p - 1.0).abs() < 1e-12);
        let u: Vec<f64> = gen_far_end(&FarEndModel::Wav { path: path.clone() }, 2500, 4).unwrap();
        assert_eq!(u.len(), 2500);

        let stereo = dir.path().join("stereo.wav");
        let spec2 = hound::WavSpec { channels: 2, ..spec };
        let mut w = hound::WavWriter::create(&stereo, spec2).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav_unit_power(&stereo), Err(Error::Format { .. })));
        assert!(matches!(load_wav_unit_power(&dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn power_walk_changes_level() {
        let m = FarEndModel::White { variance: 1.0 };
        let mut plain = FarEndSource::new(&m, 5).unwrap();
        let mut walked = FarEndSource::new(&m, 5).unwrap().with_power_walk(0.05, 5);
        let a: Vec<f64> = (0..1000).map(|_| plain.next_sample()).collect();
        let b: Vec<f64> = (0..1000).map(|_| walked.next_sample()).collect();
        assert_ne!(a, b);
        let mut zero = FarEndSource::new(&m, 5).unwrap().with_power_walk(0.0, 5);
        let c: Vec<f64> = (0..1000).map(|_| zero.next_sample()).collect();
        assert_eq!(a, c);
    }
}
