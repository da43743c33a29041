//! Sample-by-sample assembly of the stacked regressor `b[n] = [-u_hc; x_w]`.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plant::{arrival_offsets, LemPlant};
use super::sources::{rng_for, FarEndModel, FarEndSource, Interferer, InterfererSource, NearEndModel, NOISE_STREAM};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dimensions of the stacked regressor.
///
/// The first `n_aec` entries hold `-u_hc[n]`; the remaining `mics * n_bf`
/// hold `x_w[n]` snapshot-major: all microphones at lag 0, then lag 1, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressorLayout {
    pub n_aec: usize,
    pub mics: usize,
    pub n_bf: usize,
}

impl RegressorLayout {
    pub fn dim(&self) -> usize {
        self.n_aec + self.mics * self.n_bf
    }

    pub fn bf_dim(&self) -> usize {
        self.mics * self.n_bf
    }

    /// Index in `b` of microphone `mic` at lag `lag`.
    pub fn x_index(&self, lag: usize, mic: usize) -> usize {
        self.n_aec + lag * self.mics + mic
    }
}

struct ActiveInterferer {
    source: InterfererSource,
    offsets: Vec<usize>,
    /// Recent interferer samples, newest first.
    line: Vec<f64>,
}

/// Delay-line state producing one stacked regressor per call to
/// [`RegressorStream::advance`]. Delay lines start silent.
pub struct RegressorStream<T: Real> {
    layout: RegressorLayout,
    h: nalgebra::DMatrix<T>,
    far: FarEndSource,
    noise_std: T,
    noise_rng: ChaCha8Rng,
    steering: Vec<usize>,
    interferer: Option<ActiveInterferer>,
    interferer_count: u64,
    seed: u64,
    /// Far-end history, newest first.
    u_line: Vec<T>,
    /// Microphone snapshots, newest first (snapshot-major).
    x_line: Vec<T>,
    echo: Vec<T>,
    b: DVector<T>,
    n: usize,
}

impl<T: Real> RegressorStream<T> {
    /// `plant` must already include any presteering; `steering` is only used
    /// to delay the near-end interferer consistently.
    pub fn new(
        plant: &LemPlant<T>,
        far: FarEndSource,
        near: &NearEndModel,
        steering: &[usize],
        n_aec: usize,
        n_bf: usize,
        seed: u64,
    ) -> Result<Self> {
        near.validate()?;
        let mics = plant.mics();
        if n_bf == 0 {
            return Err(Error::InvalidParameter("N_BF must be >= 1".into()));
        }
        let ext = plant.taps() + n_bf - 1;
        if n_aec > ext {
            return Err(Error::InvalidParameter(format!("N_AEC = {n_aec} exceeds N_h + N_BF - 1 = {ext}")));
        }
        let steering = if steering.is_empty() { vec![0; mics] } else { steering.to_vec() };
        if steering.len() != mics {
            return Err(Error::Dimension(format!("{} steering delays for {mics} microphones", steering.len())));
        }
        let layout = RegressorLayout { n_aec, mics, n_bf };
        let mut stream = Self {
            layout,
            h: plant.h.clone(),
            far,
            noise_std: T::of(near.noise_var.sqrt()),
            noise_rng: rng_for(seed, NOISE_STREAM),
            steering,
            interferer: None,
            interferer_count: 0,
            seed,
            u_line: vec![T::zero(); ext.max(n_aec)],
            x_line: vec![T::zero(); mics * n_bf],
            echo: vec![T::zero(); mics],
            b: DVector::zeros(layout.dim()),
            n: 0,
        };
        stream.set_interferer(near.interferer.as_ref());
        Ok(stream)
    }

    pub fn layout(&self) -> RegressorLayout {
        self.layout
    }

    /// Number of regressors emitted so far.
    pub fn samples_emitted(&self) -> usize {
        self.n
    }

    /// Replaces the echo paths; delay lines are kept.
    pub fn set_plant(&mut self, plant: &LemPlant<T>) -> Result<()> {
        if plant.mics() != self.layout.mics {
            return Err(Error::Dimension("plant change must keep the microphone count".into()));
        }
        let ext = plant.taps() + self.layout.n_bf - 1;
        if self.layout.n_aec > ext {
            return Err(Error::InvalidParameter("new plant is too short for N_AEC".into()));
        }
        if self.u_line.len() < ext {
            self.u_line.resize(ext, T::zero());
        }
        self.h = plant.h.clone();
        Ok(())
    }

    /// Starts (or stops, with `None`) the near-end interferer.
    pub fn set_interferer(&mut self, interferer: Option<&Interferer>) {
        self.interferer = interferer.map(|i| {
            self.interferer_count += 1;
            let arrivals = arrival_offsets(self.layout.mics, i.delay_step);
            let offsets: Vec<usize> = arrivals.iter().zip(&self.steering).map(|(a, s)| a + s).collect();
            let span = offsets.iter().copied().max().unwrap_or(0) + 1;
            ActiveInterferer {
                source: InterfererSource::new(
                    i,
                    self.seed.wrapping_add(self.interferer_count.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                ),
                offsets,
                line: vec![0.0; span],
            }
        });
    }

    /// Advances one sample and returns the new `b[n]`.
    pub fn advance(&mut self) -> &DVector<T> {
        let RegressorLayout { n_aec, mics, .. } = self.layout;
        let u = T::of(self.far.next_sample());
        let ulen = self.u_line.len();
        self.u_line.copy_within(0..ulen - 1, 1);
        self.u_line[0] = u;

        let n_h = self.h.nrows();
        let hs = self.h.as_slice();
        let recent = &self.u_line[..n_h];
        for m in 0..mics {
            let col = &hs[m * n_h..(m + 1) * n_h];
            self.echo[m] = col.iter().zip(recent).fold(T::zero(), |acc, (&h, &u)| acc + h * u);
        }
        if let Some(active) = &mut self.interferer {
            let ilen = active.line.len();
            active.line.copy_within(0..ilen - 1, 1);
            active.line[0] = active.source.next_sample();
        }

        let len = self.x_line.len();
        self.x_line.copy_within(0..len - mics, mics);
        for m in 0..mics {
            let noise: f64 = StandardNormal.sample(&mut self.noise_rng);
            let mut x = self.echo[m] + self.noise_std * T::of(noise);
            if let Some(active) = &self.interferer {
                x += T::of(active.line[active.offsets[m]]);
            }
            self.x_line[m] = x;
        }

        let b = self.b.as_mut_slice();
        for (dst, &u) in b[..n_aec].iter_mut().zip(&self.u_line) {
            *dst = -u;
        }
        b[n_aec..].copy_from_slice(&self.x_line);
        self.n += 1;
        &self.b
    }

    /// The most recent regressor.
    pub fn b(&self) -> &DVector<T> {
        &self.b
    }
}

/// Iterator adapter emitting owned regressors for a fixed number of samples.
pub struct RegressorIter<T: Real> {
    stream: RegressorStream<T>,
    remaining: usize,
}

impl<T: Real> Iterator for RegressorIter<T> {
    type Item = DVector<T>;

    fn next(&mut self) -> Option<DVector<T>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.stream.advance().clone())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Streams `n_samples` regressors for a fixed plant (no presteering).
pub fn stream_regressors<T: Real>(
    plant: &LemPlant<T>,
    far_end: &FarEndModel,
    near_end: &NearEndModel,
    n_aec: usize,
    n_bf: usize,
    n_samples: usize,
    seed: u64,
) -> Result<RegressorIter<T>> {
    let far = FarEndSource::new(far_end, seed)?;
    let stream = RegressorStream::new(plant, far, near_end, &[], n_aec, n_bf, seed)?;
    Ok(RegressorIter { stream, remaining: n_samples })
}
