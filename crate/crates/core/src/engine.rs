//! Time-domain adaptation of the GSC weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gsc::GscStructure;
use crate::linalg::{is_symmetric, spd_factor, spd_inverse, symmetrize};
use crate::scalar::Real;

/// Free GSC coordinates `ψ = [ψ_hc; ψ_b]` plus the sample counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveState<T: Real> {
    pub psi: DVector<T>,
    pub n: u64,
    n_aec: usize,
    g: DVector<T>,
    mg: DVector<T>,
}

impl<T: Real> AdaptiveState<T> {
    /// Starts from `ψ = 0`, i.e. the quiescent beamformer and an empty AEC.
    pub fn new(gsc: &GscStructure<T>) -> Self {
        Self::from_psi(gsc, DVector::zeros(gsc.n_psi())).expect("zero vector has the right length")
    }

    pub fn from_psi(gsc: &GscStructure<T>, psi: DVector<T>) -> Result<Self> {
        let n_psi = gsc.n_psi();
        if psi.len() != n_psi {
            return Err(Error::Dimension(format!("ψ has {} entries, N_ψ = {n_psi}", psi.len())));
        }
        Ok(Self { psi, n: 0, n_aec: gsc.n_aec, g: DVector::zeros(n_psi), mg: DVector::zeros(n_psi) })
    }

    /// AEC weights `ĥ`.
    pub fn psi_hc(&self) -> nalgebra::DVectorView<'_, T> {
        self.psi.rows(0, self.n_aec)
    }

    /// Blocked beamformer coordinates.
    pub fn psi_b(&self) -> nalgebra::DVectorView<'_, T> {
        self.psi.rows(self.n_aec, self.psi.len() - self.n_aec)
    }

    /// `B_extᵀ b` from the most recent step.
    pub fn projected(&self) -> &DVector<T> {
        &self.g
    }

    /// Loads `g = B_extᵀ b = [u_hc; Bᵀ x_w]` and returns `d = bᵀ q_ext − gᵀ ψ`.
    fn project(&mut self, b: &DVector<T>, gsc: &GscStructure<T>) -> T {
        let n_aec = gsc.n_aec;
        let x_w = b.rows(n_aec, b.len() - n_aec);
        for i in 0..n_aec {
            self.g[i] = -b[i];
        }
        let mut g_b = self.g.rows_mut(n_aec, self.g.len() - n_aec);
        gsc.b.tr_mul_to(&x_w, &mut g_b);
        x_w.dot(&gsc.q) - self.g.dot(&self.psi)
    }
}

/// `d = bᵀ (q_ext − B_ext ψ)`.
pub fn residual<T: Real>(b: &DVector<T>, psi: &DVector<T>, gsc: &GscStructure<T>) -> T {
    let n_aec = gsc.n_aec;
    // b starts with −u_hc, so this block contributes −u_hcᵀ ĥ.
    let x_w = b.rows(n_aec, b.len() - n_aec);
    let w = &gsc.q - &gsc.b * psi.rows(n_aec, psi.len() - n_aec);
    b.rows(0, n_aec).dot(&psi.rows(0, n_aec)) + x_w.dot(&w)
}

/// Split update with separate AEC and beamformer step sizes. Returns the
/// pre-update residual. A zero step size leaves its block untouched.
pub fn step_split<T: Real>(
    state: &mut AdaptiveState<T>,
    b: &DVector<T>,
    mu_aec: T,
    mu_bf: T,
    gsc: &GscStructure<T>,
) -> T {
    let d = state.project(b, gsc);
    let n_aec = gsc.n_aec;
    if mu_aec != T::zero() {
        for i in 0..n_aec {
            state.psi[i] += (mu_aec * state.g[i]) * d;
        }
    }
    if mu_bf != T::zero() {
        for i in n_aec..state.psi.len() {
            state.psi[i] += (mu_bf * state.g[i]) * d;
        }
    }
    state.n += 1;
    d
}

/// `ψ ← ψ + 𝓜 B_extᵀ b d`. Returns the pre-update residual.
pub fn step_general<T: Real>(
    state: &mut AdaptiveState<T>,
    b: &DVector<T>,
    m: &StepMatrix<T>,
    gsc: &GscStructure<T>,
) -> T {
    let d = state.project(b, gsc);
    state.mg.gemv(T::one(), &m.0, &state.g, T::zero());
    for i in 0..state.psi.len() {
        state.psi[i] += state.mg[i] * d;
    }
    state.n += 1;
    d
}

/// Symmetric positive-definite step-size matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMatrix<T: Real>(DMatrix<T>);

impl<T: Real> StepMatrix<T> {
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        if !is_symmetric(&m, T::tol(1e-10)) {
            return Err(Error::NotPositiveDefinite("step-size matrix (asymmetric)"));
        }
        if m.nrows() > 0 && nalgebra::Cholesky::new(symmetrize(&m)).is_none() {
            return Err(Error::NotPositiveDefinite("step-size matrix"));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// `diag(μ_AEC I, μ_BF I)`; both step sizes must be positive.
    pub fn split(n_aec: usize, n_psi: usize, mu_aec: T, mu_bf: T) -> Result<Self> {
        Self::new(split_matrix(n_aec, n_psi, mu_aec, mu_bf))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `diag(μ_AEC I_{N_AEC}, μ_BF I)` without definiteness checks.
pub fn split_matrix<T: Real>(n_aec: usize, n_psi: usize, mu_aec: T, mu_bf: T) -> DMatrix<T> {
    DMatrix::from_diagonal(&DVector::from_fn(n_psi, |i, _| if i < n_aec { mu_aec } else { mu_bf }))
}

/// Step rule of one policy segment.
#[derive(Clone, Debug, PartialEq)]
pub enum StepMode<T: Real> {
    ScalarPair { mu_aec: T, mu_bf: T },
    FullMatrix(StepMatrix<T>),
}

impl<T: Real> StepMode<T> {
    pub fn validate(&self, n_psi: usize) -> Result<()> {
        match self {
            StepMode::ScalarPair { mu_aec, mu_bf } => {
                if !(*mu_aec >= T::zero()) || !(*mu_bf >= T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "step sizes must be >= 0 (μ_AEC = {mu_aec}, μ_BF = {mu_bf})"
                    )));
                }
                Ok(())
            }
            StepMode::FullMatrix(m) if m.dim() != n_psi => {
                Err(Error::Dimension(format!("step-size matrix is {0}×{0}, N_ψ = {n_psi}", m.dim())))
            }
            StepMode::FullMatrix(_) => Ok(()),
        }
    }

    /// Dense `𝓜`; positive semidefinite for a scalar pair with a zero entry.
    pub fn matrix(&self, n_aec: usize, n_psi: usize) -> DMatrix<T> {
        match self {
            StepMode::ScalarPair { mu_aec, mu_bf } => split_matrix(n_aec, n_psi, *mu_aec, *mu_bf),
            StepMode::FullMatrix(m) => m.0.clone(),
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, StepMode::ScalarPair { mu_aec, mu_bf } if *mu_aec == T::zero() && *mu_bf == T::zero())
    }
}

/// One adaptation step under `mode`.
pub fn step<T: Real>(state: &mut AdaptiveState<T>, b: &DVector<T>, mode: &StepMode<T>, gsc: &GscStructure<T>) -> T {
    match mode {
        StepMode::ScalarPair { mu_aec, mu_bf } => step_split(state, b, *mu_aec, *mu_bf, gsc),
        StepMode::FullMatrix(m) => step_general(state, b, m, gsc),
    }
}

/// Piecewise-constant step rule; segment `k` applies from `segments[k].0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPolicy<T: Real> {
    segments: Vec<(u64, StepMode<T>)>,
}

impl<T: Real> StepPolicy<T> {
    pub fn constant(mode: StepMode<T>) -> Self {
        Self { segments: vec![(0, mode)] }
    }

    pub fn new(segments: Vec<(u64, StepMode<T>)>, n_psi: usize) -> Result<Self> {
        match segments.first() {
            Some((0, _)) => {}
            _ => return Err(Error::InvalidParameter("first policy segment must start at n = 0".into())),
        }
        for w in segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!("policy segment starts not increasing at n = {}", w[1].0)));
            }
        }
        for (_, mode) in &segments {
            mode.validate(n_psi)?;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(u64, StepMode<T>)] {
        &self.segments
    }

    pub fn mode_at(&self, n: u64) -> &StepMode<T> {
        let k = self.segments.partition_point(|(s, _)| *s <= n);
        &self.segments[k.saturating_sub(1)].1
    }
}

/// Target for the whitening step-size matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WhiteningTarget<T> {
    /// Common eigenvalue of `R_mod`.
    Lambda(T),
    /// `λ = (2/N_ψ) · J_ex[∞] / J[∞]`.
    Ratio { jex_inf: T, j_inf: T },
}

impl<T: Real> WhiteningTarget<T> {
    pub fn lambda(&self, n_psi: usize) -> Result<T> {
        let lambda = match *self {
            WhiteningTarget::Lambda(l) => l,
            WhiteningTarget::Ratio { jex_inf, j_inf } => {
                if !(j_inf > T::zero()) || !(jex_inf >= T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "bad steady-state target J_ex = {jex_inf}, J = {j_inf}"
                    )));
                }
                T::of(2.0) / T::of(n_psi as f64) * jex_inf / j_inf
            }
        };
        if !(lambda > T::zero()) {
            return Err(Error::InvalidParameter(format!("whitening eigenvalue must be positive, got {lambda}")));
        }
        if lambda * T::of(n_psi as f64) >= T::of(2.0 / 3.0) {
            log::warn!("whitening eigenvalue {lambda} puts tr(R_mod) at or above 2/3");
        }
        Ok(lambda)
    }
}

/// `𝓜 = λ R_bloc⁻¹`, which makes every eigenvalue of `R_mod` equal to `λ`.
pub fn quasi_newton_matrix<T: Real>(r_bloc: &DMatrix<T>, target: WhiteningTarget<T>) -> Result<StepMatrix<T>> {
    let lambda = target.lambda(r_bloc.nrows())?;
    let chol = spd_factor(r_bloc, "R_bloc")?;
    StepMatrix::new(spd_inverse(&chol) * lambda)
}

/// Running estimate of `R_bloc = E{g gᵀ}` that rebuilds the whitening matrix
/// every `every` samples.
#[derive(Clone, Debug)]
pub struct WhiteningRefresh<T: Real> {
    every: u64,
    lambda: T,
    acc: DMatrix<T>,
    count: u64,
}

impl<T: Real> WhiteningRefresh<T> {
    pub fn new(every: u64, lambda: T, n_psi: usize) -> Result<Self> {
        if every == 0 {
            return Err(Error::InvalidParameter("refresh interval must be >= 1".into()));
        }
        Ok(Self { every, lambda, acc: DMatrix::zeros(n_psi, n_psi), count: 0 })
    }

    /// Accumulates `g gᵀ`; every `every` samples returns a fresh matrix when
    /// the estimate is usable.
    pub fn observe(&mut self, g: &DVector<T>) -> Option<StepMatrix<T>> {
        self.acc.ger(T::one(), g, g, T::one());
        self.count += 1;
        if !self.count.is_multiple_of(self.every) {
            return None;
        }
        let est = &self.acc / T::of(self.count as f64);
        match quasi_newton_matrix(&est, WhiteningTarget::Lambda(self.lambda)) {
            Ok(m) => Some(m),
            Err(e) => {
                log::debug!("whitening refresh skipped at {} samples: {e}", self.count);
                None
            }
        }
    }
}
