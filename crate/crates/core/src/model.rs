//! Closed-form transient and steady-state model of the matrix-step LMS.
//!
//! Weight errors are `θ = ψ − ψ_opt`. With `𝓜 = L Lᵀ`,
//! `R_mod = Lᵀ R_bloc L = Q Λ Qᵀ`, and `ν[n]` is the diagonal of the
//! second-moment matrix of `Qᵀ L⁻¹ θ[n]`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_factor, sym_eigen_desc, symmetrize};
use crate::scalar::Real;

/// Stability threshold for `tr(R_mod)`.
pub const TRACE_BOUND: f64 = 2.0 / 3.0;

#[derive(Clone, Debug)]
pub struct ModelSetup<T: Real> {
    pub r_bloc: DMatrix<T>,
    pub m: DMatrix<T>,
    pub j_min: T,
    /// Lower Cholesky factor of `𝓜`.
    pub l: DMatrix<T>,
    pub r_mod: DMatrix<T>,
    /// Eigenvalues of `R_mod`, descending.
    pub lambda: DVector<T>,
    /// Matching orthonormal eigenvectors.
    pub q: DMatrix<T>,
    pub phi: DMatrix<T>,
}

pub fn setup_model<T: Real>(r_bloc: &DMatrix<T>, m: &DMatrix<T>, j_min: T) -> Result<ModelSetup<T>> {
    if r_bloc.shape() != m.shape() || !r_bloc.is_square() {
        return Err(Error::Dimension(format!("R_bloc is {:?}, 𝓜 is {:?}", r_bloc.shape(), m.shape())));
    }
    if !(j_min >= T::zero()) {
        return Err(Error::InvalidParameter(format!("J_min must be >= 0, got {j_min}")));
    }
    cholesky(r_bloc, "R_bloc")?;
    let l = cholesky(m, "step-size matrix")?.l();
    let r_mod = symmetrize(&(l.transpose() * r_bloc * &l));
    let (mut lambda, q) = sym_eigen_desc(&r_mod);
    let n = lambda.len();
    if n > 0 {
        let floor = r_mod.trace() * T::of(1e-12) / T::of(n as f64);
        for v in lambda.iter_mut() {
            if *v < floor {
                log::warn!("R_mod eigenvalue {v} clamped to {floor}");
                *v = floor;
            }
        }
    }
    let phi = phi_matrix(&lambda);
    Ok(ModelSetup { r_bloc: r_bloc.clone(), m: m.clone(), j_min, l, r_mod, lambda, q, phi })
}

/// Eigenvalues of `𝓜 R_bloc` (descending) for a positive-semidefinite `𝓜`,
/// via `Gᵀ 𝓜 G` with `R_bloc = G Gᵀ`.
pub fn modal_eigenvalues<T: Real>(r_bloc: &DMatrix<T>, m: &DMatrix<T>) -> Result<DVector<T>> {
    if r_bloc.shape() != m.shape() || !r_bloc.is_square() {
        return Err(Error::Dimension(format!("R_bloc is {:?}, 𝓜 is {:?}", r_bloc.shape(), m.shape())));
    }
    let g = cholesky(r_bloc, "R_bloc")?.l();
    let (mut lambda, _) = sym_eigen_desc(&symmetrize(&(g.transpose() * m * &g)));
    let scale = lambda.iter().fold(T::zero(), |a, &l| a.max(l.abs()));
    for l in lambda.iter_mut() {
        if *l < T::zero() {
            if *l < -scale * T::tol(1e-10) {
                return Err(Error::NotPositiveDefinite("step-size matrix (indefinite)"));
            }
            *l = T::zero();
        }
    }
    Ok(lambda)
}

/// `Φ = diag(ρ) + λλᵀ` with `ρ_k = (1 − λ_k)² + λ_k²`.
pub fn phi_matrix<T: Real>(lambda: &DVector<T>) -> DMatrix<T> {
    let mut phi = lambda * lambda.transpose();
    for (k, &l) in lambda.iter().enumerate() {
        phi[(k, k)] += rho(l);
    }
    phi
}

fn rho<T: Real>(l: T) -> T {
    (T::one() - l) * (T::one() - l) + l * l
}

/// Model outputs; `nu` and `mean_theta` may be left empty by routines that
/// only need the MOP.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelTrajectory<T: Real> {
    pub nu: Vec<DVector<T>>,
    pub mean_theta: Vec<DVector<T>>,
    pub j: Vec<T>,
}

impl<T: Real> ModelTrajectory<T> {
    pub fn j_db(&self) -> Vec<f64> {
        self.j.iter().map(|j| crate::scalar::db(j.as_f64())).collect()
    }
}

impl<T: Real> ModelSetup<T> {
    /// Setup with `R_bloc = diag(λ)` and `𝓜 = I`, so `R_mod` has exactly the
    /// given eigenvalues.
    pub fn from_eigenvalues(lambda: &[T], j_min: T) -> Result<Self> {
        let n = lambda.len();
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
        setup_model(&r, &DMatrix::identity(n, n), j_min)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn trace(&self) -> T {
        self.lambda.sum()
    }

    /// `Qᵀ L⁻¹ x`.
    pub fn to_eigen(&self, x: &DVector<T>) -> DVector<T> {
        let y = self.l.solve_lower_triangular(x).expect("L is nonsingular");
        self.q.tr_mul(&y)
    }

    /// `L Q y`.
    pub fn from_eigen(&self, y: &DVector<T>) -> DVector<T> {
        &self.l * (&self.q * y)
    }

    /// `diag(Qᵀ L⁻¹ Rθθ L⁻ᵀ Q)`.
    pub fn nu0_from_covariance(&self, r_theta: &DMatrix<T>) -> Result<DVector<T>> {
        let n = self.dim();
        if r_theta.shape() != (n, n) {
            return Err(Error::Dimension(format!("Rθθ is {:?}, expected {n}×{n}", r_theta.shape())));
        }
        let a = self.l.solve_lower_triangular(r_theta).expect("L is nonsingular");
        let b = self.l.solve_lower_triangular(&a.transpose()).expect("L is nonsingular");
        let t = self.q.transpose() * b * &self.q;
        Ok(t.diagonal())
    }

    /// `ν[0]` for deterministic initial weight error `θ[0]`.
    pub fn nu0_from_theta(&self, theta0: &DVector<T>) -> DVector<T> {
        self.to_eigen(theta0).map(|v| v * v)
    }

    pub fn nu_step(&self, nu: &DVector<T>) -> DVector<T> {
        let s = self.lambda.dot(nu) + self.j_min;
        DVector::from_fn(nu.len(), |i, _| rho(self.lambda[i]) * nu[i] + self.lambda[i] * s)
    }

    /// `J = J_min + λᵀν`.
    pub fn mop(&self, nu: &DVector<T>) -> T {
        self.j_min + self.lambda.dot(nu)
    }

    /// Iterates the ν recursion, keeping `n_max + 1` states.
    pub fn nu_curve(&self, nu0: &DVector<T>, n_max: usize) -> ModelTrajectory<T> {
        let mut nu = Vec::with_capacity(n_max + 1);
        nu.push(nu0.clone());
        for k in 0..n_max {
            let next = self.nu_step(&nu[k]);
            nu.push(next);
        }
        let j = self.mop_curve(&nu);
        ModelTrajectory { nu, mean_theta: Vec::new(), j }
    }

    pub fn mop_curve(&self, nu: &[DVector<T>]) -> Vec<T> {
        nu.iter().map(|v| self.mop(v)).collect()
    }

    /// `J[0..n_len]` without storing ν.
    pub fn mop_only(&self, nu0: &DVector<T>, n_len: usize) -> Vec<T> {
        let mut nu = nu0.clone();
        let mut out = Vec::with_capacity(n_len);
        for _ in 0..n_len {
            let s = self.lambda.dot(&nu);
            out.push(self.j_min + s);
            let drive = s + self.j_min;
            for i in 0..nu.len() {
                nu[i] = rho(self.lambda[i]) * nu[i] + self.lambda[i] * drive;
            }
        }
        out
    }

    /// `ν[n] = Φⁿν[0] + J_min Σ_{j<n} Φʲ λ` through the eigendecomposition of `Φ`.
    pub fn nu_closed_form(&self, nu0: &DVector<T>, n: usize) -> Result<DVector<T>> {
        let (w, u) = sym_eigen_desc(&self.phi);
        let n_i = i32::try_from(n).map_err(|_| Error::InvalidParameter(format!("n = {n} too large")))?;
        let a = u.tr_mul(nu0);
        let b = u.tr_mul(&self.lambda);
        let mut y = DVector::zeros(w.len());
        for k in 0..w.len() {
            let wk = w[k];
            let pow = wk.powi(n_i);
            let geo = if (wk - T::one()).abs() < T::eps() * T::of(16.0) {
                T::of(n as f64)
            } else {
                (T::one() - pow) / (T::one() - wk)
            };
            y[k] = pow * a[k] + self.j_min * geo * b[k];
        }
        Ok(u * y)
    }

    /// Mean weight error in ψ-coordinates for `n = 0..=n_max`.
    pub fn mean_weight_curve(&self, theta0: &DVector<T>, n_max: usize) -> Vec<DVector<T>> {
        let mut y = self.to_eigen(theta0);
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(self.from_eigen(&y));
        for _ in 0..n_max {
            for (v, &l) in y.iter_mut().zip(self.lambda.iter()) {
                *v *= T::one() - l;
            }
            out.push(self.from_eigen(&y));
        }
        out
    }

    pub fn stability_report(&self, split: Option<SplitLoad<T>>) -> StabilityReport {
        StabilityReport::from_lambda(&self.lambda, split)
    }

    pub fn steady_state_jex(&self, variant: JexVariant<T>) -> Result<T> {
        let two = T::of(2.0);
        match variant {
            JexVariant::Exact => {
                if self.lambda.iter().any(|&l| l >= T::one()) {
                    return Err(Error::ModelInvalid("an eigenvalue of R_mod is >= 1".into()));
                }
                let half = self.lambda.iter().fold(T::zero(), |a, &l| a + l / (T::one() - l)) / two;
                let den = T::one() - half;
                if den <= T::zero() {
                    return Err(Error::ModelInvalid(format!("steady-state denominator {den} <= 0")));
                }
                Ok(self.j_min * half / den)
            }
            JexVariant::TraceApprox => trace_jex(self.j_min, self.trace()),
            JexVariant::Block(s) => {
                let t = s.total();
                if t >= two {
                    return Err(Error::ModelInvalid(format!("split load {t} >= 2")));
                }
                Ok(self.j_min * t / (two - t))
            }
            JexVariant::Simplified(s) => Ok(self.j_min * s.total() / two),
        }
    }
}

/// `J_min (t/2) / (1 − t/2)`.
pub fn trace_jex<T: Real>(j_min: T, trace: T) -> Result<T> {
    let half = trace / T::of(2.0);
    if half >= T::one() {
        return Err(Error::ModelInvalid(format!("tr(R_mod) = {trace} >= 2")));
    }
    Ok(j_min * half / (T::one() - half))
}

/// `μ_AEC tr(R_u)` and `μ_BF tr(Bᵀ R_xx B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitLoad<T> {
    pub aec: T,
    pub bf: T,
}

impl<T: Real> SplitLoad<T> {
    pub fn total(&self) -> T {
        self.aec + self.bf
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JexVariant<T> {
    /// `Σ λ/(1−λ)` form.
    Exact,
    /// Small-eigenvalue form in `tr(R_mod)`.
    TraceApprox,
    Block(SplitLoad<T>),
    Simplified(SplitLoad<T>),
}

/// Stability indicators; each bound is strict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    pub max_eig_phi: f64,
    /// `2 max λ + tr(R_mod)`, compared against 2.
    pub gershgorin: f64,
    pub trace: f64,
    /// `μ_AEC tr(R_u) + μ_BF tr(Bᵀ R_xx B)` when the policy is a scalar pair.
    pub split: Option<f64>,
}

impl StabilityReport {
    /// Report for the `R_mod` eigenvalues `lambda`.
    pub fn from_lambda<T: Real>(lambda: &DVector<T>, split: Option<SplitLoad<T>>) -> Self {
        let (eig, _) = sym_eigen_desc(&phi_matrix(lambda));
        let max_l = lambda.iter().fold(0.0f64, |a, l| a.max(l.as_f64()));
        let tr = lambda.sum().as_f64();
        StabilityReport {
            max_eig_phi: if eig.is_empty() { 0.0 } else { eig[0].as_f64() },
            gershgorin: 2.0 * max_l + tr,
            trace: tr,
            split: split.map(|s| s.total().as_f64()),
        }
    }

    pub fn eig_stable(&self) -> bool {
        self.max_eig_phi < 1.0
    }
    pub fn gershgorin_ok(&self) -> bool {
        self.gershgorin < 2.0
    }
    pub fn trace_ok(&self) -> bool {
        self.trace < TRACE_BOUND
    }
    pub fn split_ok(&self) -> Option<bool> {
        self.split.map(|s| s < TRACE_BOUND)
    }
    pub fn eig_margin(&self) -> f64 {
        1.0 - self.max_eig_phi
    }
    pub fn gershgorin_margin(&self) -> f64 {
        2.0 - self.gershgorin
    }
    pub fn trace_margin(&self) -> f64 {
        TRACE_BOUND - self.trace
    }
    /// Trace within a relative `1e-9` of the bound.
    pub fn marginal(&self) -> bool {
        (self.trace - TRACE_BOUND).abs() <= 1e-9 * TRACE_BOUND
    }
}

pub(crate) fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = short(TRACE_BOUND);
        if self.trace_ok() {
            write!(f, "stable, tr={} < {bound}", short(self.trace))
        } else if self.marginal() {
            write!(f, "marginal, tr={} = {bound}", short(self.trace))
        } else if self.eig_stable() {
            write!(f, "bound violated, tr={} >= {bound} (max eig(Phi)={})", short(self.trace), self.max_eig_phi)
        } else {
            write!(f, "unstable, tr={} >= {bound}, max eig(Phi)={}", short(self.trace), self.max_eig_phi)
        }
    }
}

/// Iterates the full `N_ψ × N_ψ` weight-error correlation recursion and
/// returns `J[0..=n_max]`.
pub fn full_matrix_recursion<T: Real>(
    r_bloc: &DMatrix<T>,
    m: &DMatrix<T>,
    j_min: T,
    r_theta0: &DMatrix<T>,
    n_max: usize,
) -> Result<Vec<T>> {
    let n = r_bloc.nrows();
    if !r_bloc.is_square() || m.shape() != (n, n) || r_theta0.shape() != (n, n) {
        return Err(Error::Dimension("R_bloc, 𝓜 and Rθθ[0] must share one square shape".into()));
    }
    let mr = m * r_bloc;
    let mrm = &mr * m;
    let mut r = r_theta0.clone();
    let mut out = Vec::with_capacity(n_max + 1);
    let two = T::of(2.0);
    for k in 0..=n_max {
        let tr = r_bloc.dot(&r);
        out.push(j_min + tr);
        if k == n_max {
            break;
        }
        let mrr = &mr * &r;
        let quad = &mrr * mr.transpose();
        r = &r - &mrr - mrr.transpose() + &mrm * (j_min + tr) + quad * two;
    }
    Ok(out)
}

/// Monte Carlo estimate of `E{g gᵀ Rθθ g gᵀ}` for `g ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct MomentCheck {
    pub estimate: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    /// `2 R Rθθ R + R tr(R Rθθ)`.
    pub closed_form: DMatrix<f64>,
}

impl MomentCheck {
    /// Largest `|estimate − closed form|` in units of the standard error.
    pub fn max_z(&self) -> f64 {
        self.estimate
            .iter()
            .zip(self.closed_form.iter())
            .zip(self.std_error.iter())
            .map(|((e, c), s)| (e - c).abs() / s.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

pub fn gaussian_moment_check(r: &DMatrix<f64>, r_theta: &DMatrix<f64>, draws: usize, seed: u64) -> Result<MomentCheck> {
    let n = r.nrows();
    if draws < 2 {
        return Err(Error::InvalidParameter("need at least 2 draws".into()));
    }
    let l = spd_factor(r, "R")?.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = DMatrix::zeros(n, n);
    let mut sum_sq = DMatrix::zeros(n, n);
    let mut z = DVector::zeros(n);
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let g = &l * &z;
        let s = g.dot(&(r_theta * &g));
        let x = &g * g.transpose() * s;
        sum_sq += x.component_mul(&x);
        sum += x;
    }
    let k = draws as f64;
    let estimate = &sum / k;
    let var = (sum_sq / k - estimate.component_mul(&estimate)) * (k / (k - 1.0));
    let std_error = var.map(|v| (v.max(0.0) / k).sqrt());
    let closed_form = r * r_theta * r * 2.0 + r * (r.dot(r_theta));
    Ok(MomentCheck { estimate, std_error, closed_form })
}

/// Propagates the first and second moments of `ψ` across stationary
/// segments, each with its own statistics and a positive semidefinite `𝓜`.
///
/// Within a segment, `R_bloc = G Gᵀ` and `Gᵀ 𝓜 G = V Λ Vᵀ`; in coordinates
/// `φ = Vᵀ Gᵀ θ` the input covariance is the identity and the step matrix
/// is `Λ`, so the MOP depends only on the diagonal of `E{φφᵀ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseModel<T: Real> {
    mean: DVector<T>,
    second: DMatrix<T>,
}

impl<T: Real> PiecewiseModel<T> {
    /// Deterministic initial weights.
    pub fn new(psi0: &DVector<T>) -> Self {
        Self { mean: psi0.clone(), second: psi0 * psi0.transpose() }
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    /// `E{ψψᵀ}`.
    pub fn second_moment(&self) -> &DMatrix<T> {
        &self.second
    }

    /// Appends `J[n]` for `len` samples under fixed statistics and step matrix.
    pub fn advance(
        &mut self,
        r_bloc: &DMatrix<T>,
        psi_opt: &DVector<T>,
        j_min: T,
        m: &DMatrix<T>,
        len: usize,
        out: &mut Vec<T>,
    ) -> Result<()> {
        let n = r_bloc.nrows();
        if m.shape() != (n, n) || psi_opt.len() != n || self.mean.len() != n {
            return Err(Error::Dimension("segment statistics do not match the model state".into()));
        }
        if !crate::linalg::is_symmetric(m, T::tol(1e-10)) {
            return Err(Error::NotPositiveDefinite("step-size matrix (asymmetric)"));
        }
        let len_i =
            i32::try_from(len).map_err(|_| Error::InvalidParameter(format!("segment of {len} samples too long")))?;
        let g = cholesky(r_bloc, "R_bloc")?.l();
        let k = symmetrize(&(g.transpose() * m * &g));
        let (mut lambda, v) = sym_eigen_desc(&k);
        let scale = lambda.iter().fold(T::zero(), |a, &l| a.max(l.abs()));
        for l in lambda.iter_mut() {
            if *l < T::zero() {
                if *l < -scale * T::tol(1e-10) {
                    return Err(Error::NotPositiveDefinite("step-size matrix (indefinite)"));
                }
                *l = T::zero();
            }
        }
        // T⁻¹ = Vᵀ Gᵀ and T = G⁻ᵀ V.
        let t_inv = v.transpose() * g.transpose();
        let t = g.transpose().solve_upper_triangular(&v).expect("G is nonsingular");

        let e_theta = &self.mean - psi_opt;
        let r_theta = &self.second - &self.mean * psi_opt.transpose() - psi_opt * self.mean.transpose()
            + psi_opt * psi_opt.transpose();
        let mut mean_phi = &t_inv * e_theta;
        let mut r_phi = symmetrize(&(&t_inv * r_theta * t_inv.transpose()));

        let mut d = r_phi.diagonal();
        let rho_v = lambda.map(rho);
        let l2 = lambda.map(|l| l * l);
        out.reserve(len);
        for _ in 0..len {
            let s = d.sum();
            out.push(j_min + s);
            let drive = j_min + s;
            for i in 0..n {
                d[i] = rho_v[i] * d[i] + l2[i] * drive;
            }
        }
        let two = T::of(2.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    r_phi[(i, i)] = d[i];
                } else {
                    let c = T::one() - lambda[i] - lambda[j] + two * lambda[i] * lambda[j];
                    r_phi[(i, j)] *= c.powi(len_i);
                }
            }
            mean_phi[i] *= (T::one() - lambda[i]).powi(len_i);
        }
        let e_theta = &t * mean_phi;
        let r_theta = symmetrize(&(&t * r_phi * t.transpose()));
        self.mean = &e_theta + psi_opt;
        self.second =
            r_theta + &e_theta * psi_opt.transpose() + psi_opt * e_theta.transpose() + psi_opt * psi_opt.transpose();
        Ok(())
    }
}
