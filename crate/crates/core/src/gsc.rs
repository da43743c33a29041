//! Linear constraints, quiescent vector, blocking matrix, and the optimal
//! constrained solution of the joint beamformer/echo-canceler problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_full_column_rank, orthonormal_complement, spd_factor};
use crate::scalar::Real;

/// Desired response of the beamformer in the look direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSpec {
    /// `f = [1, 0, …, 0]`.
    AllpassDelayless,
    /// Unit tap at `⌊N_f/2⌋`.
    LinearPhase,
    Custom(Vec<f64>),
}

/// Tap-sum constraints: for each tap `ℓ`, the weights of all microphones at
/// that tap add up to `f[ℓ]` (broadside look direction).
///
/// Returns `(C, f)` with `C` of size `M·N_BF × N_f`.
pub fn build_constraints<T: Real>(
    mics: usize,
    n_bf: usize,
    n_f: usize,
    response: &ResponseSpec,
) -> Result<(DMatrix<T>, DVector<T>)> {
    if mics == 0 || n_bf == 0 {
        return Err(Error::InvalidParameter("M and N_BF must be >= 1".into()));
    }
    if n_f > mics * n_bf {
        return Err(Error::InvalidParameter(format!("N_f = {n_f} exceeds M·N_BF = {}", mics * n_bf)));
    }
    if n_f != n_bf {
        return Err(Error::InvalidParameter(format!(
            "tap-sum constraints need N_f == N_BF (got N_f = {n_f}, N_BF = {n_bf})"
        )));
    }
    let f: Vec<f64> = match response {
        ResponseSpec::AllpassDelayless => (0..n_f).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        ResponseSpec::LinearPhase => (0..n_f).map(|i| if i == n_f / 2 { 1.0 } else { 0.0 }).collect(),
        ResponseSpec::Custom(v) => {
            if v.len() != n_f {
                return Err(Error::Dimension(format!("custom response has {} entries, N_f = {n_f}", v.len())));
            }
            v.clone()
        }
    };
    let c = DMatrix::from_fn(mics * n_bf, n_f, |i, j| if i / mics == j { T::one() } else { T::zero() });
    Ok((c, DVector::from_iterator(n_f, f.into_iter().map(T::of))))
}

/// `C_ext = [0_{N_f×N_AEC}  Cᵀ]ᵀ` and the minimum-norm feasible point
/// `q_ext = C_ext (C_extᵀ C_ext)⁻¹ f`.
pub fn extend_and_quiesce<T: Real>(c: &DMatrix<T>, f: &DVector<T>, n_aec: usize) -> Result<(DMatrix<T>, DVector<T>)> {
    if c.ncols() != f.len() {
        return Err(Error::Dimension(format!("C has {} columns, f has {} entries", c.ncols(), f.len())));
    }
    check_full_column_rank(c, "constraint matrix C")?;
    let (rows, n_f) = c.shape();
    let mut c_ext = DMatrix::zeros(n_aec + rows, n_f);
    c_ext.view_mut((n_aec, 0), (rows, n_f)).copy_from(c);
    let gram = c.transpose() * c;
    let chol = spd_factor(&gram, "CᵀC").map_err(|_| Error::RankDeficient("CᵀC is singular".into()))?;
    let coef = chol.solve(f);
    let q_ext = &c_ext * coef;
    Ok((c_ext, q_ext))
}

/// Orthonormal blocking matrix `B` (basis of `null(Cᵀ)`) and the block
/// diagonal `B_ext = diag(−I_{N_AEC}, B)`.
pub fn build_blocking<T: Real>(c: &DMatrix<T>, n_aec: usize) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let b = orthonormal_complement(c)?;
    let (rows, free) = b.shape();
    let mut b_ext = DMatrix::zeros(n_aec + rows, n_aec + free);
    for i in 0..n_aec {
        b_ext[(i, i)] = -T::one();
    }
    b_ext.view_mut((n_aec, n_aec), (rows, free)).copy_from(&b);
    Ok((b, b_ext))
}

/// All constraint-side objects of the GSC decomposition `a = q_ext − B_ext ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GscStructure<T: Real> {
    pub mics: usize,
    pub n_bf: usize,
    pub n_aec: usize,
    pub c: DMatrix<T>,
    pub f: DVector<T>,
    pub c_ext: DMatrix<T>,
    /// Beamformer part of `q_ext` (the AEC part is zero).
    pub q: DVector<T>,
    pub q_ext: DVector<T>,
    pub b: DMatrix<T>,
    pub b_ext: DMatrix<T>,
}

impl<T: Real> GscStructure<T> {
    pub fn new(mics: usize, n_bf: usize, n_aec: usize, c: DMatrix<T>, f: DVector<T>) -> Result<Self> {
        if c.nrows() != mics * n_bf {
            return Err(Error::Dimension(format!("C has {} rows, expected M·N_BF = {}", c.nrows(), mics * n_bf)));
        }
        let (c_ext, q_ext) = extend_and_quiesce(&c, &f, n_aec)?;
        let (b, b_ext) = build_blocking(&c, n_aec)?;
        let q = q_ext.rows(n_aec, mics * n_bf).into_owned();
        Ok(Self { mics, n_bf, n_aec, c, f, c_ext, q, q_ext, b, b_ext })
    }

    /// Tap-sum constraint family.
    pub fn tap_sum(mics: usize, n_bf: usize, n_f: usize, n_aec: usize, response: &ResponseSpec) -> Result<Self> {
        let (c, f) = build_constraints(mics, n_bf, n_f, response)?;
        Self::new(mics, n_bf, n_aec, c, f)
    }

    pub fn n_f(&self) -> usize {
        self.c.ncols()
    }

    /// Length of the stacked regressor / direct-form weight vector.
    pub fn n_b(&self) -> usize {
        self.n_aec + self.mics * self.n_bf
    }

    /// Number of free GSC coordinates.
    pub fn n_psi(&self) -> usize {
        self.b_ext.ncols()
    }

    /// Direct-form weights `q_ext − B_ext ψ`.
    pub fn direct_weights(&self, psi: &DVector<T>) -> DVector<T> {
        &self.q_ext - &self.b_ext * psi
    }
}

/// Optimal solutions and blocked statistics for one stationary regime.
#[derive(Clone, Debug)]
pub struct SecondOrderStats<T: Real> {
    pub r_bb: DMatrix<T>,
    /// `B_extᵀ R_bb B_ext`.
    pub r_bloc: DMatrix<T>,
    pub a_opt: DVector<T>,
    pub psi_opt: DVector<T>,
    pub j_min: T,
    /// `tr(R_u)` of the AEC input block.
    pub tr_ru: T,
    /// `tr(Bᵀ R_xx B)` of the blocked beamformer input.
    pub tr_bxb: T,
}

impl<T: Real> SecondOrderStats<T> {
    /// `𝒞(ψ) = q_extᵀ R q_ext − 2ψᵀ B_extᵀ R q_ext + ψᵀ R_bloc ψ`.
    pub fn cost(&self, gsc: &GscStructure<T>, psi: &DVector<T>) -> T {
        let rq = &self.r_bb * &gsc.q_ext;
        gsc.q_ext.dot(&rq) - T::of(2.0) * psi.dot(&(gsc.b_ext.transpose() * rq)) + psi.dot(&(&self.r_bloc * psi))
    }

    /// Output power `aᵀ R_bb a` of arbitrary direct-form weights.
    pub fn output_power(&self, a: &DVector<T>) -> T {
        a.dot(&(&self.r_bb * a))
    }
}

/// Computes `a_opt` through the direct LCMV formula and `ψ_opt` through the
/// GSC normal equations, and checks that both routes agree.
pub fn optimal_solutions<T: Real>(r_bb: &DMatrix<T>, gsc: &GscStructure<T>) -> Result<SecondOrderStats<T>> {
    let nb = gsc.n_b();
    if r_bb.shape() != (nb, nb) {
        return Err(Error::Dimension(format!("R_bb is {:?}, expected {nb}×{nb}", r_bb.shape())));
    }
    let r_chol = spd_factor(r_bb, "R_bb")?;
    let rinv_c = r_chol.solve(&gsc.c_ext);
    let inner = gsc.c_ext.transpose() * &rinv_c;
    let inner_chol = spd_factor(&crate::linalg::symmetrize(&inner), "C_extᵀ R_bb⁻¹ C_ext")?;
    let a_opt = &rinv_c * inner_chol.solve(&gsc.f);

    let r_bloc = crate::linalg::symmetrize(&(gsc.b_ext.transpose() * r_bb * &gsc.b_ext));
    let psi_opt = if gsc.n_psi() == 0 {
        DVector::zeros(0)
    } else {
        let bloc_chol = spd_factor(&r_bloc, "R_bloc")?;
        bloc_chol.solve(&(gsc.b_ext.transpose() * (r_bb * &gsc.q_ext)))
    };

    let via_gsc = gsc.direct_weights(&psi_opt);
    let scale = a_opt.norm().max(gsc.q_ext.norm()).max(T::tiny());
    let gap = (&via_gsc - &a_opt).norm() / scale;
    if gap > T::tol(1e-8) {
        return Err(Error::Numerical(format!("direct and GSC optimal solutions disagree (relative gap {gap})")));
    }
    let j_min = a_opt.dot(&(r_bb * &a_opt));
    let n_aec = gsc.n_aec;
    let nx = nb - n_aec;
    let tr_ru = r_bb.view((0, 0), (n_aec, n_aec)).trace();
    let r_xx = r_bb.view((n_aec, n_aec), (nx, nx));
    let tr_bxb = (gsc.b.transpose() * r_xx * &gsc.b).trace();
    Ok(SecondOrderStats { r_bb: r_bb.clone(), r_bloc, a_opt, psi_opt, j_min, tr_ru, tr_bxb })
}
