//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Condition estimates above this are rejected.
pub const MAX_CONDITION: f64 = 1.0e12;

/// Relative floor added to the diagonal when a factorization fails.
pub const REGULARIZATION_FLOOR: f64 = 1.0e-12;

pub fn is_symmetric<T: Real>(a: &DMatrix<T>, rel_tol: T) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(T::tiny());
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::of(0.5)
}

/// Cholesky factorization of a matrix that must be SPD (no regularization).
pub fn cholesky<T: Real>(a: &DMatrix<T>, name: &'static str) -> Result<Cholesky<T, Dyn>> {
    if !is_symmetric(a, T::tol(1e-10)) {
        return Err(Error::NotPositiveDefinite(name));
    }
    Cholesky::new(symmetrize(a)).ok_or(Error::NotPositiveDefinite(name))
}

/// Cholesky factorization with an on-demand diagonal floor of
/// `1e-12 * trace / n`, and a condition check on the result.
pub fn spd_factor<T: Real>(a: &DMatrix<T>, name: &'static str) -> Result<Cholesky<T, Dyn>> {
    if !is_symmetric(a, T::tol(1e-10)) {
        return Err(Error::NotPositiveDefinite(name));
    }
    let sym = symmetrize(a);
    let chol = match Cholesky::new(sym.clone()) {
        Some(c) => c,
        None => {
            let n = sym.nrows().max(1);
            let floor = sym.trace() * T::of(REGULARIZATION_FLOOR) / T::of(n as f64);
            if floor <= T::zero() {
                return Err(Error::NotPositiveDefinite(name));
            }
            log::warn!("{name}: factorization failed, retrying with diagonal floor {floor}");
            let shifted = sym + DMatrix::identity(n, n) * floor;
            Cholesky::new(shifted).ok_or(Error::NotPositiveDefinite(name))?
        }
    };
    let estimate = cholesky_condition_estimate(&chol);
    if !(estimate.as_f64() <= MAX_CONDITION) {
        return Err(Error::IllConditioned { name, estimate: estimate.as_f64() });
    }
    Ok(chol)
}

/// Lower bound on the 2-norm condition number from the Cholesky diagonal.
pub fn cholesky_condition_estimate<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return T::one();
    }
    let mut lo = T::max_value().unwrap();
    let mut hi = T::zero();
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= T::zero() {
        return T::max_value().unwrap();
    }
    let r = hi / lo;
    r * r
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; eigenvectors are the matching columns.
pub fn sym_eigen_desc<T: Real>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Orthonormal basis of the orthogonal complement of `range(c)`, i.e. of
/// `null(cᵀ)`, taken from the trailing columns of a full Householder QR.
pub fn orthonormal_complement<T: Real>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (m, k) = c.shape();
    if k > m {
        return Err(Error::RankDeficient(format!("{k} constraints exceed {m} coefficients")));
    }
    check_full_column_rank(c, "constraint matrix")?;
    if k == m {
        return Ok(DMatrix::zeros(m, 0));
    }
    let qr = c.clone().qr();
    let mut q_t = DMatrix::<T>::identity(m, m);
    qr.q_tr_mul(&mut q_t);
    let q = q_t.transpose();
    Ok(q.columns(k, m - k).into_owned())
}

/// Rejects matrices whose Gram matrix is numerically singular.
pub fn check_full_column_rank<T: Real>(c: &DMatrix<T>, what: &str) -> Result<()> {
    if c.ncols() == 0 {
        return Ok(());
    }
    let gram = c.transpose() * c;
    let (vals, _) = sym_eigen_desc(&gram);
    let max = vals[0];
    let min = vals[vals.len() - 1];
    if !(max > T::zero()) || min <= max * T::of(1.0e-12).max(T::eps() * T::of(100.0)) {
        return Err(Error::RankDeficient(format!("{what} is not full column rank")));
    }
    Ok(())
}

/// Symmetric Toeplitz matrix from its first column.
pub fn toeplitz<T: Real>(first_col: &[T]) -> DMatrix<T> {
    let n = first_col.len();
    DMatrix::from_fn(n, n, |i, j| first_col[i.abs_diff(j)])
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn spd_inverse<T: Real>(chol: &Cholesky<T, Dyn>) -> DMatrix<T> {
    symmetrize(&chol.inverse())
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_diff<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let denom = b.norm().max(T::tiny());
    (a - b).norm() / denom
}
