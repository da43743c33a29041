//! Closed-form second-order statistics of the stacked regressor.

use nalgebra::DMatrix;

use super::plant::{arrival_offsets, modified_channel_matrix};
use super::sources::{FarEndModel, NearEndModel};
use super::stream::RegressorLayout;
use crate::error::{Error, Result};
use crate::linalg::toeplitz;
use crate::scalar::Real;

/// `R_bb = E{b bᵀ}` assembled blockwise from the signal model.
///
/// With `u` the extended far-end vector of length `N_h + N_BF − 1`:
/// the AEC block is the leading `N_AEC × N_AEC` corner of `R_uu`, the
/// beamformer block is `calHᵀ R_uu calH + σ² I` (plus the interferer, if
/// any), and the cross block is `−[I 0] R_uu calH`.
///
/// `h` must already include presteering; `steering` delays the interferer
/// the same way the regressor stream does (empty means no steering).
pub fn analytic_rbb<T: Real>(
    far_end: &FarEndModel,
    h: &DMatrix<T>,
    near_end: &NearEndModel,
    steering: &[usize],
    n_aec: usize,
    n_bf: usize,
) -> Result<DMatrix<T>> {
    far_end.validate()?;
    near_end.validate()?;
    let (n_h, mics) = h.shape();
    let ext = n_h + n_bf.max(1) - 1;
    if n_aec > ext {
        return Err(Error::InvalidParameter(format!("N_AEC = {n_aec} exceeds N_h + N_BF - 1 = {ext}")));
    }
    let r: Vec<T> = (0..ext)
        .map(|k| far_end.autocorrelation(k).map(T::of))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::NoClosedForm("file-driven far end; estimate statistics from samples".into()))?;
    let r_uu = toeplitz(&r);
    let cal = modified_channel_matrix(h, n_bf)?;
    let layout = RegressorLayout { n_aec, mics, n_bf };
    let nb = layout.dim();
    let nx = layout.bf_dim();

    let r_uu_cal = &r_uu * &cal;
    let mut r_xx = cal.transpose() * &r_uu_cal;
    for i in 0..nx {
        r_xx[(i, i)] += T::of(near_end.noise_var);
    }
    if let Some(intf) = &near_end.interferer {
        let steer = if steering.is_empty() { vec![0; mics] } else { steering.to_vec() };
        let offsets: Vec<usize> =
            arrival_offsets(mics, intf.delay_step).iter().zip(&steer).map(|(a, s)| a + s).collect();
        for l1 in 0..n_bf {
            for m1 in 0..mics {
                for l2 in 0..n_bf {
                    for m2 in 0..mics {
                        let lag = (l1 + offsets[m1]).abs_diff(l2 + offsets[m2]);
                        r_xx[(l1 * mics + m1, l2 * mics + m2)] += T::of(intf.autocorrelation(lag));
                    }
                }
            }
        }
    }
    let cross = -r_uu_cal.rows(0, n_aec).into_owned();

    let mut r_bb = DMatrix::zeros(nb, nb);
    r_bb.view_mut((0, 0), (n_aec, n_aec)).copy_from(&r_uu.view((0, 0), (n_aec, n_aec)));
    r_bb.view_mut((0, n_aec), (n_aec, nx)).copy_from(&cross);
    r_bb.view_mut((n_aec, 0), (nx, n_aec)).copy_from(&cross.transpose());
    r_bb.view_mut((n_aec, n_aec), (nx, nx)).copy_from(&r_xx);
    Ok(r_bb)
}

/// Sample estimate `(1/N) Σ b bᵀ`, for file-driven far ends and for checks.
pub fn sample_rbb<T: Real, I>(regressors: I, dim: usize) -> DMatrix<T>
where
    I: IntoIterator<Item = nalgebra::DVector<T>>,
{
    let mut acc = DMatrix::zeros(dim, dim);
    let mut count = 0usize;
    for b in regressors {
        acc.ger(T::one(), &b, &b, T::one());
        count += 1;
    }
    if count > 0 {
        acc /= T::of(count as f64);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{sources::Interferer, stream::stream_regressors, LemPlant};

    #[test]
    fn white_single_tap_pair() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let r = analytic_rbb(&FarEndModel::White { variance: 1.0 }, &h, &NearEndModel::default(), &[], 1, 1).unwrap();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn ar1_toeplitz_corner() {
        let h = DMatrix::from_element(6, 1, 0.1);
        let r = analytic_rbb(&FarEndModel::Ar1 { a1: -0.9, variance: 1.0 }, &h, &NearEndModel::default(), &[], 5, 1)
            .unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((r[(i, j)] - 0.9f64.powi((i as i32 - j as i32).abs())).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn positive_definite_with_noise() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.4, 0.9, 0.1, 0.2]);
        let near = NearEndModel { noise_var: 1e-2, interferer: None };
        let r = analytic_rbb(&FarEndModel::Ar1 { a1: -0.5, variance: 1.0 }, &h, &near, &[], 4, 2).unwrap();
        assert!(crate::linalg::is_symmetric(&r, 1e-14));
        let (vals, _) = crate::linalg::sym_eigen_desc(&r);
        assert!(vals.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_file_far_end() {
        let h = DMatrix::from_element(2, 1, 1.0);
        let far = FarEndModel::Wav { path: "x.wav".into() };
        assert!(matches!(analytic_rbb(&far, &h, &NearEndModel::default(), &[], 1, 1), Err(Error::NoClosedForm(_))));
    }

    /// Sample covariance of the stream converges to the analytic matrix.
    #[test]
    fn matches_sample_covariance() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.4, 0.9, 0.2, -0.3]);
        let plant = LemPlant::from_matrix(h.clone()).unwrap();
        let far = FarEndModel::Ar1 { a1: -0.6, variance: 1.0 };
        let near =
            NearEndModel { noise_var: 0.05, interferer: Some(Interferer { power: 0.5, a1: -0.3, delay_step: 1 }) };
        let (n_aec, n_bf) = (3, 2);
        let analytic = analytic_rbb(&far, &h, &near, &[], n_aec, n_bf).unwrap();
        let n = 400_000;
        let est: DMatrix<f64> =
            sample_rbb(stream_regressors(&plant, &far, &near, n_aec, n_bf, n, 3).unwrap().skip(10), analytic.nrows());
        // Entrywise standard error bound for correlated Gaussian products,
        // with a generous factor for the AR(1) memory.
        for i in 0..analytic.nrows() {
            for j in 0..analytic.ncols() {
                let se = ((analytic[(i, i)] * analytic[(j, j)] + analytic[(i, j)].powi(2)) / n as f64).sqrt() * 4.0;
                assert!(
                    (est[(i, j)] - analytic[(i, j)]).abs() < 3.0 * se,
                    "({i},{j}) {} vs {}",
                    est[(i, j)],
                    analytic[(i, j)]
                );
            }
        }
    }
}
