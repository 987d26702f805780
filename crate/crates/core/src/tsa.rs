//! Autocovariance and autoregressive model estimation over data with gaps.

use ndarray::ArrayView2;
use thiserror::Error;

use crate::nanstat::{nan_count, nan_mean, nan_var, KahanSum};

#[derive(Debug, Error, PartialEq)]
pub enum TsaError {
    #[error("lag {max_lag} needs more than {len} samples")]
    LagTooLarge { max_lag: usize, len: usize },
    #[error("autocovariance must start with a positive finite variance and be finite")]
    InvalidAutocovariance,
    #[error("prediction error variance vanished at order {0}")]
    SingularAtOrder(usize),
}

/// Autoregressive model in prediction form:
/// `x[t] = sum_k coeffs[k-1] * x[t-k] + e[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    pub noise_var: f64,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }
}

/// Autocovariance up to `max_lag`.
///
/// Lag `l` averages `(x[t]-m)(x[t+l]-m)` over the pairs where both samples
/// are valid, dividing by the number of such pairs; `m` is the NaN-skipping
/// mean of the whole series. Lags without a valid pair are NaN.
pub fn nan_acovf(x: &[f64], max_lag: usize) -> Result<Vec<f64>, TsaError> {
    if max_lag >= x.len() {
        return Err(TsaError::LagTooLarge {
            max_lag,
            len: x.len(),
        });
    }
    let m = nan_mean(x);
    Ok((0..=max_lag)
        .map(|lag| {
            let mut n = 0usize;
            let mut acc = KahanSum::default();
            for (a, b) in x.iter().zip(&x[lag..]) {
                if !a.is_nan() && !b.is_nan() {
                    acc.add((a - m) * (b - m));
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                acc.value() / n as f64
            }
        })
        .collect())
}

/// Solves the Yule-Walker equations of order `r.len() - 1` by the
/// Levinson-Durbin recursion.
pub fn levinson_durbin(r: &[f64]) -> Result<ArModel, TsaError> {
    let Some(&r0) = r.first() else {
        return Err(TsaError::InvalidAutocovariance);
    };
    if !(r0 > 0.0) || r.iter().any(|v| !v.is_finite()) {
        return Err(TsaError::InvalidAutocovariance);
    }
    let p = r.len() - 1;
    let mut a = vec![0.0; p];
    let mut prev = vec![0.0; p];
    let mut reflection = Vec::with_capacity(p);
    let mut err = r0;
    for k in 1..=p {
        let mut acc = r[k];
        for j in 1..k {
            acc -= a[j - 1] * r[k - j];
        }
        let kk = acc / err;
        prev[..k - 1].copy_from_slice(&a[..k - 1]);
        for j in 1..k {
            a[j - 1] = prev[j - 1] - kk * prev[k - j - 1];
        }
        a[k - 1] = kk;
        reflection.push(kk);
        err *= 1.0 - kk * kk;
        if !(err > 0.0) || !err.is_finite() {
            return Err(TsaError::SingularAtOrder(k));
        }
    }
    Ok(ArModel {
        coeffs: a,
        reflection,
        noise_var: err,
    })
}

/// AR coefficients and log-variance for each channel of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFeatures {
    /// `channels * order` values, channel-major.
    pub coeffs: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl ArFeatures {
    /// Coefficients followed by log-variances.
    pub fn into_vec(self) -> Vec<f64> {
        let mut v = self.coeffs;
        v.extend(self.log_var);
        v
    }
}

/// Per channel: `nan_acovf` to lag `order`, Levinson-Durbin, and
/// `ln(nan_var(ddof = 1))`.
///
/// A channel with fewer than `order + 1` valid samples, or whose recursion
/// breaks down, contributes NaN rather than an error.
pub fn ar_features(epoch: ArrayView2<'_, f64>, order: usize) -> ArFeatures {
    let mut coeffs = Vec::with_capacity(epoch.nrows() * order);
    let mut log_var = Vec::with_capacity(epoch.nrows());
    for row in epoch.rows() {
        let x: Vec<f64> = row.to_vec();
        let model = (nan_count(&x) > order)
            .then(|| nan_acovf(&x, order).ok())
            .flatten()
            .and_then(|r| levinson_durbin(&r).ok());
        match model {
            Some(m) => coeffs.extend(m.coeffs),
            None => coeffs.extend(std::iter::repeat_n(f64::NAN, order)),
        }
        log_var.push(nan_var(&x, 1).ln());
    }
    ArFeatures { coeffs, log_var }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    const NAN: f64 = f64::NAN;

    /// Gaussian elimination with partial pivoting on the Toeplitz system.
    fn dense_yule_walker(r: &[f64]) -> Vec<f64> {
        let p = r.len() - 1;
        let mut m: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| r[i.abs_diff(j)]).collect();
                row.push(r[i + 1]);
                row
            })
            .collect();
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
            m.swap(col, piv);
            for row in col + 1..p {
                let f = m[row][col] / m[col][col];
                for k in col..=p {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|j| m[i][j] * x[j]).sum();
            x[i] = (m[i][p] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn acovf_alternating() {
        let r = nan_acovf(&[1.0, -1.0, 1.0, -1.0], 1).unwrap();
        assert_eq!(r, vec![1.0, -1.0]);
    }

    #[test]
    fn acovf_constant() {
        assert_eq!(nan_acovf(&[4.0; 6], 3).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn acovf_without_pairs() {
        let r = nan_acovf(&[1.0, NAN, 2.0, NAN, 3.0, NAN], 1).unwrap();
        assert!(r[1].is_nan());
        assert!(!r[0].is_nan());
    }

    #[test]
    fn acovf_lag_too_large() {
        assert_eq!(
            nan_acovf(&[1.0, 2.0], 2),
            Err(TsaError::LagTooLarge { max_lag: 2, len: 2 })
        );
    }

    #[test]
    fn order_one_closed_form() {
        let m = levinson_durbin(&[1.0, 0.5]).unwrap();
        assert_eq!(m.coeffs, vec![0.5]);
        assert_eq!(m.noise_var, 0.75);
    }

    #[test]
    fn order_two_matches_elimination() {
        let r = [1.0, 0.5, 0.4];
        let m = levinson_durbin(&r).unwrap();
        let direct = dense_yule_walker(&r);
        assert!((m.coeffs[0] - 0.4).abs() < 1e-15);
        assert!((m.coeffs[1] - 0.2).abs() < 1e-15);
        for (a, b) in m.coeffs.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((m.noise_var - 0.72).abs() < 1e-15);
        assert_eq!(m.reflection.len(), 2);
    }

    #[test]
    fn white_noise() {
        let m = levinson_durbin(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.coeffs, vec![0.0; 3]);
        assert_eq!(m.noise_var, 1.0);
    }

    #[test]
    fn perfectly_predictable_is_singular() {
        assert_eq!(levinson_durbin(&[1.0, 1.0]), Err(TsaError::SingularAtOrder(1)));
        assert_eq!(levinson_durbin(&[0.0, 0.0]), Err(TsaError::InvalidAutocovariance));
        assert_eq!(levinson_durbin(&[1.0, NAN]), Err(TsaError::InvalidAutocovariance));
    }

    #[test]
    fn features_of_nan_and_duplicate_channels() {
        let mut e = Array2::from_elem((3, 32), NAN);
        for t in 0..32 {
            let v = ((t * 7919) % 13) as f64 - 6.0;
            e[[1, t]] = v;
            e[[2, t]] = v;
        }
        let f = ar_features(e.view(), 2);
        assert_eq!(f.coeffs.len(), 6);
        assert!(f.coeffs[0..2].iter().all(|v| v.is_nan()));
        assert!(f.log_var[0].is_nan());
        assert_eq!(f.coeffs[2..4], f.coeffs[4..6]);
        assert_eq!(f.log_var[1], f.log_var[2]);
    }

    /// Autocovariance normalised by n (not by pair count), which is
    /// positive definite for any non-constant series.
    fn random_acov(seed: u64, p: usize) -> Vec<f64> {
        let mut s = seed;
        let x: Vec<f64> = (0..p + 20)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (0..=p)
            .map(|l| x.iter().zip(&x[l..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n)
            .collect()
    }

    #[test]
    fn short_random_walk_can_break_down() {
        // per-pair normalisation is not positive definite for short
        // nonstationary series; the recursion reports it instead of
        // returning an unstable model
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let r = nan_acovf(&x, 4).unwrap();
        assert!(matches!(levinson_durbin(&r), Err(TsaError::SingularAtOrder(_))));
    }

    proptest! {
        #[test]
        fn matches_dense_solve(seed in any::<u64>(), p in 1usize..=8) {
            let r = random_acov(seed, p);
            let m = levinson_durbin(&r).unwrap();
            let direct = dense_yule_walker(&r);
            for (a, b) in m.coeffs.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }

        #[test]
        fn stationary_series_give_bounded_reflections(seed in any::<u64>(), p in 1usize..=8, extra in 0usize..200) {
            let mut s = seed;
            let x: Vec<f64> = (0..32 + extra)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let m = levinson_durbin(&nan_acovf(&x, p).unwrap()).unwrap();
            for k in &m.reflection {
                prop_assert!(k.abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn noise_var_non_increasing(seed in any::<u64>(), p in 2usize..=8) {
            let r = random_acov(seed, p);
            let mut last = f64::INFINITY;
            for q in 0..=p {
                let m = levinson_durbin(&r[..=q]).unwrap();
                prop_assert!(m.noise_var <= last + 1e-12);
                last = m.noise_var;
            }
        }
    }
}
