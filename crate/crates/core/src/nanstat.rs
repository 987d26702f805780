//! Descriptive statistics that skip NaN-encoded missing values.
//!
//! All sums are accumulated left to right with Kahan compensation, so a
//! result depends only on the data and never on how callers schedule work.

use ndarray::{Array2, ArrayView2};

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        for x in iter {
            k.add(x);
        }
        k
    }
}

pub fn nan_count(v: &[f64]) -> usize {
    v.iter().filter(|x| !x.is_nan()).count()
}

pub fn nan_sum(v: &[f64]) -> f64 {
    v.iter().copied().filter(|x| !x.is_nan()).collect::<KahanSum>().value()
}

/// Mean of the non-NaN entries; NaN when there are none.
pub fn nan_mean(v: &[f64]) -> f64 {
    let n = nan_count(v);
    if n == 0 {
        return f64::NAN;
    }
    nan_sum(v) / n as f64
}

/// Variance of the non-NaN entries with `ddof` degrees of freedom removed.
/// NaN when fewer than `ddof + 1` entries are valid.
pub fn nan_var(v: &[f64], ddof: usize) -> f64 {
    let n = nan_count(v);
    if n < ddof + 1 {
        return f64::NAN;
    }
    let m = nan_sum(v) / n as f64;
    let ss: KahanSum = v
        .iter()
        .filter(|x| !x.is_nan())
        .map(|&x| (x - m) * (x - m))
        .collect();
    ss.value() / (n - ddof) as f64
}

pub fn nan_std(v: &[f64], ddof: usize) -> f64 {
    nan_var(v, ddof).sqrt()
}

/// Pairwise-complete covariance and the number of rows behind each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCov {
    pub cov: Array2<f64>,
    pub counts: Array2<usize>,
}

/// Covariance of the columns of `m` (rows are observations).
///
/// Entry `(i, j)` uses exactly the rows where both columns are valid, with
/// both means recomputed over those rows. Entries backed by fewer than
/// `ddof + 1` rows are NaN. The result need not be positive semidefinite.
pub fn nan_cov(m: ArrayView2<'_, f64>, ddof: usize) -> PairwiseCov {
    let d = m.ncols();
    let mut cov = Array2::from_elem((d, d), f64::NAN);
    let mut counts = Array2::zeros((d, d));
    let columns: Vec<Vec<f64>> = m.columns().into_iter().map(|c| c.to_vec()).collect();
    for i in 0..d {
        for j in i..d {
            let (c, n) = pair_cov(&columns[i], &columns[j], ddof);
            cov[[i, j]] = c;
            cov[[j, i]] = c;
            counts[[i, j]] = n;
            counts[[j, i]] = n;
        }
    }
    PairwiseCov { cov, counts }
}

fn pair_cov(a: &[f64], b: &[f64], ddof: usize) -> (f64, usize) {
    let valid = || {
        a.iter()
            .zip(b)
            .filter(|(x, y)| !x.is_nan() && !y.is_nan())
            .map(|(&x, &y)| (x, y))
    };
    let n = valid().count();
    if n < ddof + 1 {
        return (f64::NAN, n);
    }
    let ma = valid().map(|p| p.0).collect::<KahanSum>().value() / n as f64;
    let mb = valid().map(|p| p.1).collect::<KahanSum>().value() / n as f64;
    let s: KahanSum = valid().map(|(x, y)| (x - ma) * (y - mb)).collect();
    (s.value() / (n - ddof) as f64, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const NAN: f64 = f64::NAN;

    #[test]
    fn counting() {
        assert_eq!(nan_count(&[1.0, NAN, 3.0]), 2);
        assert_eq!(nan_count(&[]), 0);
        assert_eq!(nan_count(&[NAN, NAN]), 0);
    }

    #[test]
    fn moments() {
        assert_eq!(nan_mean(&[1.0, 2.0, NAN]), 1.5);
        // ((1-1.5)^2 + (2-1.5)^2) / (2-1)
        assert_eq!(nan_var(&[1.0, 2.0, NAN], 1), 0.5);
        assert_eq!(nan_var(&[1.0, 2.0, NAN], 0), 0.25);
        assert!(nan_mean(&[NAN]).is_nan());
        assert!(nan_var(&[3.0], 1).is_nan());
        assert_eq!(nan_var(&[3.0], 0), 0.0);
        assert!((nan_std(&[1.0, 2.0, NAN], 1) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pairwise_example() {
        let m = array![[1.0, 1.0], [2.0, 2.0], [3.0, NAN]];
        let r = nan_cov(m.view(), 1);
        // column 0 over 3 rows: mean 2, ss 2, /2
        assert_eq!(r.cov[[0, 0]], 1.0);
        // rows 0..2 only: mean 1.5, ss 0.5, /1
        assert_eq!(r.cov[[0, 1]], 0.5);
        assert_eq!(r.cov[[1, 0]], 0.5);
        assert_eq!(r.cov[[1, 1]], 0.5);
        assert_eq!(r.counts, array![[3, 2], [2, 2]]);
    }

    #[test]
    fn insufficient_pairs_are_nan() {
        let m = array![[1.0, NAN], [2.0, 5.0], [NAN, 6.0]];
        let r = nan_cov(m.view(), 1);
        assert!(r.cov[[0, 1]].is_nan());
        assert_eq!(r.counts[[0, 1]], 1);
        assert!(!r.cov[[1, 1]].is_nan());
    }

    fn classical_cov(m: &Array2<f64>) -> Array2<f64> {
        let n = m.nrows() as f64;
        let means: Vec<f64> = m.columns().into_iter().map(|c| c.sum() / n).collect();
        let d = m.ncols();
        Array2::from_shape_fn((d, d), |(i, j)| {
            m.rows()
                .into_iter()
                .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
                .sum::<f64>()
                / (n - 1.0)
        })
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn nan_free_matches_classical(
            (rows, cols, data) in (2usize..12, 1usize..5).prop_flat_map(|(r, c)| {
                (Just(r), Just(c), proptest::collection::vec(-1e3f64..1e3, r * c))
            })
        ) {
            let m = Array2::from_shape_vec((rows, cols), data).unwrap();
            let ours = nan_cov(m.view(), 1);
            let theirs = classical_cov(&m);
            for i in 0..cols {
                for j in 0..cols {
                    let scale = (theirs[[i, i]] * theirs[[j, j]]).sqrt().max(1e-12);
                    prop_assert!((ours.cov[[i, j]] - theirs[[i, j]]).abs() <= 1e-12 * scale.max(theirs[[i, j]].abs()));
                    prop_assert_eq!(ours.counts[[i, j]], rows);
                }
                let col: Vec<f64> = m.column(i).to_vec();
                let mean = col.iter().sum::<f64>() / rows as f64;
                prop_assert!(close(nan_mean(&col), mean, 1e-12) || (nan_mean(&col) - mean).abs() < 1e-12);
                prop_assert_eq!(nan_var(&col, 1), ours.cov[[i, i]]);
            }
        }

        #[test]
        fn nan_rows_do_not_change_pairwise_results(
            (rows, data, holes) in (3usize..10).prop_flat_map(|r| {
                (Just(r), proptest::collection::vec(-10f64..10.0, r * 2), proptest::collection::vec(0usize..20, 1..4))
            })
        ) {
            let m = Array2::from_shape_vec((rows, 2), data).unwrap();
            let mut padded = m.clone();
            for h in holes {
                let at = h % (padded.nrows() + 1);
                let mut v: Vec<[f64; 2]> = padded.rows().into_iter().map(|r| [r[0], r[1]]).collect();
                v.insert(at, [NAN, NAN]);
                padded = Array2::from_shape_fn((v.len(), 2), |(i, j)| v[i][j]);
            }
            let a = nan_cov(m.view(), 1);
            let b = nan_cov(padded.view(), 1);
            prop_assert_eq!(a.counts, b.counts);
            for (x, y) in a.cov.iter().zip(b.cov.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn variance_non_negative(v in proptest::collection::vec(prop_oneof![Just(NAN), -1e6f64..1e6], 0..40)) {
            let var = nan_var(&v, 1);
            prop_assert!(var.is_nan() || var >= 0.0);
        }

        #[test]
        fn symmetric_with_symmetric_counts(
            data in proptest::collection::vec(prop_oneof![1 => Just(NAN), 4 => -5f64..5.0], 24)
        ) {
            let m = Array2::from_shape_vec((8, 3), data).unwrap();
            let r = nan_cov(m.view(), 1);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(r.cov[[i, j]].to_bits(), r.cov[[j, i]].to_bits());
                    prop_assert_eq!(r.counts[[i, j]], r.counts[[j, i]]);
                }
                let col: Vec<f64> = m.column(i).to_vec();
                let v = nan_var(&col, 1);
                prop_assert!(v.to_bits() == r.cov[[i, i]].to_bits() || (v.is_nan() && r.cov[[i, i]].is_nan()));
            }
        }
    }
}
