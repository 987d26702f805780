//! Confusion-matrix metrics for classifier output: accuracy, Cohen's kappa
//! and mutual information.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("confusion matrix holds no trials")]
    EmptyMatrix,
    #[error("counts must be a square matrix matching {0} labels")]
    Shape(usize),
}

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(EvalError::Shape(labels.len()));
        }
        let n = counts.iter().flatten().sum();
        Ok(ConfusionMatrix { labels, counts, n })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Expands the counts back into `(true, predicted)` pairs, row-major.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    out.push((self.labels[i].clone(), self.labels[j].clone()));
                }
            }
        }
        out
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    fn check(&self) -> Result<f64, EvalError> {
        if self.n == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        Ok(self.n as f64)
    }
}

/// Label order is first appearance over `truth` followed by `predicted`.
pub fn confusion<S: AsRef<str>>(truth: &[S], predicted: &[S]) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let mut labels: Vec<String> = Vec::new();
    for l in truth.iter().chain(predicted) {
        if !labels.iter().any(|x| x == l.as_ref()) {
            labels.push(l.as_ref().to_owned());
        }
    }
    let index = |l: &S| labels.iter().position(|x| x == l.as_ref()).unwrap();
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (t, p) in truth.iter().zip(predicted) {
        counts[index(t)][index(p)] += 1;
    }
    let n = truth.len() as u64;
    Ok(ConfusionMatrix { labels, counts, n })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.check()?;
    let trace: u64 = (0..cm.num_classes()).map(|i| cm.counts[i][i]).sum();
    Ok(trace as f64 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub kappa: f64,
    pub se: f64,
    /// Chance agreement was 1, so kappa is 0/0 and reported as 0.
    pub degenerate: bool,
}

/// Cohen's kappa with its large-sample standard error
/// `sqrt(p0 (1 - p0) / (n (1 - pe)^2))`.
pub fn kappa(cm: &ConfusionMatrix) -> Result<Kappa, EvalError> {
    let n = cm.check()?;
    let p0 = accuracy(cm)?;
    let pe: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| (r as f64 / n) * (c as f64 / n))
        .sum();
    if pe >= 1.0 {
        return Ok(Kappa {
            kappa: 0.0,
            se: 0.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        kappa: (p0 - pe) / (1.0 - pe),
        se: (p0 * (1.0 - p0) / (n * (1.0 - pe) * (1.0 - pe))).sqrt(),
        degenerate: false,
    })
}

fn entropy_bits(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// `H(true) + H(predicted) - H(joint)` in bits.
pub fn mutual_information(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.check()?;
    let h_rows = entropy_bits(cm.row_sums().into_iter(), n);
    let h_cols = entropy_bits(cm.col_sums().into_iter(), n);
    let h_joint = entropy_bits(cm.counts.iter().flatten().copied(), n);
    Ok((h_rows + h_cols - h_joint).max(0.0))
}

/// Entropy of the true-class marginal, in bits.
pub fn row_entropy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.check()?;
    Ok(entropy_bits(cm.row_sums().into_iter(), n))
}

/// Entropy of the predicted-class marginal, in bits.
pub fn col_entropy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.check()?;
    Ok(entropy_bits(cm.col_sums().into_iter(), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let labels = (0..counts.len()).map(|i| format!("c{i}")).collect();
        ConfusionMatrix::from_counts(labels, counts).unwrap()
    }

    #[test]
    fn small_confusions() {
        let m = confusion(&["A", "A", "B", "B"], &["A", "A", "B", "B"]).unwrap();
        assert_eq!(m.counts, vec![vec![2, 0], vec![0, 2]]);
        let m = confusion(&["A", "B"], &["B", "A"]).unwrap();
        assert_eq!(m.counts, vec![vec![0, 1], vec![1, 0]]);
        let m = confusion(&["A"], &["A"]).unwrap();
        assert_eq!(m.counts, vec![vec![1]]);
        let m = confusion(&["A", "A"], &["C", "A"]).unwrap();
        assert_eq!(m.labels, vec!["A", "C"]);
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 0]]);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(
            confusion(&["A"], &["A", "B"]),
            Err(EvalError::LengthMismatch { truth: 1, predicted: 2 })
        );
        let empty: [&str; 0] = [];
        assert_eq!(confusion(&empty, &empty), Err(EvalError::EmptyMatrix));
        assert_eq!(accuracy(&cm(vec![vec![0, 0], vec![0, 0]])), Err(EvalError::EmptyMatrix));
        assert!(ConfusionMatrix::from_counts(vec!["a".into()], vec![vec![1, 2]]).is_err());
    }

    #[test]
    fn kappa_worked_example() {
        let m = cm(vec![vec![45, 5], vec![5, 45]]);
        assert!((accuracy(&m).unwrap() - 0.9).abs() < 1e-15);
        let k = kappa(&m).unwrap();
        // p0 = 0.9, pe = 0.5
        assert!((k.kappa - 0.8).abs() < 1e-12);
        assert!((k.se - (0.9f64 * 0.1 / (100.0 * 0.25)).sqrt()).abs() < 1e-12);
        assert!(!k.degenerate);
    }

    #[test]
    fn kappa_edges() {
        let k = kappa(&cm(vec![vec![10, 0], vec![0, 10]])).unwrap();
        assert_eq!(k.kappa, 1.0);
        let k = kappa(&cm(vec![vec![7, 0], vec![0, 0]])).unwrap();
        assert_eq!(k.kappa, 0.0);
        assert!(k.degenerate);
    }

    #[test]
    fn mutual_information_examples() {
        assert!((mutual_information(&cm(vec![vec![5, 0], vec![0, 5]])).unwrap() - 1.0).abs() < 1e-12);
        assert!(mutual_information(&cm(vec![vec![3, 3], vec![3, 3]])).unwrap().abs() < 1e-12);
        // H(rows) = H(cols) = 1, H(joint) = -2(3/8 log2 3/8) - 2(1/8 log2 1/8)
        let h_joint = -2.0 * (0.375 * 0.375f64.log2()) - 2.0 * (0.125 * 0.125f64.log2());
        let i = mutual_information(&cm(vec![vec![3, 1], vec![1, 3]])).unwrap();
        assert!((i - (2.0 - h_joint)).abs() < 1e-12);
        assert!((i - 0.1887).abs() < 1e-3);
    }

    fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (1usize..5)
            .prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0u64..20, k), k))
            .prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 0)
            .prop_map(cm)
    }

    proptest! {
        #[test]
        fn metric_bounds(m in arb_matrix()) {
            let acc = accuracy(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!(kappa(&m).unwrap().kappa <= 1.0 + 1e-12);
            let i = mutual_information(&m).unwrap();
            let cap = row_entropy(&m).unwrap().min(col_entropy(&m).unwrap());
            prop_assert!(i >= 0.0);
            prop_assert!(i <= cap + 1e-12);
        }

        #[test]
        fn counts_reconstruct(m in arb_matrix()) {
            let pairs = m.to_pairs();
            let truth: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
            let pred: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
            let back = confusion(&truth, &pred).unwrap();
            prop_assert_eq!(back.n, m.n);
            for (i, li) in back.labels.iter().enumerate() {
                let oi = m.labels.iter().position(|l| l == li).unwrap();
                for (j, lj) in back.labels.iter().enumerate() {
                    let oj = m.labels.iter().position(|l| l == lj).unwrap();
                    prop_assert_eq!(back.counts[i][j], m.counts[oi][oj]);
                }
            }
        }

        #[test]
        fn relabeling_leaves_metrics(m in arb_matrix(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..m.num_classes()).collect();
            crate::rng::SplitMix64::new(seed).shuffle(&mut perm);
            let pairs = m.to_pairs();
            let rename = |l: &str| {
                let i = m.labels.iter().position(|x| x == l).unwrap();
                format!("r{}", perm[i])
            };
            let truth: Vec<String> = pairs.iter().map(|p| rename(&p.0)).collect();
            let pred: Vec<String> = pairs.iter().map(|p| rename(&p.1)).collect();
            let r = confusion(&truth, &pred).unwrap();
            prop_assert!((accuracy(&r).unwrap() - accuracy(&m).unwrap()).abs() < 1e-12);
            prop_assert!((kappa(&r).unwrap().kappa - kappa(&m).unwrap().kappa).abs() < 1e-12);
            prop_assert!((mutual_information(&r).unwrap() - mutual_information(&m).unwrap()).abs() < 1e-12);
        }
    }
}
