//! Linear and quadratic discriminant analysis on feature matrices with
//! missing values, plus leave-one-out and stratified k-fold validation.

use ndarray::{Array2, ArrayView1, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::nanstat::{nan_cov, nan_mean};
use crate::par::{map_ordered, Execution};
use crate::rng::SplitMix64;

pub const DEFAULT_RIDGE_FLOOR: f64 = 1e-8;

// Ridge escalation stops once lambda exceeds this.
const RIDGE_CAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("need at least two classes")]
    SingleClass,
    #[error("feature {feature} has no valid value in class {class}")]
    EmptyFeature { class: String, feature: usize },
    #[error("class {class} has {count} trials, QDA needs at least 2")]
    TooFewTrials { class: String, count: usize },
    #[error("every feature of the input is NaN")]
    AllNaNInput,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("{names} feature names for {columns} columns")]
    NameMismatch { names: usize, columns: usize },
    #[error("training set of fold {fold} lacks a usable class")]
    FoldDegenerate { fold: usize },
    #[error("invalid fold setup: {0}")]
    InvalidFolds(String),
    #[error("covariance not positive definite even with ridge {0}")]
    NotPositiveDefinite(f64),
}

/// N trials by D features with class labels. NaN marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    x: Array2<f64>,
    y: Vec<String>,
    feature_names: Vec<String>,
}

impl FeatureMatrix {
    /// Features are named `f0`, `f1`, ...
    pub fn new(x: Array2<f64>, y: Vec<String>) -> Result<Self, ClassifyError> {
        let names = (0..x.ncols()).map(|i| format!("f{i}")).collect();
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: Array2<f64>, y: Vec<String>, feature_names: Vec<String>) -> Result<Self, ClassifyError> {
        if x.nrows() != y.len() {
            return Err(ClassifyError::LengthMismatch {
                rows: x.nrows(),
                labels: y.len(),
            });
        }
        if feature_names.len() != x.ncols() {
            return Err(ClassifyError::NameMismatch {
                names: feature_names.len(),
                columns: x.ncols(),
            });
        }
        Ok(FeatureMatrix { x, y, feature_names })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[String] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn num_trials(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.y {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminantKind {
    Lda,
    Qda,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminantModel {
    pub kind: DiscriminantKind,
    pub labels: Vec<String>,
    /// One row per class.
    pub means: Array2<f64>,
    /// Estimated covariances before the ridge: one pooled matrix for LDA,
    /// one per class for QDA. Entries without enough pairs are zero.
    pub raw_covs: Vec<Array2<f64>>,
    /// `raw_covs` plus `ridge * trace / D` on the diagonal.
    pub covs: Vec<Array2<f64>>,
    pub priors: Vec<f64>,
    pub ridge: f64,
    /// Covariance entries that had too few valid pairs and were set to zero.
    pub nan_cov_entries: usize,
    chol: Vec<Array2<f64>>,
}

impl DiscriminantModel {
    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn cov_for(&self, class: usize) -> usize {
        match self.kind {
            DiscriminantKind::Lda => 0,
            DiscriminantKind::Qda => class,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    /// Discriminant value per class, in `model.labels` order.
    pub scores: Vec<f64>,
}

pub fn train(features: &FeatureMatrix, kind: DiscriminantKind, ridge_floor: f64) -> Result<DiscriminantModel, ClassifyError> {
    let rows: Vec<usize> = (0..features.num_trials()).collect();
    train_rows(features, &rows, &features.labels(), kind, ridge_floor)
}

/// Trains on the given rows (ascending) with a fixed class order. Classes
/// absent from `rows` make the call fail with `SingleClass` or
/// `TooFewTrials`, which cross-validation maps to `FoldDegenerate`.
fn train_rows(
    features: &FeatureMatrix,
    rows: &[usize],
    labels: &[String],
    kind: DiscriminantKind,
    ridge_floor: f64,
) -> Result<DiscriminantModel, ClassifyError> {
    if labels.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    let d = features.num_features();
    let k = labels.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &r in rows {
        let c = labels.iter().position(|l| *l == features.y[r]).expect("label in class list");
        members[c].push(r);
    }
    for (c, m) in members.iter().enumerate() {
        let min = if kind == DiscriminantKind::Qda { 2 } else { 1 };
        if m.len() < min {
            return Err(ClassifyError::TooFewTrials {
                class: labels[c].clone(),
                count: m.len(),
            });
        }
    }

    let mut means = Array2::zeros((k, d));
    let mut class_covs = Vec::with_capacity(k);
    for (c, m) in members.iter().enumerate() {
        let sub = features.x.select(Axis(0), m);
        for j in 0..d {
            let col: Vec<f64> = sub.column(j).to_vec();
            let mu = nan_mean(&col);
            if mu.is_nan() {
                return Err(ClassifyError::EmptyFeature {
                    class: labels[c].clone(),
                    feature: j,
                });
            }
            means[[c, j]] = mu;
        }
        class_covs.push(nan_cov(sub.view(), 1));
    }

    let mut nan_cov_entries = 0;
    let raw_covs: Vec<Array2<f64>> = match kind {
        DiscriminantKind::Lda => {
            // pooled per entry, each class weighted by its pair count - 1
            let mut pooled = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    let mut num = 0.0;
                    let mut den = 0usize;
                    for pc in &class_covs {
                        let v = pc.cov[[i, j]];
                        if !v.is_nan() {
                            let w = pc.counts[[i, j]] - 1;
                            num += w as f64 * v;
                            den += w;
                        }
                    }
                    if den == 0 {
                        nan_cov_entries += 1;
                    } else {
                        pooled[[i, j]] = num / den as f64;
                    }
                }
            }
            vec![pooled]
        }
        DiscriminantKind::Qda => class_covs
            .into_iter()
            .map(|pc| {
                pc.cov.mapv(|v| {
                    if v.is_nan() {
                        nan_cov_entries += 1;
                        0.0
                    } else {
                        v
                    }
                })
            })
            .collect(),
    };

    let (ridge, covs, chol) = regularize(&raw_covs, ridge_floor)?;
    let n = rows.len() as f64;
    let priors = members.iter().map(|m| m.len() as f64 / n).collect();
    Ok(DiscriminantModel {
        kind,
        labels: labels.to_vec(),
        means,
        raw_covs,
        covs,
        priors,
        ridge,
        nan_cov_entries,
        chol,
    })
}

type Regularized = (f64, Vec<Array2<f64>>, Vec<Array2<f64>>);

fn regularize(raw: &[Array2<f64>], ridge_floor: f64) -> Result<Regularized, ClassifyError> {
    let mut lambda = ridge_floor.max(0.0);
    loop {
        let covs: Vec<Array2<f64>> = raw
            .iter()
            .map(|c| {
                let d = c.nrows();
                let tr = c.diag().sum();
                let scale = if tr > 0.0 && tr.is_finite() { tr / d as f64 } else { 1.0 };
                let mut out = c.clone();
                if lambda > 0.0 {
                    out.diag_mut().mapv_inplace(|v| v + lambda * scale);
                }
                out
            })
            .collect();
        let factors: Option<Vec<Array2<f64>>> = covs.iter().map(cholesky).collect();
        if let Some(chol) = factors {
            return Ok((lambda, covs, chol));
        }
        lambda = if lambda == 0.0 { 1e-12 } else { lambda * 10.0 };
        if lambda > RIDGE_CAP {
            return Err(ClassifyError::NotPositiveDefinite(lambda));
        }
    }
}

/// Lower Cholesky factor, or None unless the matrix is numerically
/// positive definite.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for j in 0..n {
        let mut s = a[[j, j]];
        for k in 0..j {
            s -= l[[j, k]] * l[[j, k]];
        }
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        let ljj = s.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L z = b` in place.
fn forward(l: &Array2<f64>, b: &mut [f64]) {
    for i in 0..b.len() {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `L^T z = b` in place.
fn backward(l: &Array2<f64>, b: &mut [f64]) {
    for i in (0..b.len()).rev() {
        let mut s = b[i];
        for k in i + 1..b.len() {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

pub fn predict(model: &DiscriminantModel, x: ArrayView1<'_, f64>) -> Result<Prediction, ClassifyError> {
    let d = model.dim();
    if x.len() != d {
        return Err(ClassifyError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let valid: Vec<usize> = (0..d).filter(|&i| !x[i].is_nan()).collect();
    if valid.is_empty() {
        return Err(ClassifyError::AllNaNInput);
    }
    let xs: Vec<f64> = valid.iter().map(|&i| x[i]).collect();
    let factors: Vec<Array2<f64>> = if valid.len() == d {
        model.chol.clone()
    } else {
        model
            .covs
            .iter()
            .map(|c| {
                let sub = c.select(Axis(0), &valid).select(Axis(1), &valid);
                cholesky(&sub).ok_or(ClassifyError::NotPositiveDefinite(model.ridge))
            })
            .collect::<Result<_, _>>()?
    };

    let dv = valid.len() as f64;
    let scores: Vec<f64> = (0..model.labels.len())
        .map(|c| {
            let l = &factors[model.cov_for(c)];
            let mu: Vec<f64> = valid.iter().map(|&i| model.means[[c, i]]).collect();
            let prior = model.priors[c].ln();
            match model.kind {
                DiscriminantKind::Lda => {
                    // x' S^-1 mu - mu' S^-1 mu / 2 + ln prior
                    let mut w = mu.clone();
                    forward(l, &mut w);
                    backward(l, &mut w);
                    let xw: f64 = xs.iter().zip(&w).map(|(a, b)| a * b).sum();
                    let mw: f64 = mu.iter().zip(&w).map(|(a, b)| a * b).sum();
                    xw - 0.5 * mw + prior
                }
                DiscriminantKind::Qda => {
                    let mut z: Vec<f64> = xs.iter().zip(&mu).map(|(a, b)| a - b).collect();
                    forward(l, &mut z);
                    let maha: f64 = z.iter().map(|v| v * v).sum();
                    let log_det: f64 = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
                    -0.5 * (dv * (2.0 * std::f64::consts::PI).ln() + log_det + maha) + prior
                }
            }
        })
        .collect();

    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(Prediction {
        label: model.labels[best].clone(),
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CvScheme {
    LeaveOneOut,
    /// Stratified k folds assigned by a seeded shuffle.
    KFold { k: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Class order of every score vector, first appearance in `y`.
    pub labels: Vec<String>,
    /// One entry per trial, in trial order.
    pub predictions: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Fold that held out each trial.
    pub fold_of: Vec<usize>,
}

/// Held-out trial indices per fold, each ascending.
pub fn fold_assignment(features: &FeatureMatrix, scheme: CvScheme) -> Result<Vec<Vec<usize>>, ClassifyError> {
    let n = features.num_trials();
    match scheme {
        CvScheme::LeaveOneOut => Ok((0..n).map(|i| vec![i]).collect()),
        CvScheme::KFold { k, seed } => {
            if k < 2 {
                return Err(ClassifyError::InvalidFolds(format!("k = {k}, need at least 2")));
            }
            if k > n {
                return Err(ClassifyError::InvalidFolds(format!("k = {k} exceeds {n} trials")));
            }
            // per class in label order: shuffle members, then deal them
            // round-robin with a counter shared across classes
            let mut rng = SplitMix64::new(seed);
            let mut folds = vec![Vec::new(); k];
            let mut next = 0usize;
            for label in features.labels() {
                let mut members: Vec<usize> = (0..n).filter(|&i| features.y[i] == label).collect();
                rng.shuffle(&mut members);
                for m in members {
                    folds[next % k].push(m);
                    next += 1;
                }
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(folds)
        }
    }
}

pub fn cross_validate(
    features: &FeatureMatrix,
    kind: DiscriminantKind,
    scheme: CvScheme,
    ridge_floor: f64,
) -> Result<CvResult, ClassifyError> {
    cross_validate_with(features, kind, scheme, ridge_floor, Execution::Sequential)
}

/// As [`cross_validate`], with folds scheduled per `exec`. The result does
/// not depend on `exec`.
pub fn cross_validate_with(
    features: &FeatureMatrix,
    kind: DiscriminantKind,
    scheme: CvScheme,
    ridge_floor: f64,
    exec: Execution,
) -> Result<CvResult, ClassifyError> {
    let labels = features.labels();
    if labels.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    let folds = fold_assignment(features, scheme)?;
    let n = features.num_trials();
    let indexed: Vec<(usize, &Vec<usize>)> = folds.iter().enumerate().collect();
    let outcomes = map_ordered(&indexed, exec, |&(f, held)| {
        let mut out = vec![false; n];
        held.iter().for_each(|&i| out[i] = true);
        let train_idx: Vec<usize> = (0..n).filter(|&i| !out[i]).collect();
        let model = train_rows(features, &train_idx, &labels, kind, ridge_floor).map_err(|e| match e {
            ClassifyError::TooFewTrials { .. } | ClassifyError::EmptyFeature { .. } => {
                ClassifyError::FoldDegenerate { fold: f }
            }
            other => other,
        })?;
        held.iter()
            .map(|&i| predict(&model, features.x.row(i)).map(|p| (i, p)))
            .collect::<Result<Vec<_>, _>>()
    });

    let mut predictions = vec![String::new(); n];
    let mut scores = vec![Vec::new(); n];
    let mut fold_of = vec![0; n];
    for (f, outcome) in outcomes.into_iter().enumerate() {
        for (i, p) in outcome? {
            predictions[i] = p.label;
            scores[i] = p.scores;
            fold_of[i] = f;
        }
    }
    Ok(CvResult {
        labels,
        predictions,
        scores,
        fold_of,
    })
}
