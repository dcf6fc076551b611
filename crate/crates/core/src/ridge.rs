//! One-vs-rest ridge classification with cross-validated regularisation.
//!
//! Each class gets a ridge regressor on +1/-1 targets; prediction is the argmax
//! of the decision scores. The weighted regularised least-squares problem
//!
//! ```text
//! minimise  sum_i s_i |y_i - x_i W - b|^2 + alpha |W|^2
//! ```
//!
//! is solved through a symmetric eigendecomposition of either the sample Gram
//! matrix (samples <= features) or the feature covariance matrix, so that every
//! alpha in a sweep reuses one decomposition. The intercept, when fitted, is not
//! penalised: rows and targets are centred on their weighted means first.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{macro_metrics, ConfusionMatrix};
use crate::rocket::FeatureMatrix;

/// Largest tolerated condition number of the regularised system.
pub const MAX_CONDITION: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    None,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub alphas: Vec<f64>,
    pub class_weight: ClassWeight,
    pub fit_intercept: bool,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            alphas: linspace(0.001, 1000.0, 100),
            class_weight: ClassWeight::None,
            fit_intercept: true,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::validation("alpha list is empty"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::validation(format!("alpha {a} is not a positive finite value")));
        }
        Ok(())
    }
}

/// A train/validation split of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// classes x features.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub chosen_alpha: f64,
    pub label_order: Vec<String>,
    pub class_weight: ClassWeight,
    pub fit_intercept: bool,
}

/// `N / (K * n_class)` with K the number of classes present.
pub fn balanced_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    let k = counts.len() as f64;
    labels.iter().map(|l| n / (k * counts[l] as f64)).collect()
}

fn sample_weights(labels: &[usize], mode: ClassWeight) -> Vec<f64> {
    match mode {
        ClassWeight::None => vec![1.0; labels.len()],
        ClassWeight::Balanced => balanced_weights(labels),
    }
}

/// Decomposition of one weighted, optionally centred training problem,
/// reusable across alphas.
struct PreparedRidge {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    basis: Basis,
}

enum Basis {
    /// `W(a) = Z^T Q diag(1/(l + a)) Q^T T`, with `Z Z^T = Q L Q^T`.
    Dual {
        z: DMatrix<f64>,
        q: DMatrix<f64>,
        qt_t: DMatrix<f64>,
    },
    /// `W(a) = V diag(1/(l + a)) V^T Z^T T`, with `Z^T Z = V L V^T`.
    Primal { v: DMatrix<f64>, vt_zt_t: DMatrix<f64> },
}

impl PreparedRidge {
    fn new(
        features: &FeatureMatrix,
        rows: &[usize],
        labels: &[usize],
        classes: usize,
        class_weight: ClassWeight,
        fit_intercept: bool,
    ) -> Self {
        let n = rows.len();
        let p = features.cols();
        let row_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        let s = sample_weights(&row_labels, class_weight);
        let total: f64 = s.iter().sum();

        let mut x_mean = DVector::zeros(p);
        let mut y_mean = DVector::zeros(classes);
        if fit_intercept {
            for (i, &r) in rows.iter().enumerate() {
                for (j, v) in features.row(r).iter().enumerate() {
                    x_mean[j] += s[i] * v;
                }
                for c in 0..classes {
                    y_mean[c] += s[i] * target(row_labels[i], c);
                }
            }
            x_mean /= total;
            y_mean /= total;
        }

        let z = DMatrix::from_fn(n, p, |i, j| s[i].sqrt() * (features.row(rows[i])[j] - x_mean[j]));
        let t = DMatrix::from_fn(n, classes, |i, c| s[i].sqrt() * (target(row_labels[i], c) - y_mean[c]));

        if n <= p {
            let gram = &z * z.transpose();
            let eig = SymmetricEigen::new(gram);
            let qt_t = eig.eigenvectors.transpose() * &t;
            Self {
                x_mean,
                y_mean,
                eigenvalues: eig.eigenvalues,
                basis: Basis::Dual {
                    z,
                    q: eig.eigenvectors,
                    qt_t,
                },
            }
        } else {
            let cov = z.transpose() * &z;
            let eig = SymmetricEigen::new(cov);
            let vt_zt_t = eig.eigenvectors.transpose() * (z.transpose() * &t);
            Self {
                x_mean,
                y_mean,
                eigenvalues: eig.eigenvalues,
                basis: Basis::Primal {
                    v: eig.eigenvectors,
                    vt_zt_t,
                },
            }
        }
    }

    fn check(&self, alpha: f64) -> Result<()> {
        let max = self.eigenvalues.max().max(0.0) + alpha;
        let min = self.eigenvalues.min() + alpha;
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Numerical {
                message: format!("regularised system is ill-conditioned at alpha {alpha}"),
                condition,
            });
        }
        Ok(())
    }

    fn shrink(&self, alpha: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row /= self.eigenvalues[i] + alpha;
        }
        out
    }

    /// features x classes coefficient matrix.
    fn coefficients(&self, alpha: f64) -> Result<DMatrix<f64>> {
        self.check(alpha)?;
        Ok(match &self.basis {
            Basis::Dual { z, q, qt_t } => z.transpose() * (q * self.shrink(alpha, qt_t)),
            Basis::Primal { v, vt_zt_t } => v * self.shrink(alpha, vt_zt_t),
        })
    }

    fn intercepts(&self, coef: &DMatrix<f64>) -> DVector<f64> {
        &self.y_mean - coef.transpose() * &self.x_mean
    }

    /// Precomputes the alpha-independent part of the decision scores of
    /// `rows`, so that each alpha costs rows x rank x classes.
    fn scorer(&self, features: &FeatureMatrix, rows: &[usize]) -> DMatrix<f64> {
        let p = features.cols();
        let xv = DMatrix::from_fn(rows.len(), p, |i, j| features.row(rows[i])[j] - self.x_mean[j]);
        match &self.basis {
            Basis::Dual { z, q, .. } => (xv * z.transpose()) * q,
            Basis::Primal { v, .. } => xv * v,
        }
    }

    fn scores(&self, left: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
        self.check(alpha)?;
        let right = match &self.basis {
            Basis::Dual { qt_t, .. } => qt_t,
            Basis::Primal { vt_zt_t, .. } => vt_zt_t,
        };
        let mut s = left * self.shrink(alpha, right);
        for mut row in s.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        Ok(s)
    }
}

fn target(label: usize, class: usize) -> f64 {
    if label == class {
        1.0
    } else {
        -1.0
    }
}

fn check_inputs(features: &FeatureMatrix, labels: &[usize], classes: usize) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::validation(format!("label index {l} outside label order")));
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::validation("at least two classes are required"));
    }
    Ok(())
}

fn check_fold(fold: &Fold, rows: usize) -> Result<()> {
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(Error::validation("fold with an empty side"));
    }
    if let Some(i) = fold.train.iter().chain(&fold.validation).find(|&&i| i >= rows) {
        return Err(Error::validation(format!("fold index {i} out of range ({rows} rows)")));
    }
    let train: BTreeSet<usize> = fold.train.iter().copied().collect();
    if let Some(i) = fold.validation.iter().find(|i| train.contains(i)) {
        return Err(Error::validation(format!("row {i} on both sides of a fold")));
    }
    Ok(())
}

/// Fits the classifier. With several alphas, the one with the lowest mean
/// validation squared error on the +1/-1 targets across `folds` is chosen and
/// the model is refitted on all rows.
pub fn fit(
    features: &FeatureMatrix,
    labels: &[usize],
    label_order: &[String],
    config: &RidgeConfig,
    folds: &[Fold],
) -> Result<RidgeModel> {
    config.validate()?;
    let classes = label_order.len();
    check_inputs(features, labels, classes)?;
    for f in folds {
        check_fold(f, labels.len())?;
    }

    let chosen_alpha = if config.alphas.len() == 1 {
        config.alphas[0]
    } else {
        if folds.is_empty() {
            return Err(Error::validation(
                "selecting among several alphas needs at least one fold",
            ));
        }
        let mut errors = vec![0.0; config.alphas.len()];
        for fold in folds {
            let prepared = PreparedRidge::new(
                features,
                &fold.train,
                labels,
                classes,
                config.class_weight,
                config.fit_intercept,
            );
            let left = prepared.scorer(features, &fold.validation);
            for (a, &alpha) in config.alphas.iter().enumerate() {
                let s = prepared.scores(&left, alpha)?;
                let mut sse = 0.0;
                for (i, &r) in fold.validation.iter().enumerate() {
                    for c in 0..classes {
                        sse += (s[(i, c)] - target(labels[r], c)).powi(2);
                    }
                }
                errors[a] += sse / (fold.validation.len() * classes) as f64 / folds.len() as f64;
            }
        }
        let best = errors
            .iter()
            .enumerate()
            .fold(0, |best, (i, e)| if *e < errors[best] { i } else { best });
        config.alphas[best]
    };

    let all: Vec<usize> = (0..labels.len()).collect();
    let prepared = PreparedRidge::new(
        features,
        &all,
        labels,
        classes,
        config.class_weight,
        config.fit_intercept,
    );
    let coef = prepared.coefficients(chosen_alpha)?;
    let intercepts = prepared.intercepts(&coef);
    Ok(RidgeModel {
        weights: (0..classes)
            .map(|c| coef.column(c).iter().copied().collect())
            .collect(),
        intercepts: intercepts.iter().copied().collect(),
        chosen_alpha,
        label_order: label_order.to_vec(),
        class_weight: config.class_weight,
        fit_intercept: config.fit_intercept,
    })
}

fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

const MODEL_FORMAT: &str = "calfrocket-ridge/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: RidgeModel,
}

impl RidgeModel {
    pub fn feature_count(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Per-row class scores `w_c . x + b_c`.
    pub fn decision_function(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if features.cols() != self.feature_count() {
            return Err(Error::validation(format!(
                "model expects {} features, got {}",
                self.feature_count(),
                features.cols()
            )));
        }
        Ok((0..features.rows())
            .map(|i| {
                let x = features.row(i);
                self.weights
                    .iter()
                    .zip(&self.intercepts)
                    .map(|(w, b)| b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect())
    }

    /// Class indices (argmax, ties to the lowest index).
    pub fn predict_indices(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self
            .decision_function(features)?
            .iter()
            .map(|s| argmax(s))
            .collect())
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<String>> {
        Ok(self
            .predict_indices(features)?
            .into_iter()
            .map(|i| self.label_order[i].clone())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "model file tagged '{}', expected '{MODEL_FORMAT}'",
                file.format
            )));
        }
        Ok(file.model)
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub class_weight: ClassWeight,
    pub fit_intercept: bool,
}

impl GridPoint {
    pub fn config(&self) -> RidgeConfig {
        RidgeConfig {
            alphas: vec![self.alpha],
            class_weight: self.class_weight,
            fit_intercept: self.fit_intercept,
        }
    }
}

/// Cartesian product alphas x {none, balanced} x {true, false}.
pub fn full_grid(alphas: &[f64]) -> Vec<GridPoint> {
    let mut grid = Vec::with_capacity(alphas.len() * 4);
    for &alpha in alphas {
        for class_weight in [ClassWeight::None, ClassWeight::Balanced] {
            for fit_intercept in [true, false] {
                grid.push(GridPoint {
                    alpha,
                    class_weight,
                    fit_intercept,
                });
            }
        }
    }
    grid
}

/// `n` distinct points drawn with `seed`, kept in grid order.
pub fn sample_grid(grid: &[GridPoint], n: usize, seed: u64) -> Vec<GridPoint> {
    if n >= grid.len() {
        return grid.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, grid.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| grid[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    MacroRecall,
    MacroPrecision,
    MacroF1,
}

impl Scoring {
    pub fn score(self, truth: &[usize], predicted: &[usize], label_order: &[String]) -> Result<f64> {
        let m = macro_metrics(&ConfusionMatrix::from_indices(truth, predicted, label_order)?);
        Ok(match self {
            Scoring::MacroRecall => m.macro_recall,
            Scoring::MacroPrecision => m.macro_precision,
            Scoring::MacroF1 => m.macro_f1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn best(&self) -> GridPoint {
        self.rows[self.best_index].point
    }

    /// CSV table, one row per combination with the best row flagged.
    pub fn to_csv(&self) -> String {
        let folds = self.rows.first().map_or(0, |r| r.fold_scores.len());
        let mut s = String::from("alpha,class_weight,fit_intercept,mean_score");
        for f in 0..folds {
            s.push_str(&format!(",fold{f}"));
        }
        s.push_str(",best\n");
        for (i, r) in self.rows.iter().enumerate() {
            let cw = match r.point.class_weight {
                ClassWeight::None => "none",
                ClassWeight::Balanced => "balanced",
            };
            s.push_str(&format!(
                "{},{cw},{},{:.6}",
                r.point.alpha, r.point.fit_intercept, r.mean_score
            ));
            for v in &r.fold_scores {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push_str(if i == self.best_index { ",*\n" } else { ",\n" });
        }
        s
    }
}

/// Checks that no group (calf) appears on both sides of any fold.
pub fn check_group_folds(groups: &[String], folds: &[Fold]) -> Result<()> {
    for (k, fold) in folds.iter().enumerate() {
        let train: BTreeSet<&str> = fold.train.iter().map(|&i| groups[i].as_str()).collect();
        if let Some(shared) = fold
            .validation
            .iter()
            .map(|&i| groups[i].as_str())
            .find(|g| train.contains(g))
        {
            return Err(Error::Leakage(format!(
                "calf {shared} is on both sides of fold {k}"
            )));
        }
    }
    Ok(())
}

/// Scores every grid point by its mean validation score across `folds` and
/// returns the full table with the maximiser (first on ties).
///
/// `groups` gives the calf of every row; a calf on both sides of any fold is a
/// hard error.
pub fn grid_search(
    features: &FeatureMatrix,
    labels: &[usize],
    label_order: &[String],
    groups: &[String],
    folds: &[Fold],
    grid: &[GridPoint],
    scoring: Scoring,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::validation("empty hyperparameter grid"));
    }
    if folds.is_empty() {
        return Err(Error::validation("grid search needs at least one fold"));
    }
    if groups.len() != labels.len() {
        return Err(Error::validation("one group id per row is required"));
    }
    check_inputs(features, labels, label_order.len())?;
    for f in folds {
        check_fold(f, labels.len())?;
    }
    check_group_folds(groups, folds)?;
    for p in grid {
        p.config().validate()?;
    }

    // Reuse one decomposition per (fold, class weight, intercept).
    let modes: Vec<(ClassWeight, bool)> = grid
        .iter()
        .map(|p| (p.class_weight, p.fit_intercept))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..modes.len()).map(move |m| (f, m)))
        .collect();
    let results = crate::par::map_range(jobs.len(), |j| -> Result<Vec<(usize, f64)>> {
        let (f, m) = jobs[j];
        let (class_weight, fit_intercept) = modes[m];
        let fold = &folds[f];
        let prepared = PreparedRidge::new(
            features,
            &fold.train,
            labels,
            label_order.len(),
            class_weight,
            fit_intercept,
        );
        let left = prepared.scorer(features, &fold.validation);
        let truth: Vec<usize> = fold.validation.iter().map(|&r| labels[r]).collect();
        grid.iter()
            .enumerate()
            .filter(|(_, p)| (p.class_weight, p.fit_intercept) == modes[m])
            .map(|(g, p)| {
                let s = prepared.scores(&left, p.alpha)?;
                let pred: Vec<usize> = s
                    .row_iter()
                    .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
                    .collect();
                Ok((g, scoring.score(&truth, &pred, label_order)?))
            })
            .collect()
    });

    let mut fold_scores = vec![vec![0.0; folds.len()]; grid.len()];
    for ((f, _), r) in jobs.iter().zip(results) {
        for (g, score) in r? {
            fold_scores[g][*f] = score;
        }
    }
    let rows: Vec<GridRow> = grid
        .iter()
        .zip(fold_scores)
        .map(|(p, scores)| GridRow {
            point: *p,
            mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            fold_scores: scores,
        })
        .collect();
    let best_index = rows.iter().enumerate().fold(0, |best, (i, r)| {
        if r.mean_score > rows[best].mean_score {
            i
        } else {
            best
        }
    });
    Ok(GridSearchResult { best_index, rows })
}
