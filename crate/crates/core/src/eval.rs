//! Confusion matrices, macro-averaged precision/recall/F1 and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    label_order: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_indices(y_true: &[usize], y_pred: &[usize], label_order: &[String]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::validation(format!(
                "{} true labels but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let k = label_order.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= k || p >= k {
                return Err(Error::validation(format!("class index out of range ({t}, {p})")));
            }
            counts[t][p] += 1;
        }
        Ok(Self {
            counts,
            label_order: label_order.to_vec(),
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn label_order(&self) -> &[String] {
        &self.label_order
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn column_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Each row divided by its total; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }
}

/// Builds a confusion matrix from label names.
pub fn confusion<S: AsRef<str>>(y_true: &[S], y_pred: &[S], label_order: &[String]) -> Result<ConfusionMatrix> {
    let lookup: BTreeMap<&str, usize> = label_order
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let index = |labels: &[S]| -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                lookup
                    .get(l.as_ref())
                    .copied()
                    .ok_or_else(|| Error::validation(format!("unknown label '{}'", l.as_ref())))
            })
            .collect()
    };
    ConfusionMatrix::from_indices(&index(y_true)?, &index(y_pred)?, label_order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True windows of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics. Undefined precision or recall counts as 0 and
/// still enters the macro mean.
pub fn macro_metrics(cm: &ConfusionMatrix) -> MetricReport {
    let per_class: Vec<ClassMetrics> = cm
        .label_order
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.column_total(c));
            let recall = ratio(tp, cm.row_total(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: label.clone(),
                precision,
                recall,
                f1,
                support: cm.row_total(c),
            }
        })
        .collect();
    let col = |f: fn(&ClassMetrics) -> f64| -> Vec<f64> { per_class.iter().map(f).collect() };
    MetricReport {
        macro_precision: macro_average(&col(|m| m.precision)),
        macro_recall: macro_average(&col(|m| m.recall)),
        macro_f1: macro_average(&col(|m| m.f1)),
        per_class,
    }
}

/// One prediction for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_id: String,
    pub truth: String,
    pub predicted: String,
}

/// Rendered evaluation of one test split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

impl EvaluationReport {
    /// Checks that `predictions` cover every id in `expected_windows`, then
    /// computes the confusion matrix and metrics.
    pub fn build(
        expected_windows: &[String],
        predictions: &[Prediction],
        label_order: &[String],
    ) -> Result<Self> {
        let covered: BTreeSet<&str> = predictions.iter().map(|p| p.window_id.as_str()).collect();
        let missing: Vec<String> = expected_windows
            .iter()
            .filter(|w| !covered.contains(w.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Coverage(missing));
        }
        let truth: Vec<&str> = predictions.iter().map(|p| p.truth.as_str()).collect();
        let pred: Vec<&str> = predictions.iter().map(|p| p.predicted.as_str()).collect();
        let confusion = confusion(&truth, &pred, label_order)?;
        let metrics = macro_metrics(&confusion);
        Ok(Self { confusion, metrics })
    }

    /// `metrics.csv`: one row per class then the macro row.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("label,precision,recall,f1,support,flag\n");
        for m in &self.metrics.per_class {
            let flag = if m.support == 0 { "empty" } else { "" };
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{},{}",
                m.label, m.precision, m.recall, m.f1, m.support, flag
            );
        }
        let _ = writeln!(
            s,
            "macro,{:.6},{:.6},{:.6},{},",
            self.metrics.macro_precision,
            self.metrics.macro_recall,
            self.metrics.macro_f1,
            self.confusion.total()
        );
        s
    }

    fn matrix_csv<T>(&self, rows: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.confusion.label_order {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (label, row) in self.confusion.label_order.iter().zip(rows) {
            s.push_str(label);
            for v in row {
                s.push(',');
                s.push_str(&fmt(v));
            }
            s.push('\n');
        }
        s
    }

    /// `confusion.csv`: raw counts.
    pub fn confusion_csv(&self) -> String {
        self.matrix_csv(&self.confusion.counts, |c| c.to_string())
    }

    /// `confusion_norm.csv`: row-normalised, four decimals.
    pub fn confusion_norm_csv(&self) -> String {
        self.matrix_csv(&self.confusion.row_normalized(), |v| format!("{v:.4}"))
    }

    pub fn text(&self) -> String {
        let width = self
            .confusion
            .label_order
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "class", "precision", "recall", "f1", "support"
        );
        let mut any_empty = false;
        for m in &self.metrics.per_class {
            let mark = if m.support == 0 {
                any_empty = true;
                "*"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}{mark}",
                m.label, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            "macro",
            self.metrics.macro_precision,
            self.metrics.macro_recall,
            self.metrics.macro_f1,
            self.confusion.total()
        );
        if any_empty {
            let _ = writeln!(s, "* no test windows for this class; precision and recall reported as 0");
        }
        let _ = writeln!(s, "\nrow-normalised confusion matrix (rows = true class)");
        let norm = self.confusion.row_normalized();
        let _ = write!(s, "{:<width$}", "");
        for l in &self.confusion.label_order {
            let _ = write!(s, "  {:>8}", truncate(l, 8));
        }
        s.push('\n');
        for (l, row) in self.confusion.label_order.iter().zip(&norm) {
            let _ = write!(s, "{l:<width$}");
            for v in row {
                let _ = write!(s, "  {v:>8.4}");
            }
            s.push('\n');
        }
        s
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_is_diagonal() {
        let y = vec!["a", "b", "b", "c"];
        let order: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let cm = confusion(&y, &y, &order).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let m = macro_metrics(&cm);
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_off_diagonal() {
        let order = vec!["a".to_string(), "b".to_string()];
        let cm = confusion(&["a"], &["b"], &order).unwrap();
        assert_eq!(cm.counts(), &[vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn unknown_label() {
        let order = vec!["a".to_string()];
        assert!(confusion(&["a"], &["z"], &order).is_err());
        assert!(confusion(&["a", "a"], &["a"], &order).is_err());
    }

    #[test]
    fn reference_rocket_rows() {
        let p = [0.54, 0.38, 0.94, 0.90, 0.27, 0.77];
        let r = [0.82, 0.65, 0.88, 0.96, 0.71, 0.62];
        assert!((macro_average(&p) - 3.8 / 6.0).abs() < 1e-12);
        assert!((macro_average(&r) - 4.64 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn all_one_class_predictor() {
        // 6 balanced classes, 10 windows each, everything predicted as class 2
        let truth: Vec<usize> = (0..60).map(|i| i / 10).collect();
        let pred = vec![2usize; 60];
        let cm = ConfusionMatrix::from_indices(&truth, &pred, &labels(6)).unwrap();
        let m = macro_metrics(&cm);
        assert!((m.macro_recall - 1.0 / 6.0).abs() < 1e-15);
        // the predicted class has precision 10/60
        assert!((m.macro_precision - (1.0 / 6.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn report_renderings() {
        let order = labels(6);
        let preds: Vec<Prediction> = (0..10)
            .map(|i| Prediction {
                window_id: format!("w{i}"),
                truth: format!("c{}", i % 5),
                predicted: format!("c{}", (i * 7) % 5),
            })
            .collect();
        let ids: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let rep = EvaluationReport::build(&ids, &preds, &order).unwrap();
        let csv = rep.metrics_csv();
        assert_eq!(csv.lines().count(), 1 + 6 + 1);
        assert!(csv.contains("c5,0.000000,0.000000,0.000000,0,empty"));
        assert!(rep.text().contains("* no test windows"));
        assert_eq!(rep.confusion_norm_csv().lines().count(), 7);
        let again = EvaluationReport::build(&ids, &preds, &order).unwrap();
        assert_eq!(again.metrics_csv(), csv);
        assert_eq!(again.text(), rep.text());

        let mut more = ids.clone();
        more.push("w99".into());
        match EvaluationReport::build(&more, &preds, &order) {
            Err(Error::Coverage(missing)) => assert_eq!(missing, vec!["w99".to_string()]),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn macro_recall_matches_counting_oracle(
            pairs in prop::collection::vec((0usize..6, 0usize..6), 1..2000),
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let cm = ConfusionMatrix::from_indices(&t, &p, &labels(6)).unwrap();
            prop_assert_eq!(cm.total() as usize, t.len());
            let m = macro_metrics(&cm);
            // per-sample counting
            let mut recall_sum = 0.0;
            for c in 0..6 {
                let members: Vec<usize> = (0..t.len()).filter(|&i| t[i] == c).collect();
                if !members.is_empty() {
                    let hits = members.iter().filter(|&&i| p[i] == c).count();
                    recall_sum += hits as f64 / members.len() as f64;
                }
            }
            prop_assert!((m.macro_recall - recall_sum / 6.0).abs() < 1e-12);
            for v in [m.macro_precision, m.macro_recall, m.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let max_f1 = m.per_class.iter().map(|c| c.f1).fold(0.0, f64::max);
            prop_assert!(m.macro_f1 <= max_f1 + 1e-15);

            // relabel by a rotation
            let rot = |c: usize| (c + 2) % 6;
            let t2: Vec<usize> = t.iter().map(|&c| rot(c)).collect();
            let p2: Vec<usize> = p.iter().map(|&c| rot(c)).collect();
            let m2 = macro_metrics(&ConfusionMatrix::from_indices(&t2, &p2, &labels(6)).unwrap());
            prop_assert!((m2.macro_recall - m.macro_recall).abs() < 1e-12);
            prop_assert!((m2.macro_precision - m.macro_precision).abs() < 1e-12);
            prop_assert!((m2.macro_f1 - m.macro_f1).abs() < 1e-12);
            for c in 0..6 {
                prop_assert_eq!(m2.per_class[rot(c)].recall, m.per_class[c].recall);
            }

            // order invariance
            let mut rev = pairs.clone();
            rev.reverse();
            let (tr, pr): (Vec<usize>, Vec<usize>) = rev.into_iter().unzip();
            prop_assert_eq!(ConfusionMatrix::from_indices(&tr, &pr, &labels(6)).unwrap(), cm);
        }
    }
}
