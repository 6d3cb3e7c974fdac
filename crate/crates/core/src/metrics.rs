//! Confusion matrices, per-class precision/recall/F1, macro averages and
//! ranked top-k class reports.
//!
//! Conventions: confusion-matrix rows are true classes, columns predicted
//! classes. A ratio whose denominator is zero (a class never predicted, or
//! never present) is reported as 0 and the class is flagged `undefined`.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

pub const MATRIX_CONVENTION: &str = "rows = true class, columns = predicted class";

/// Serialises a float with exactly four decimals (`0.2942`, `1.0000`).
pub fn fixed4<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("{v:.4}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// Row-major `K×K`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes() + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes();
        for index in [truth, predicted] {
            if index >= k {
                return Err(Error::ClassOutOfRange { index, classes: k });
            }
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes().max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

/// Counts `(label, prediction)` pairs into a `k×k` matrix.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::new(default_names(k));
    for (&p, &t) in predictions.iter().zip(labels) {
        m.add(t, p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    #[serde(serialize_with = "fixed4")]
    pub precision: f64,
    #[serde(serialize_with = "fixed4")]
    pub recall: f64,
    #[serde(rename = "f1_score", serialize_with = "fixed4")]
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Precision or recall hit a zero denominator.
    pub undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroAverage {
    #[serde(serialize_with = "fixed4")]
    pub precision: f64,
    #[serde(serialize_with = "fixed4")]
    pub recall: f64,
    #[serde(rename = "f1_score", serialize_with = "fixed4")]
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub samples: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn per_class_metrics(m: &ConfusionMatrix) -> MetricsReport {
    let k = m.num_classes();
    let classes = (0..k)
        .map(|c| {
            let tp = m.get(c, c);
            let fp = (0..k).filter(|&t| t != c).map(|t| m.get(t, c)).sum();
            let fn_ = (0..k).filter(|&p| p != c).map(|p| m.get(c, p)).sum();
            let (precision, p_undef) = ratio(tp, tp + fp);
            let (recall, r_undef) = ratio(tp, tp + fn_);
            ClassMetrics {
                class: m.classes[c].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                tp,
                fp,
                fn_,
                undefined: p_undef || r_undef,
            }
        })
        .collect();
    MetricsReport {
        classes,
        samples: m.total(),
    }
}

/// Unweighted mean over classes.
pub fn macro_average(report: &MetricsReport) -> MacroAverage {
    let n = report.classes.len().max(1) as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| report.classes.iter().map(f).sum::<f64>() / n;
    MacroAverage {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    }
}

/// Table-style evaluation document: per-class rows, macro averages and the
/// confusion matrix.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub convention: &'static str,
    pub samples: u64,
    #[serde(serialize_with = "fixed4")]
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroAverage,
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl EvaluationReport {
    pub fn new(m: &ConfusionMatrix) -> Self {
        let report = per_class_metrics(m);
        Self {
            convention: MATRIX_CONVENTION,
            samples: report.samples,
            accuracy: m.accuracy(),
            macro_avg: macro_average(&report),
            classes: report.classes,
            confusion_matrix: m.rows(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKEntry {
    pub class: String,
    #[serde(skip)]
    pub index: usize,
    #[serde(serialize_with = "fixed4")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKReport {
    pub predictions: Vec<TopKEntry>,
}

/// The `k` most probable classes, descending, ties broken by class index.
pub fn top_k<S: AsRef<str>>(probs: &[f32], class_names: &[S], k: usize) -> Result<TopKReport> {
    if class_names.len() != probs.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} class names",
            probs.len(),
            class_names.len()
        )));
    }
    if k == 0 || k > probs.len() {
        return Err(Error::invalid(format!("k must be in 1..={}, got {k}", probs.len())));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::NonFinite("top-k probabilities"));
    }
    let sum: f64 = probs.iter().map(|&p| f64::from(p)).sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::invalid(format!("probabilities sum to {sum}, expected 1")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(TopKReport {
        predictions: order[..k]
            .iter()
            .map(|&i| TopKEntry {
                class: class_names[i].as_ref().to_owned(),
                index: i,
                confidence: f64::from(probs[i]),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn by_hand_confusion_matrix() {
        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(m.rows(), vec![vec![1, 1], vec![0, 1]]);
        assert_eq!((m.trace(), m.total()), (2, 3));
    }

    #[test]
    fn perfect_and_empty() {
        let labels = [0, 2, 1, 2, 2];
        let m = confusion_matrix(&labels, &labels, 3).unwrap();
        assert_eq!(m.trace(), 5);
        assert_eq!(m.get(0, 1) + m.get(2, 0), 0);
        let empty = confusion_matrix(&[], &[], 4).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        assert!(confusion_matrix(&[0, 1], &[0], 3).is_err());
    }

    #[test]
    fn direct_substitution() {
        // TP=9, FP=1, FN=9 → P=0.9, R=0.5, F1 = 2·0.45/1.4 = 9/14.
        let mut m = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for _ in 0..9 {
            m.add(0, 0).unwrap();
            m.add(0, 1).unwrap();
        }
        m.add(1, 0).unwrap();
        let r = per_class_metrics(&m);
        let a = &r.classes[0];
        assert_eq!((a.tp, a.fp, a.fn_), (9, 1, 9));
        assert!((a.precision - 0.9).abs() < 1e-12);
        assert!((a.recall - 0.5).abs() < 1e-12);
        assert!((a.f1 - 9.0 / 14.0).abs() < 1e-12);
        assert!(!r.classes[1].undefined);
        // Class c never occurs and is never predicted.
        assert!(r.classes[2].undefined);
        assert_eq!((r.classes[2].precision, r.classes[2].f1), (0.0, 0.0));
    }

    #[test]
    fn macro_of_constant_metrics() {
        let m = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let avg = macro_average(&per_class_metrics(&m));
        assert_eq!((avg.precision, avg.recall, avg.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn top_k_tie_break_and_validation() {
        let names: Vec<String> = (0..19).map(|i| format!("c{i}")).collect();
        let uniform = vec![1.0f32 / 19.0; 19];
        let r = top_k(&uniform, &names, 3).unwrap();
        assert_eq!(r.predictions.iter().map(|e| e.index).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(r.predictions.iter().all(|e| (e.confidence - 0.0526).abs() < 1e-4));

        let mut one_hot = vec![0.0f32; 19];
        one_hot[7] = 1.0;
        let r = top_k(&one_hot, &names, 5).unwrap();
        assert_eq!(r.predictions[0].index, 7);
        assert_eq!(r.predictions[0].confidence, 1.0);
        assert!(r.predictions[1..].iter().all(|e| e.confidence == 0.0));

        assert!(top_k(&one_hot, &names, 20).is_err());
        assert!(top_k(&one_hot, &names, 0).is_err());
        assert!(top_k(&[0.5, 0.2], &["a", "b"], 1).is_err());
    }

    #[test]
    fn four_decimal_json() {
        let r = top_k(&[0.25, 0.75], &["a", "b"], 2).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"predictions":[{"class":"b","confidence":0.7500},{"class":"a","confidence":0.2500}]}"#
        );
    }
}
