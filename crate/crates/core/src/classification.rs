//! Per-class precision/recall/F1 reports in the usual classification-report
//! layout (per-class rows, accuracy, macro and support-weighted averages).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of ground-truth items carrying this label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Items scored, i.e. the sum of all supports.
    pub total: usize,
}

impl ClassificationReport {
    /// Builds a report from `(truth, predicted)` pairs.
    ///
    /// Classes are listed in `order` first, then any remaining label in
    /// lexical order. A zero denominator yields 0 for that metric.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)], order: &[&str]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput(
                "classification report needs at least one item".into(),
            ));
        }
        let mut labels: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        let mut extra: Vec<String> = pairs
            .iter()
            .flat_map(|(t, p)| [t.as_ref(), p.as_ref()])
            .filter(|l| !order.contains(l))
            .map(str::to_string)
            .collect();
        extra.sort();
        extra.dedup();
        labels.extend(extra);
        Self::with_labels(pairs, &labels)
    }

    /// Scores only the given labels. Items whose truth falls outside them
    /// are ignored for support; predictions outside them count against
    /// recall of the true class.
    pub fn with_labels<S: AsRef<str>>(pairs: &[(S, S)], labels: &[String]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput(
                "classification report needs at least one item".into(),
            ));
        }
        let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
        let mut support: BTreeMap<&str, usize> = BTreeMap::new();
        let mut correct = 0usize;
        for (t, p) in pairs {
            let (t, p) = (t.as_ref(), p.as_ref());
            *support.entry(t).or_default() += 1;
            *predicted.entry(p).or_default() += 1;
            if t == p {
                *tp.entry(t).or_default() += 1;
                correct += 1;
            }
        }

        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let classes: Vec<ClassMetrics> = labels
            .iter()
            .map(|label| {
                let l = label.as_str();
                let tp = tp.get(l).copied().unwrap_or(0);
                let sup = support.get(l).copied().unwrap_or(0);
                let precision = ratio(tp, predicted.get(l).copied().unwrap_or(0));
                let recall = ratio(tp, sup);
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
                    support: sup,
                }
            })
            .collect();

        let total: usize = classes.iter().map(|c| c.support).sum();
        let k = classes.len().max(1) as f64;
        let macro_avg = Averages {
            precision: classes.iter().map(|c| c.precision).sum::<f64>() / k,
            recall: classes.iter().map(|c| c.recall).sum::<f64>() / k,
            f1: classes.iter().map(|c| c.f1).sum::<f64>() / k,
        };
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if total == 0 {
                0.0
            } else {
                classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
            }
        };
        let weighted_avg = Averages {
            precision: weighted(|c| c.precision),
            recall: weighted(|c| c.recall),
            f1: weighted(|c| c.f1),
        };
        Ok(Self {
            accuracy: correct as f64 / pairs.len() as f64,
            classes,
            macro_avg,
            weighted_avg,
            total,
        })
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,precision,recall,f1,support\n");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.4},{}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(s, "accuracy,,,{:.4},{}", self.accuracy, self.total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{name},{:.4},{:.4},{:.4},{}",
                a.precision, a.recall, a.f1, self.total
            );
        }
        s
    }

    /// Aligned text table with two-decimal values.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.label.len())
            .chain([12])
            .max()
            .unwrap_or(12);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "Precision", "Recall", "F1-Score", "Support"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.2}  {:>9}  {:>9}  {:>9}",
            "Accuracy", self.accuracy, "", "", self.total
        );
        for (name, a) in [("Macro Avg", &self.macro_avg), ("Weighted Avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                name, a.precision, a.recall, a.f1, self.total
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
        v.to_vec()
    }

    #[test]
    fn perfect_classifier() {
        let p = pairs(&[("a", "a"), ("b", "b"), ("b", "b")]);
        let r = ClassificationReport::from_pairs(&p, &[]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for c in &r.classes {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_avg.f1, 1.0);
        assert_eq!(r.total, 3);
    }

    #[test]
    fn two_class_confusion_arithmetic() {
        // class A: TP=3, FP=1, FN=1; class B: TP=1, FP=1, FN=1
        let p = pairs(&[("A", "A"), ("A", "A"), ("A", "A"), ("A", "B"), ("B", "A"), ("B", "B")]);
        let r = ClassificationReport::from_pairs(&p, &["A", "B"]).unwrap();
        let a = r.class("A").unwrap();
        assert_eq!((a.precision, a.recall, a.f1, a.support), (0.75, 0.75, 0.75, 4));
        let b = r.class("B").unwrap();
        assert_eq!((b.precision, b.recall, b.f1, b.support), (0.5, 0.5, 0.5, 2));
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert!((r.macro_avg.f1 - 0.625).abs() < 1e-12);
        assert!((r.weighted_avg.f1 - (0.75 * 4.0 + 0.5 * 2.0) / 6.0).abs() < 1e-12);
        assert_eq!(r.classes.iter().map(|c| c.support).sum::<usize>(), 6);
    }

    #[test]
    fn empty_input_is_error() {
        let p: Vec<(&str, &str)> = vec![];
        assert!(ClassificationReport::from_pairs(&p, &[]).is_err());
    }

    #[test]
    fn explicit_order_comes_first() {
        let p = pairs(&[("z", "z"), ("none", "none")]);
        let r = ClassificationReport::from_pairs(&p, &["none"]).unwrap();
        assert_eq!(r.classes[0].label, "none");
        assert!(r.to_text().contains("Weighted Avg"));
        assert!(r.to_csv().starts_with("label,precision"));
    }
}
