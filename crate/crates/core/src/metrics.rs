//! Confusion-matrix metrics and one-vs-rest ROC curves.
//!
//! Per class `c`, the one-vs-rest reduction gives `TP` (true c, predicted c),
//! `FP` (predicted c, true other), `FN` (true c, predicted other) and `TN`
//! (everything else). Ratios with a zero denominator are reported as 0 and
//! flagged.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    /// `counts[i][j]`: samples of true class `i` predicted as `j`.
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension { expected: y_true.len(), got: y_pred.len() });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Data(format!("class id {} out of range for {n_classes} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts, class_names: (0..n_classes).map(|c| c.to_string()).collect() })
}

impl ConfusionMatrix {
    pub fn with_class_names(mut self, names: &[String]) -> Self {
        if names.len() == self.counts.len() {
            self.class_names = names.to_vec();
        }
        self
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        let fp = self.counts.iter().map(|r| r[c]).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        (tp, fp, fn_, tn)
    }

    /// CSV grid: header `true\predicted,<classes...>`, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for n in &self.class_names {
            out.push(',');
            out.push_str(&csv_field(n));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy `(TP + TN) / total`.
    pub accuracy: f64,
    /// Names of metrics whose denominator was zero.
    pub undefined: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub total: u64,
    /// Fraction of samples on the diagonal.
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    #[serde(rename = "micro")]
    pub micro_avg: Averages,
    #[serde(rename = "weighted")]
    pub weighted_avg: Averages,
}

fn ratio(num: u64, den: u64, name: &'static str, flags: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        flags.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if cm.n_classes() == 0 || total == 0 {
        return Err(Error::Data("metrics need a non-empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(cm.n_classes());
    let (mut sum_tp, mut sum_fp, mut sum_fn) = (0, 0, 0);
    for c in 0..cm.n_classes() {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
        sum_tp += tp;
        sum_fp += fp;
        sum_fn += fn_;
        let mut undefined = Vec::new();
        let precision = ratio(tp, tp + fp, "precision", &mut undefined);
        let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_, "f1", &mut undefined);
        per_class.push(ClassMetrics {
            name: cm.class_names[c].clone(),
            support: tp + fn_,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy: (tp + tn) as f64 / total as f64,
            undefined,
        });
    }
    let k = per_class.len() as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    let mut flags = Vec::new();
    let micro_avg = Averages {
        precision: ratio(sum_tp, sum_tp + sum_fp, "precision", &mut flags),
        recall: ratio(sum_tp, sum_tp + sum_fn, "recall", &mut flags),
        f1: ratio(2 * sum_tp, 2 * sum_tp + sum_fp + sum_fn, "f1", &mut flags),
    };
    let diagonal: u64 = (0..cm.n_classes()).map(|c| cm.counts[c][c]).sum();
    Ok(MetricsReport {
        total,
        accuracy: diagonal as f64 / total as f64,
        per_class,
        macro_avg,
        micro_avg,
        weighted_avg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        out
    }
}

/// ROC curve from a descending threshold sweep over distinct scores; tied
/// scores move together. AUC by the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension { expected: scores.len(), got: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC needs at least one positive and one negative label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("seeded");
        let point = RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: s };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auc })
}

/// Per-class ROC treating each class as positive against the rest; `None`
/// where the class is absent (or is the only class) in `y_true`.
pub fn one_vs_rest_roc(probs: ArrayView2<f64>, y_true: &[usize]) -> Result<Vec<Option<RocCurve>>> {
    if probs.nrows() != y_true.len() {
        return Err(Error::Dimension { expected: probs.nrows(), got: y_true.len() });
    }
    (0..probs.ncols())
        .map(|c| {
            let labels: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
            if labels.iter().all(|&l| l) || !labels.iter().any(|&l| l) {
                return Ok(None);
            }
            roc_auc(&probs.column(c).to_vec(), &labels).map(Some)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_small_example() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![1, 1]]);
        let perfect = confusion(&[0, 2, 1, 2], &[0, 2, 1, 2], 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(i == j || perfect.counts[i][j] == 0);
            }
        }
        assert!(confusion(&[0, 1], &[0], 2).is_err());
        assert!(confusion(&[0, 3], &[0, 1], 2).is_err());
    }

    #[test]
    fn binary_arithmetic() {
        let cm = ConfusionMatrix { counts: vec![vec![99, 1], vec![1, 99]], class_names: vec!["a".into(), "b".into()] };
        let r = per_class_metrics(&cm).unwrap();
        let m = &r.per_class[1];
        assert_eq!((m.tp, m.tn, m.fp, m.fn_), (99, 99, 1, 1));
        assert!((m.accuracy - 0.99).abs() < 1e-15);
        assert!((m.precision - 0.99).abs() < 1e-15);
        assert!((m.recall - 0.99).abs() < 1e-15);
    }

    #[test]
    fn rare_class_recalls() {
        // SQL Injection row: 14 of 16 detected.
        let mut t = vec![1; 16];
        let mut p = vec![1; 14];
        p.extend([0, 0]);
        // Brute Force-XSS row: 20 of 24 detected.
        t.extend(vec![2; 24]);
        p.extend(vec![2; 20]);
        p.extend([0, 0, 0, 0]);
        t.extend(vec![0; 10]);
        p.extend(vec![0; 10]);
        let r = per_class_metrics(&confusion(&t, &p, 3).unwrap()).unwrap();
        assert_eq!(r.per_class[1].recall, 0.875);
        assert!((r.per_class[2].recall - 0.833).abs() < 1e-3);
    }

    #[test]
    fn absent_class_is_flagged() {
        let r = per_class_metrics(&confusion(&[0, 1, 1], &[0, 1, 1], 3).unwrap()).unwrap();
        let m = &r.per_class[2];
        assert_eq!(m.undefined, vec!["precision", "recall", "f1"]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!((r.macro_avg.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(per_class_metrics(&confusion(&[], &[], 2).unwrap()).is_err());
    }

    #[test]
    fn roc_perfect_and_inverted() {
        let c = roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(c.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        let c = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 0.0);
        let tied = roc_auc(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points.len(), 2);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn csv_outputs() {
        let cm = confusion(&[0, 1], &[0, 0], 2).unwrap().with_class_names(&["Benign".into(), "Bot, v2".into()]);
        assert_eq!(cm.to_csv(), "true\\predicted,Benign,\"Bot, v2\"\nBenign,1,0\n\"Bot, v2\",1,0\n");
        let roc = roc_auc(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(roc.to_csv(), "fpr,tpr,threshold\n0,0,inf\n0,1,0.9\n1,1,0.1\n");
    }
}
