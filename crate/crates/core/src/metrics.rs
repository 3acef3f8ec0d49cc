//! Confusion counts, precision/recall/F_k, ROC curve and trapezoidal AUC.
//! The feasible class (label 1) is the positive class.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_tp: usize,
    pub n_tn: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.n_tp + self.n_tn + self.n_fp + self.n_fn
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionCounts> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == 1, p == 1) {
            (true, true) => c.n_tp += 1,
            (false, false) => c.n_tn += 1,
            (false, true) => c.n_fp += 1,
            (true, false) => c.n_fn += 1,
        }
    }
    Ok(c)
}

/// Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_k: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Weighted harmonic mean in which recall counts `k` times as much as precision.
pub fn f_measure(precision: f64, recall: f64, k: f64) -> Option<f64> {
    let k2 = k * k;
    let den = k2 * precision + recall;
    if den > 0.0 {
        Some((1.0 + k2) * precision * recall / den)
    } else if den == 0.0 && precision == 0.0 && recall == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

pub fn scores(c: &ConfusionCounts, k: f64) -> Scores {
    let precision = ratio(c.n_tp, c.n_tp + c.n_fp);
    let recall = ratio(c.n_tp, c.n_tp + c.n_fn);
    Scores {
        accuracy: ratio(c.n_tp + c.n_tn, c.total()),
        precision,
        recall,
        f_k: precision.zip(recall).and_then(|(p, r)| f_measure(p, r, k)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// Sweeps `score >= threshold` over +∞, the distinct scores in descending
/// order, and −∞.
pub fn roc_curve(scores: &[f64], y_true: &[usize]) -> Result<Vec<RocPoint>> {
    check_lengths(scores.len(), y_true.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input("ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if y_true[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    Ok(points)
}

pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f10: Option<f64>,
    pub auc: Option<f64>,
}

/// Scores feasible-class probabilities at `threshold`. AUC is `None` when
/// only one class is present.
pub fn evaluate(p_feasible: &[f64], y_true: &[usize], threshold: f64) -> Result<(EvalReport, Vec<RocPoint>)> {
    check_lengths(p_feasible.len(), y_true.len())?;
    let pred: Vec<usize> = p_feasible.iter().map(|&p| usize::from(p >= threshold)).collect();
    let counts = confusion(y_true, &pred)?;
    let s1 = scores(&counts, 1.0);
    let s10 = scores(&counts, 10.0);
    let roc = roc_curve(p_feasible, y_true).unwrap_or_default();
    let report = EvalReport {
        counts,
        accuracy: s1.accuracy,
        precision: s1.precision,
        recall: s1.recall,
        f1: s1.f_k,
        f10: s10.f_k,
        auc: (!roc.is_empty()).then(|| auc(&roc)),
    };
    Ok((report, roc))
}
