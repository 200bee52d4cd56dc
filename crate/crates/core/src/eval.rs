//! Classification metrics and the repeated augmented-evaluation protocol.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("confusion matrix", &[counts.len()], &[classes, classes]));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize, count: u64) {
        self.counts[truth * self.classes + predicted] += count;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::shape("confusion", &[preds.len()], &[labels.len()]));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::shape("confusion class id", &[p.max(t)], &[classes]));
        }
        cm.add(t, p, 1);
    }
    Ok(cm)
}

/// Percentage of correct predictions.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Numeric("accuracy of an empty confusion matrix".into()));
    }
    Ok(100.0 * cm.trace() as f64 / total as f64)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Column-wise `TP / (TP + FP)`; a never-predicted class scores 0.
pub fn precision_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes()).map(|c| ratio(cm.get(c, c), cm.col_sum(c))).collect()
}

pub fn macro_precision(cm: &ConfusionMatrix) -> f64 {
    mean(&precision_per_class(cm))
}

/// Row-wise `TP / (TP + FN)`; an absent class scores 0.
pub fn recall_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes()).map(|c| ratio(cm.get(c, c), cm.row_sum(c))).collect()
}

pub fn macro_recall(cm: &ConfusionMatrix) -> f64 {
    mean(&recall_per_class(cm))
}

pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    precision_per_class(cm)
        .into_iter()
        .zip(recall_per_class(cm))
        .map(|(p, r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect()
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    mean(&f1_per_class(cm))
}

/// One-vs-rest ROC curve as `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC for binary `positives` ranked by `scores`, thresholding at every
/// distinct score.
pub fn roc_binary(scores: &[f32], positives: &[bool]) -> Option<RocCurve> {
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Some(RocCurve { points, auc })
}

/// Per-class one-vs-rest curves; `None` where a class has no positive or
/// no negative sample.
pub fn roc_auc(scores: &Tensor, labels: &[usize]) -> Result<Vec<Option<RocCurve>>> {
    let (n, k) = scores.matrix()?;
    if labels.len() != n {
        return Err(Error::shape("roc_auc", scores.dims(), &[labels.len()]));
    }
    Ok((0..k)
        .map(|c| {
            let s: Vec<f32> = (0..n).map(|r| scores.row(r)[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_binary(&s, &pos)
        })
        .collect())
}

/// Spread of accuracy (percent) across evaluation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl RunStats {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Config("at least one evaluation run is required".into()));
        }
        let mean = mean(&accuracies);
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accuracies.len() as f64;
        Ok(RunStats {
            mean,
            std: var.sqrt(),
            min: accuracies.iter().copied().fold(f64::INFINITY, f64::min),
            max: accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            accuracies,
        })
    }
}

/// Predictions of a single evaluation run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub probs: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Summed over all runs.
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Curves from the first run.
    pub roc: Vec<Option<RocCurve>>,
    pub runs: RunStats,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "runs: {}", self.runs.accuracies.len());
        let _ = writeln!(
            s,
            "accuracy %: mean {:.4} std {:.5} min {:.4} max {:.4}",
            self.runs.mean, self.runs.std, self.runs.min, self.runs.max
        );
        let _ = writeln!(s, "pooled accuracy %: {:.4}", self.accuracy);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}  {:>7}", "class", "precision", "recall", "f1", "auc", "samples");
        for (c, name) in self.class_names.iter().enumerate() {
            let auc = self.roc[c].as_ref().map_or("absent".to_string(), |r| format!("{:.4}", r.auc));
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}  {:>7}",
                name,
                self.precision[c],
                self.recall[c],
                self.f1[c],
                auc,
                self.confusion.row_sum(c)
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "confusion (rows true, columns predicted):");
        for t in 0..self.confusion.classes() {
            let row: Vec<String> = (0..self.confusion.classes()).map(|p| self.confusion.get(t, p).to_string()).collect();
            let _ = writeln!(s, "{}", row.join("\t"));
        }
        s
    }

    /// `class,fpr,tpr` rows for every available curve.
    pub fn roc_csv(&self) -> String {
        let mut s = String::from("class,fpr,tpr\n");
        for (c, curve) in self.roc.iter().enumerate() {
            if let Some(curve) = curve {
                for (f, t) in &curve.points {
                    let _ = writeln!(s, "{c},{f:.6},{t:.6}");
                }
            }
        }
        s
    }
}

/// Builds a report from one or more runs over the same test set.
pub fn report_from_runs(class_names: &[String], runs: &[RunOutput]) -> Result<EvalReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("at least one evaluation run is required".into()))?;
    let k = class_names.len();
    let mut pooled = ConfusionMatrix::new(k);
    let mut accs = Vec::with_capacity(runs.len());
    for run in runs {
        let (n, cols) = run.probs.matrix()?;
        if cols != k {
            return Err(Error::shape("evaluation scores", run.probs.dims(), &[n, k]));
        }
        let preds: Vec<usize> = (0..n).map(|r| crate::tensor::argmax(run.probs.row(r))).collect();
        let cm = confusion(&preds, &run.labels, k)?;
        accs.push(accuracy(&cm)?);
        pooled.merge(&cm)?;
    }
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        accuracy: accuracy(&pooled)?,
        precision: precision_per_class(&pooled),
        recall: recall_per_class(&pooled),
        f1: f1_per_class(&pooled),
        macro_precision: macro_precision(&pooled),
        macro_recall: macro_recall(&pooled),
        macro_f1: macro_f1(&pooled),
        roc: roc_auc(&first.probs, &first.labels)?,
        confusion: pooled,
        runs: RunStats::from_accuracies(accs)?,
    })
}

/// Runs `run_once(run_index)` `runs` times and aggregates the results.
/// Each run is expected to draw its augmentation from a stream keyed by its
/// index.
pub fn repeated_eval(
    class_names: &[String],
    runs: usize,
    mut run_once: impl FnMut(usize) -> Result<RunOutput>,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let outputs = (0..runs).map(&mut run_once).collect::<Result<Vec<_>>>()?;
    report_from_runs(class_names, &outputs)
}
