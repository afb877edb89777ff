//! Evaluation: confusion-matrix accumulation, per-class precision / recall
//! / F1, the support-weighted overall F1, and the binary presence/absence
//! collapse.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Square count matrix, rows = ground truth, columns = prediction.
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

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::data(format!(
                "class id out of range: truth {truth}, pred {pred}, classes {}",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Entrywise sum; partial matrices from parallel workers merge here.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::data("cannot merge confusion matrices of different size"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth row sum for one class.
    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.count(class, p)).sum()
    }

    pub fn supports(&self) -> Vec<u64> {
        (0..self.classes).map(|c| self.support(c)).collect()
    }
}

/// Precision, recall and F1 as fractions in `[0, 1]`. Zero support or zero
/// predictions make the affected quantities 0 rather than undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `F1 = 2 * precision * recall / (precision + recall)`, zero when both are.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.count(c, c) as f64;
            let fp: f64 = (0..cm.classes())
                .filter(|&t| t != c)
                .map(|t| cm.count(t, c) as f64)
                .sum();
            let fn_: f64 = (0..cm.classes())
                .filter(|&p| p != c)
                .map(|p| cm.count(c, p) as f64)
                .sum();
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect()
}

/// Support-weighted mean of the per-class F1 scores.
pub fn overall_f1(f1s: &[f64], supports: &[u64]) -> Result<f64> {
    if f1s.len() != supports.len() {
        return Err(Error::data("per-class F1 and support lengths differ"));
    }
    let total: u64 = supports.iter().sum();
    if total == 0 {
        return Err(Error::data("zero total support"));
    }
    Ok(f1s
        .iter()
        .zip(supports)
        .map(|(f, &s)| f * s as f64)
        .sum::<f64>()
        / total as f64)
}

/// Collapse all seagrass species into one class for presence/absence
/// evaluation. `seagrass_ids` must be non-empty and exclude class 0;
/// everything else (background, outliers) maps to the binary class 0.
pub fn collapse_binary(cm: &ConfusionMatrix, seagrass_ids: &[usize]) -> Result<ConfusionMatrix> {
    if seagrass_ids.is_empty() {
        return Err(Error::data("no seagrass class ids given"));
    }
    if seagrass_ids.contains(&0) {
        return Err(Error::data("class 0 is background, not seagrass"));
    }
    if seagrass_ids.iter().any(|&c| c >= cm.classes()) {
        return Err(Error::data("seagrass id out of range"));
    }
    let to_binary = |c: usize| usize::from(seagrass_ids.contains(&c));
    let mut out = ConfusionMatrix::new(2);
    for t in 0..cm.classes() {
        for p in 0..cm.classes() {
            out.counts[to_binary(t) * 2 + to_binary(p)] += cm.count(t, p);
        }
    }
    Ok(out)
}

/// Report row: percentages rounded to two decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassReport>,
    pub overall_f1: f64,
    pub total: u64,
}

fn pct(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

impl MetricReport {
    /// Build a report from a confusion matrix. `names` may be shorter than
    /// the class count; missing entries become `Class<i>`.
    pub fn from_confusion(cm: &ConfusionMatrix, names: &[String]) -> Result<MetricReport> {
        let metrics = per_class_metrics(cm);
        let supports = cm.supports();
        let f1s: Vec<f64> = metrics.iter().map(|m| m.f1).collect();
        let overall = overall_f1(&f1s, &supports)?;
        let per_class = metrics
            .iter()
            .enumerate()
            .map(|(c, m)| ClassReport {
                class: c,
                name: names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("Class{c}")),
                precision: pct(m.precision),
                recall: pct(m.recall),
                f1: pct(m.f1),
                support: supports[c],
            })
            .collect();
        Ok(MetricReport {
            per_class,
            overall_f1: pct(overall),
            total: cm.total(),
        })
    }

    /// Aligned plain-text table: per-class precision / recall / F1 plus the
    /// overall row.
    pub fn to_text_table(&self) -> String {
        let name_width = self
            .per_class
            .iter()
            .map(|r| r.name.len())
            .chain(["Overall".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>7}  {:>7}  {:>8}\n",
            "Class", "Prec.", "Recall", "F1", "Support"
        ));
        for r in &self.per_class {
            out.push_str(&format!(
                "{:<name_width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8}\n",
                r.name, r.precision, r.recall, r.f1, r.support
            ));
        }
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>7}  {:>7.2}  {:>8}\n",
            "Overall", "", "", self.overall_f1, self.total
        ));
        out
    }
}
