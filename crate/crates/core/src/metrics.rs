//! Detection metrics over ID/OOD score arrays.
//!
//! Convention throughout: higher score means "more in-distribution", and ID is
//! the positive class unless a function says otherwise.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// Groups `(score, is_positive)` pairs by equal score, in the requested order.
/// Returns `(positives_in_group, negatives_in_group)` per distinct score.
fn tie_groups(pos: &[f64], neg: &[f64], descending: bool) -> Vec<(f64, u64, u64)> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| {
        let o = a.0.total_cmp(&b.0);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, is_pos) in all {
        match groups.last_mut() {
            // == rather than total_cmp so that -0.0 and 0.0 tie
            Some(g) if g.0 == s => {
                if is_pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, u64::from(is_pos), u64::from(!is_pos))),
        }
    }
    groups
}

/// Probability that a random ID score exceeds a random OOD score, ties counting one half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    let mut ood_below: u128 = 0;
    for (_, id_g, ood_g) in tie_groups(id_scores, ood_scores, false) {
        twice_u += 2 * id_g as u128 * ood_below + id_g as u128 * ood_g as u128;
        ood_below += ood_g as u128;
    }
    let pairs = id_scores.len() as f64 * ood_scores.len() as f64;
    Ok(twice_u as f64 / (2.0 * pairs))
}

/// Which group is treated as the positive class for a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    Id,
    Ood,
}

/// Step-wise average precision with `pos` as the positive class, thresholds
/// swept over distinct scores from high to low.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos)?;
    check_scores(neg)?;
    let n_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (_, p, n) in tie_groups(pos, neg, true) {
        tp += p;
        fp += n;
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AUPR-In (`Positive::Id`) or AUPR-Out (`Positive::Ood`, scores negated).
pub fn aupr(id_scores: &[f64], ood_scores: &[f64], positive: Positive) -> Result<f64> {
    match positive {
        Positive::Id => average_precision(id_scores, ood_scores),
        Positive::Ood => {
            let pos: Vec<f64> = ood_scores.iter().map(|s| -s).collect();
            let neg: Vec<f64> = id_scores.iter().map(|s| -s).collect();
            average_precision(&pos, &neg)
        }
    }
}

/// Number of ID samples that must be accepted to reach `target_tpr`:
/// `⌈n·target⌉`, with products within 1e-9 of an integer taken as that integer.
pub fn required_accepts(n: usize, target_tpr: f64) -> usize {
    let exact = n as f64 * target_tpr;
    let k = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Largest attained ID score `t` with `#{id ≥ t} / n ≥ target_tpr`: the
/// `⌈n·target⌉`-th largest ID score. No interpolation.
pub fn threshold_at_tpr(id_scores: &[f64], target_tpr: f64) -> Result<f64> {
    check_scores(id_scores)?;
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[required_accepts(sorted.len(), target_tpr) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion counts with ID positive and acceptance at `score ≥ threshold`.
pub fn precision_f1_at(
    threshold: f64,
    id_scores: &[f64],
    ood_scores: &[f64],
) -> Result<OperatingPoint> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    let tp = id_scores.iter().filter(|&&s| s >= threshold).count() as f64;
    let fp = ood_scores.iter().filter(|&&s| s >= threshold).count() as f64;
    let fn_ = id_scores.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / (tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(OperatingPoint {
        precision,
        recall,
        f1,
    })
}

/// Row-wise argmax, lowest index on ties.
pub fn predict_classes(logits: &Matrix) -> Vec<usize> {
    logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate().skip(1) {
                if v.partial_cmp(&row[best]) == Some(Ordering::Greater) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn id_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Full metric suite for one detector on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub source_tag: String,
    /// Precision/F1 count ID as the positive class.
    pub positive_class: String,
    pub target_tpr: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub threshold_at_tpr: f64,
    pub precision_at_tpr: f64,
    pub recall_at_tpr: f64,
    pub f1_at_tpr: f64,
    pub id_accuracy: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
}

pub fn evaluate(
    method: &str,
    source_tag: &str,
    id_scores: &[f64],
    ood_scores: &[f64],
    target_tpr: f64,
) -> Result<EvalReport> {
    let threshold = threshold_at_tpr(id_scores, target_tpr)?;
    let op = precision_f1_at(threshold, id_scores, ood_scores)?;
    Ok(EvalReport {
        method: method.to_string(),
        source_tag: source_tag.to_string(),
        positive_class: "ID".into(),
        target_tpr,
        auroc: auroc(id_scores, ood_scores)?,
        aupr_in: aupr(id_scores, ood_scores, Positive::Id)?,
        aupr_out: aupr(id_scores, ood_scores, Positive::Ood)?,
        threshold_at_tpr: threshold,
        precision_at_tpr: op.precision,
        recall_at_tpr: op.recall,
        f1_at_tpr: op.f1,
        id_accuracy: None,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
    })
}

/// Aligned text table, one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let tpr = reports.first().map_or(0.95, |r| r.target_tpr);
    let mut out = String::new();
    writeln!(
        out,
        "# OOD detection (positive class: ID; precision/F1 at TPR >= {tpr})"
    )
    .expect("string write");
    writeln!(
        out,
        "{:<8} {:>8} {:>8} {:>8} {:>10} {:>8}",
        "Method", "AUROC", "AUPR-In", "AUPR-Out", "Precision", "F1"
    )
    .expect("string write");
    for r in reports {
        writeln!(
            out,
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>8.4}",
            r.method, r.auroc, r.aupr_in, r.aupr_out, r.precision_at_tpr, r.f1_at_tpr
        )
        .expect("string write");
    }
    out
}
