//! Evaluation metrics: rank AUC with its standard error, cumulative error
//! curves and row-normalized confusion matrices.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::Shape;

/// Rank-statistic AUC with ties averaged, plus the standard-error estimate
/// `sqrt(A (1 - A) / min(N_p, N_n))`.
pub fn auc_with_se(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch { context: "auc inputs", expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));

    // Midranks over tie groups.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l)
        .map(|(_, &r)| r)
        .sum();
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    let se = (auc * (1.0 - auc) / n_pos.min(n_neg) as f64).sqrt();
    Ok((auc, se))
}

/// Fraction of normalized errors at or below each observed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    /// `(threshold, fraction)` pairs, thresholds strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl CumulativeCurve {
    /// Fraction at an arbitrary threshold (step interpolation).
    pub fn fraction_at(&self, threshold: f64) -> f64 {
        let mut frac = 0.0;
        for &(t, f) in &self.points {
            if t <= threshold {
                frac = f;
            } else {
                break;
            }
        }
        frac
    }
}

pub fn cumulative_error_curve(errors: &[f64], normalizer: f64) -> Result<CumulativeCurve> {
    if errors.is_empty() {
        return Err(Error::invalid("cumulative curve needs at least one error"));
    }
    if !(normalizer.is_finite() && normalizer > 0.0) {
        return Err(Error::invalid(format!("normalizer must be positive, got {normalizer}")));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("cumulative curve errors"));
    }
    let mut normalized: Vec<f64> = errors.iter().map(|e| e.abs() / normalizer).collect();
    normalized.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = normalized.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in normalized.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => points.push((v, frac)),
        }
    }
    Ok(CumulativeCurve { points })
}

/// Distance between the two farthest points across the eye landmark sets.
pub fn inter_ocular_distance(shape: &Shape, left_eye: &[usize], right_eye: &[usize]) -> Result<f64> {
    if left_eye.is_empty() || right_eye.is_empty() {
        return Err(Error::invalid("eye index sets must be nonempty"));
    }
    let mut best: f64 = 0.0;
    for &l in left_eye {
        for &r in right_eye {
            if l >= shape.len() || r >= shape.len() {
                return Err(Error::invalid("eye index out of range"));
            }
            best = best.max((shape.point(l) - shape.point(r)).norm());
        }
    }
    if best <= f64::MIN_POSITIVE {
        return Err(Error::invalid("inter-ocular distance is zero"));
    }
    Ok(best)
}

/// Average of the landmark bounding-box height and width.
pub fn face_size(shape: &Shape) -> Result<f64> {
    let (lo, hi) = shape.bounding_box();
    let size = ((hi.x - lo.x) + (hi.y - lo.y)) / 2.0;
    if size <= f64::MIN_POSITIVE {
        return Err(Error::invalid("face size is zero"));
    }
    Ok(size)
}

/// Row-normalized confusion matrix in percent (rows sum to 100). Classes
/// with no true examples are reported in `undefined_rows`.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: DMatrix<usize>,
    /// Percent rows; undefined rows hold zeros.
    pub percent: DMatrix<f64>,
    pub undefined_rows: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes.len()).map(|i| self.counts[(i, i)]).sum();
        let total: usize = self.counts.iter().sum();
        correct as f64 / total.max(1) as f64
    }
}

pub fn confusion_matrix(truth: &[String], predictions: &[String]) -> Result<ConfusionMatrix> {
    if truth.len() != predictions.len() || truth.is_empty() {
        return Err(Error::invalid("confusion matrix needs matching nonempty label lists"));
    }
    let classes: Vec<String> = truth
        .iter()
        .chain(predictions.iter())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx = |label: &String| classes.binary_search(label).expect("label in set");
    let c = classes.len();
    let mut counts = DMatrix::<usize>::zeros(c, c);
    for (t, p) in truth.iter().zip(predictions) {
        counts[(idx(t), idx(p))] += 1;
    }
    let mut percent = DMatrix::zeros(c, c);
    let mut undefined = Vec::new();
    for r in 0..c {
        let row_sum: usize = (0..c).map(|cc| counts[(r, cc)]).sum();
        if row_sum == 0 {
            undefined.push(r);
            continue;
        }
        for cc in 0..c {
            percent[(r, cc)] = 100.0 * counts[(r, cc)] as f64 / row_sum as f64;
        }
    }
    Ok(ConfusionMatrix { classes, counts, percent, undefined_rows: undefined })
}
