//! Activation and loss kernels shared by the plain API and the gradient tape.

use super::matrix::Matrix;
use super::{NumericsError, Result};

/// Probabilities are clamped below at this value before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Entrywise logistic function, computed without overflow on large inputs.
pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Row-pair cosine similarity: `dot(a_i, b_i) / max(|a_i| * |b_i|, epsilon)`.
pub fn cosine_similarity(a: &Matrix, b: &Matrix, epsilon: f64) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "cosine_similarity",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut out = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let (ra, rb) = (a.row(r), b.row(r));
        let dot: f64 = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
        let na: f64 = ra.iter().map(|&x| x * x).sum::<f64>().sqrt();
        let nb: f64 = rb.iter().map(|&y| y * y).sum::<f64>().sqrt();
        out.push(dot / (na * nb).max(epsilon));
    }
    Ok(out)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(NumericsError::ShapeMismatch {
            op: "labels",
            detail: format!("{} labels for {} rows", labels.len(), rows),
        });
    }
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NumericsError::LabelOutOfRange {
                label,
                classes,
                row,
            });
        }
    }
    Ok(())
}

/// Mean negative log-softmax of the true class over all rows.
pub fn cross_entropy(pred_logits: &Matrix, labels: &[usize]) -> Result<f64> {
    cross_entropy_value_grad(pred_logits, labels).map(|(v, _)| v)
}

/// Cross entropy with its gradient in the logits.
pub(crate) fn cross_entropy_value_grad(
    pred_logits: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    check_labels(labels, pred_logits.rows(), pred_logits.cols())?;
    let n = pred_logits.rows();
    if n == 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "cross_entropy",
            detail: "empty batch".into(),
        });
    }
    let probs = softmax_rows(pred_logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        loss -= probs.get(r, label).max(PROB_CLAMP).ln();
        let row = grad.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

fn check_prob_rows(m: &Matrix, op: &'static str) -> Result<()> {
    let _ = op;
    for r in 0..m.rows() {
        let sum: f64 = m.row(r).iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NumericsError::NotNormalized { row: r, sum });
        }
    }
    Ok(())
}

/// Mean row-wise KL divergence `sum p * (log p - log q)` with both sides
/// clamped below at [`PROB_CLAMP`] before the logarithms.
pub fn kl_divergence(p: &Matrix, q: &Matrix) -> Result<f64> {
    kl_value_grads(p, q).map(|(v, _, _)| v)
}

/// KL divergence with gradients in both arguments.
pub(crate) fn kl_value_grads(p: &Matrix, q: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    if p.shape() != q.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "kl_divergence",
            detail: format!("{:?} vs {:?}", p.shape(), q.shape()),
        });
    }
    if p.rows() == 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "kl_divergence",
            detail: "empty batch".into(),
        });
    }
    check_prob_rows(p, "kl_divergence")?;
    check_prob_rows(q, "kl_divergence")?;
    let n = p.rows() as f64;
    let mut value = 0.0;
    let mut dp = Matrix::zeros(p.rows(), p.cols());
    let mut dq = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        for c in 0..p.cols() {
            let pv = p.get(r, c);
            let qv = q.get(r, c);
            let cp = pv.max(PROB_CLAMP);
            let cq = qv.max(PROB_CLAMP);
            let log_ratio = cp.ln() - cq.ln();
            value += cp * log_ratio;
            if pv > PROB_CLAMP {
                dp.set(r, c, (log_ratio + 1.0) / n);
            }
            if qv > PROB_CLAMP {
                dq.set(r, c, -(cp / cq) / n);
            }
        }
    }
    Ok((value / n, dp, dq))
}

/// Mean over present classes of the sorted-error Jaccard-loss extension.
///
/// For each class appearing in `labels`, the per-point error is
/// `|1[label==class] - prob[class]|`; errors are sorted in descending order and
/// dotted with the discrete Jaccard-loss increments of the growing
/// misprediction set.
pub fn lovasz_softmax(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    lovasz_value_grad(probs, labels).map(|(v, _)| v)
}

/// Lovász-softmax with its gradient in the probabilities.
///
/// The Jaccard increments are treated as constants of the sort order, so the
/// gradient is exact wherever the descending order is locally stable.
pub(crate) fn lovasz_value_grad(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(labels, probs.rows(), probs.cols())?;
    if probs.rows() == 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "lovasz_softmax",
            detail: "empty batch".into(),
        });
    }
    check_prob_rows(probs, "lovasz_softmax")?;
    let n = probs.rows();
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();

    let mut grad = Matrix::zeros(n, probs.cols());
    let mut total = 0.0;
    for &class in &present {
        let fg: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let errors: Vec<f64> = (0..n)
            .map(|i| {
                let p = probs.get(i, class);
                if fg[i] {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| errors[b].partial_cmp(&errors[a]).unwrap());

        let gt_count = fg.iter().filter(|&&f| f).count() as f64;
        let mut intersection = gt_count;
        let mut union = gt_count;
        let mut prev_jaccard = 0.0;
        let mut class_loss = 0.0;
        for &idx in &order {
            if fg[idx] {
                intersection -= 1.0;
            } else {
                union += 1.0;
            }
            let jaccard = 1.0 - intersection / union;
            let weight = jaccard - prev_jaccard;
            prev_jaccard = jaccard;
            class_loss += errors[idx] * weight;
            let sign = if fg[idx] { -1.0 } else { 1.0 };
            let g = grad.get(idx, class) + sign * weight;
            grad.set(idx, class, g);
        }
        total += class_loss;
    }
    let scale = 1.0 / present.len() as f64;
    Ok((total * scale, grad.map(|v| v * scale)))
}
