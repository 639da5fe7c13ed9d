//! Central finite-difference verification of analytic gradients.

use super::{NumericsError, Result};

/// Per-parameter-block maximum relative error between analytic gradients and
/// central finite differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradReport {
    /// Largest relative error across all blocks.
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().fold(0.0, |m, (_, e)| m.max(*e))
    }

    /// True if every block stayed below the tolerance.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Compare `analytic` against central differences of `loss` at `theta`.
///
/// The relative error per coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Central differences cannot resolve
/// slopes below the cancellation floor `eps * |loss| / (2 * step)`, so
/// disagreements within a small multiple of that floor count as exact
/// agreement. `blocks` names contiguous spans of `theta` for reporting;
/// when empty, a single block covers everything.
pub fn grad_check<F>(
    mut loss: F,
    theta: &[f64],
    analytic: &[f64],
    step: f64,
    blocks: &[(String, usize)],
) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(NumericsError::InvalidArgument {
            op: "grad_check",
            detail: format!("step {} must be positive", step),
        });
    }
    if theta.len() != analytic.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "grad_check",
            detail: format!(
                "{} parameters but {} analytic gradients",
                theta.len(),
                analytic.len()
            ),
        });
    }
    let owned_blocks;
    let blocks = if blocks.is_empty() {
        owned_blocks = vec![("params".to_string(), theta.len())];
        &owned_blocks
    } else {
        blocks
    };
    let total: usize = blocks.iter().map(|(_, len)| len).sum();
    if total != theta.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "grad_check",
            detail: format!("blocks cover {} of {} parameters", total, theta.len()),
        });
    }

    let mut work = theta.to_vec();
    let mut per_param = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for (name, len) in blocks {
        let mut worst: f64 = 0.0;
        for i in offset..offset + len {
            let saved = work[i];
            work[i] = saved + step;
            let plus = loss(&work)?;
            work[i] = saved - step;
            let minus = loss(&work)?;
            work[i] = saved;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite { op: "grad_check" });
            }
            let numeric = (plus - minus) / (2.0 * step);
            let noise_floor =
                16.0 * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * step);
            if (analytic[i] - numeric).abs() <= noise_floor {
                continue;
            }
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        per_param.push((name.clone(), worst));
        offset += len;
    }
    Ok(GradReport { per_param })
}
