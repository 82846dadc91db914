//! Evaluation metrics and the KL divergence shared by the loss terms.

use crate::error::{OddaError, Result};

/// Clamp applied inside every logarithm so zero probabilities stay finite.
pub const LOG_EPS: f64 = 1e-12;

/// Tolerance for treating a probability vector as normalized.
pub const NORM_TOL: f64 = 1e-6;

/// Per-class F1 scores. A class with no true and no predicted instances
/// scores 0 (conservative for few-shot splits).
pub fn per_class_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if preds.len() != golds.len() {
        return Err(OddaError::Data(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(OddaError::Data(format!(
                "class index out of range: pred {p}, gold {g}, num_classes {num_classes}"
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    let f1 = per_class_f1(preds, golds, num_classes)?;
    Ok(f1.iter().sum::<f64>() / num_classes as f64)
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(OddaError::Data(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(OddaError::Data("cannot score an empty prediction list".into()));
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / preds.len() as f64)
}

fn check_normalized(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(OddaError::Numeric(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(OddaError::Numeric(format!("{name} sums to {sum}, not normalized")));
    }
    Ok(())
}

/// KL(p || q) = sum_y p_y ln(p_y / max(q_y, eps)), natural log, with p_y = 0
/// terms contributing zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(OddaError::Numeric(format!(
            "distribution length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_normalized("p", p)?;
    check_normalized("q", q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            total += pi * (pi / qi.max(LOG_EPS)).ln();
        }
    }
    Ok(total)
}
