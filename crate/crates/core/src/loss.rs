//! Single- and multi-positive contrastive losses and their gradients.
//!
//! Both losses score a unit-norm query against unit-norm keys at a fixed
//! temperature. The single-positive form is the usual softmax
//! cross-entropy against one positive key:
//!
//! ```text
//! L1 = -ln( exp(q.p/t) / (exp(q.p/t) + sum_j exp(q.n_j/t)) )
//! ```
//!
//! The multi-positive form pools the positive mass instead of averaging
//! per-positive losses, which keeps it robust when some mined positives
//! are wrong:
//!
//! ```text
//! Lm = -ln( sum_p exp(q.p/t) / (sum_p exp(q.p/t) + sum_j exp(q.n_j/t)) )
//! ```
//!
//! With exactly one positive the two coincide. Exponentials are taken
//! relative to the max logit (or the positive logit in the single-positive
//! path), so adding a constant to every logit leaves the value unchanged
//! up to rounding, and the final value goes through ln_1p so near-zero
//! losses keep full relative precision.

use crate::error::{Error, Result};
use crate::feature::FeatureVec;

/// Validated loss input: one unit-norm query, at least one positive and
/// one negative key of the same dimension, temperature > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    query: FeatureVec,
    positives: Vec<FeatureVec>,
    negatives: Vec<FeatureVec>,
    temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(
        query: FeatureVec,
        positives: Vec<FeatureVec>,
        negatives: Vec<FeatureVec>,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be finite and > 0, got {temperature}"
            )));
        }
        if positives.is_empty() {
            return Err(Error::InvalidInput(
                "contrastive batch needs at least one positive".into(),
            ));
        }
        if negatives.is_empty() {
            return Err(Error::InvalidInput(
                "contrastive batch needs at least one negative".into(),
            ));
        }
        let dim = query.dim();
        let check = |feat: &FeatureVec, role: &str, idx: usize| -> Result<()> {
            if feat.dim() != dim {
                return Err(Error::DimMismatch {
                    context: format!("contrastive batch {role} {idx}"),
                    expected: dim,
                    got: feat.dim(),
                });
            }
            if !feat.is_unit_norm() {
                return Err(Error::NotUnitNorm {
                    context: format!("contrastive batch {role} {idx}"),
                    norm: feat.l2_norm(),
                });
            }
            Ok(())
        };
        for (i, p) in positives.iter().enumerate() {
            check(p, "positive", i)?;
        }
        for (i, n) in negatives.iter().enumerate() {
            check(n, "negative", i)?;
        }
        if !query.is_unit_norm() {
            return Err(Error::NotUnitNorm {
                context: "contrastive batch query".into(),
                norm: query.l2_norm(),
            });
        }
        Ok(ContrastiveBatch {
            query,
            positives,
            negatives,
            temperature,
        })
    }

    pub fn query(&self) -> &FeatureVec {
        &self.query
    }

    pub fn positives(&self) -> &[FeatureVec] {
        &self.positives
    }

    pub fn negatives(&self) -> &[FeatureVec] {
        &self.negatives
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Temperature-scaled similarity logits, (positives, negatives).
    pub fn logits(&self) -> (Vec<f64>, Vec<f64>) {
        let pos = self
            .positives
            .iter()
            .map(|p| self.query.dot(p) / self.temperature)
            .collect();
        let neg = self
            .negatives
            .iter()
            .map(|n| self.query.dot(n) / self.temperature)
            .collect();
        (pos, neg)
    }
}

fn max_logit(pos: &[f64], neg: &[f64]) -> f64 {
    pos.iter()
        .chain(neg.iter())
        .fold(f64::NEG_INFINITY, |m, &l| if l > m { l } else { m })
}

fn check_logits(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::InvalidInput("no positive logits".into()));
    }
    if neg.is_empty() {
        return Err(Error::InvalidInput("no negative logits".into()));
    }
    if pos.iter().chain(neg.iter()).any(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            context: "contrastive logits".into(),
        });
    }
    Ok(())
}

/// Multi-positive loss on raw logits, max-subtracted for stability. The
/// value is computed as ln_1p(sneg / spos), which is exact algebra on
/// -ln(spos / (spos + sneg)) but does not cancel when the loss is tiny.
pub fn nce_from_logits(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_logits(pos, neg)?;
    let m = max_logit(pos, neg);
    let spos: f64 = pos.iter().map(|l| (l - m).exp()).sum();
    let sneg: f64 = neg.iter().map(|l| (l - m).exp()).sum();
    let loss = (sneg / spos).ln_1p();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "contrastive loss".into(),
        });
    }
    Ok(loss)
}

/// Partial derivatives of `nce_from_logits` with respect to each logit,
/// returned as (positive grads, negative grads).
pub fn nce_grad_from_logits(pos: &[f64], neg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_logits(pos, neg)?;
    let m = max_logit(pos, neg);
    let epos: Vec<f64> = pos.iter().map(|l| (l - m).exp()).collect();
    let eneg: Vec<f64> = neg.iter().map(|l| (l - m).exp()).collect();
    let spos: f64 = epos.iter().sum();
    let total: f64 = spos + eneg.iter().sum::<f64>();
    if spos == 0.0 || !total.is_finite() {
        return Err(Error::NonFinite {
            context: "contrastive gradient".into(),
        });
    }
    let gpos = epos.iter().map(|e| e / total - e / spos).collect();
    let gneg = eneg.iter().map(|e| e / total).collect();
    Ok((gpos, gneg))
}

/// Single-positive contrastive loss. Exactly one positive is required;
/// this is a deliberately separate straight-line implementation so the
/// multi-positive path can be checked against it rather than through it.
pub fn info_nce(batch: &ContrastiveBatch) -> Result<f64> {
    if batch.positives.len() != 1 {
        return Err(Error::InvalidInput(format!(
            "single-positive loss needs exactly one positive, got {}",
            batch.positives.len()
        )));
    }
    // Shifting every exponent by the positive logit a gives
    // -ln(1 / (1 + sum_j e^(b_j - a))) = ln_1p(sum_j e^(b_j - a)),
    // stable for both tiny and large losses at the temperatures in use.
    let t = batch.temperature;
    let a = batch.query.dot(&batch.positives[0]) / t;
    let mut s = 0.0;
    for n in &batch.negatives {
        let b = batch.query.dot(n) / t;
        s += (b - a).exp();
    }
    let loss = s.ln_1p();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "contrastive loss".into(),
        });
    }
    Ok(loss)
}

/// Multi-positive contrastive loss over a batch.
pub fn mil_nce(batch: &ContrastiveBatch) -> Result<f64> {
    let (pos, neg) = batch.logits();
    nce_from_logits(&pos, &neg)
}

/// Analytic gradient of the multi-positive loss with respect to the
/// query's raw (pre-normalization) embedding, evaluated at the unit-norm
/// query. The chain rule through v / |v| at |v| = 1 is the projection
/// I - q q^T, so the returned vector is orthogonal to the query.
pub fn mil_nce_grad(batch: &ContrastiveBatch) -> Result<Vec<f64>> {
    let (pos, neg) = batch.logits();
    let (gpos, gneg) = nce_grad_from_logits(&pos, &neg)?;
    let dim = batch.query.dim();
    let t = batch.temperature;
    let mut raw = vec![0.0; dim];
    for (g, p) in gpos.iter().zip(batch.positives.iter()) {
        for (r, v) in raw.iter_mut().zip(p.values()) {
            *r += g * v / t;
        }
    }
    for (g, n) in gneg.iter().zip(batch.negatives.iter()) {
        for (r, v) in raw.iter_mut().zip(n.values()) {
            *r += g * v / t;
        }
    }
    let qv = batch.query.values();
    let along: f64 = raw.iter().zip(qv).map(|(r, q)| r * q).sum();
    Ok(raw
        .iter()
        .zip(qv)
        .map(|(r, q)| r - along * q)
        .collect())
}
