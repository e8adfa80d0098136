//! Verify-before-aggregate: every upload is added alone to the current
//! global model and the resulting temporary model is scored on the
//! auxiliary set. Uploads that cost more than the threshold in accuracy,
//! or that copy a recent global increment, are discarded.

use super::{DefenseConfig, Verdict, VerdictLabel};
use crate::data::LabeledDataset;
use crate::error::Result;
use crate::federation::{evaluate, mean_delta, GlobalModel, ModelUpdate};
use crate::nn::{MlpSpec, ParamVector};
use crate::par;

/// Cosine of the angle between two vectors; `None` if either has zero norm.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<Option<f64>> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some(a.dot(b)? / (na * nb)))
}

/// True when `update` is nearly parallel to any stored global increment.
pub fn vba_lazy_check<'a>(
    update: &ParamVector,
    history: impl IntoIterator<Item = &'a ParamVector>,
    cosine_threshold: f64,
) -> Result<bool> {
    for inc in history {
        if let Some(c) = cosine_similarity(update, inc)? {
            if c > cosine_threshold {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// One verdict per update, in input order. Compares against
/// `global.last_accuracy`, which must be current for `auxiliary`.
pub fn vba_verify(
    global: &GlobalModel,
    updates: &[ModelUpdate],
    auxiliary: &LabeledDataset,
    spec: &MlpSpec,
    config: &DefenseConfig,
) -> Result<Vec<Verdict>> {
    let results = par::map(updates, |u| -> Result<Verdict> {
        let temp = global.params.add(&u.delta)?;
        let temp_accuracy = evaluate(&temp, spec, auxiliary)?;
        let accuracy_drop = global.last_accuracy - temp_accuracy;
        let lazy = config.lazy_check
            && vba_lazy_check(&u.delta, &global.increment_history, config.lazy_cosine_threshold)?;
        let label = if lazy {
            VerdictLabel::Lazy
        } else if accuracy_drop <= config.vba_threshold {
            VerdictLabel::Benign
        } else {
            VerdictLabel::Poisoned
        };
        Ok(Verdict {
            ed_id: u.ed_id,
            label,
            temp_accuracy,
            accuracy_drop,
        })
    });
    results.into_iter().collect()
}

/// Mean-aggregates the updates labelled benign. With none, parameters stay
/// put and only the round advances.
pub fn vba_aggregate(global: &GlobalModel, updates: &[ModelUpdate], verdicts: &[Verdict]) -> Result<GlobalModel> {
    if verdicts.len() != updates.len() {
        return Err(crate::Error::Consistency(format!(
            "{} verdicts for {} updates",
            verdicts.len(),
            updates.len()
        )));
    }
    let benign: Vec<&ModelUpdate> = updates
        .iter()
        .zip(verdicts)
        .filter(|(u, v)| v.label == VerdictLabel::Benign && v.ed_id == u.ed_id)
        .map(|(u, _)| u)
        .collect();
    global.advance(mean_delta(&benign)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerShape, ShapeMap};
    use std::sync::Arc;

    fn v(values: &[f64]) -> ParamVector {
        let shape = Arc::new(ShapeMap::new(vec![LayerShape::new("x", &[values.len()])]));
        ParamVector::from_values(shape, values.to_vec()).unwrap()
    }

    #[test]
    fn lazy_copies_are_caught() {
        let inc = v(&[1.0, 2.0, 0.0]);
        let hist = vec![v(&[0.0, 0.0, 5.0]), inc.clone()];
        assert!(vba_lazy_check(&inc, &hist, 0.99).unwrap());
        assert!(!vba_lazy_check(&v(&[2.0, -1.0, 0.0]), &[inc.clone()], 0.99).unwrap());
        assert!(!vba_lazy_check(&v(&[0.0, 0.0, 0.0]), &hist, 0.99).unwrap());
        assert!(!vba_lazy_check(&inc, &[v(&[0.0; 3])], 0.99).unwrap());
    }

    #[test]
    fn constructed_cosines() {
        // u = a*e1 + b*e2 against increment e1 has cosine a / sqrt(a^2 + b^2)
        let inc = v(&[1.0, 0.0]);
        let with_cos = |c: f64| v(&[0.97 * c, 0.97 * (1.0 - c * c).sqrt()]);
        assert!(vba_lazy_check(&with_cos(0.995), &[inc.clone()], 0.99).unwrap());
        assert!(!vba_lazy_check(&with_cos(0.95), &[inc], 0.99).unwrap());
    }

    #[test]
    fn mismatched_verdicts_are_rejected() {
        let g = GlobalModel::new(v(&[0.0]));
        let u = vec![ModelUpdate {
            ed_id: 0,
            round: 0,
            delta: v(&[1.0]),
            fee: 0.3,
        }];
        assert!(vba_aggregate(&g, &u, &[]).is_err());
    }
}
