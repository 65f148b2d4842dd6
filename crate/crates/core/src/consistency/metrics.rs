//! Inconsistency rates. Conditional metrics count only cases the model
//! "believes": negation and symmetry require a correct original prediction
//! on an applicable gold label; transitivity requires both premise
//! predictions to fall in their premise sets.

use serde::{Deserialize, Serialize};

use super::suite::{ConsistencyCase, PredictionSet, Suite};
use crate::error::{Error, Result};

/// A percentage with its counts. `value` is `None` exactly when the
/// denominator is zero, and `marker` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    pub numerator: usize,
    pub denominator: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
}

impl Metric {
    pub fn from_counts(numerator: usize, denominator: usize, empty_reason: &str) -> Self {
        if denominator == 0 {
            Metric {
                value: None,
                numerator,
                denominator,
                marker: Some(format!("undefined: {empty_reason}")),
            }
        } else {
            Metric {
                value: Some(100.0 * numerator as f64 / denominator as f64),
                numerator,
                denominator,
                marker: None,
            }
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// Share of paraphrase pairs whose two predictions differ.
pub fn tau_semantic(cases: &[ConsistencyCase], preds: &PredictionSet) -> Result<Metric> {
    let (mut violations, mut total) = (0, 0);
    for case in cases {
        if let ConsistencyCase::Semantic { original, paraphrase } = case {
            total += 1;
            violations += (preds.require(original)?.predicted != preds.require(paraphrase)?.predicted) as usize;
        }
    }
    Ok(Metric::from_counts(violations, total, "no semantic pairs"))
}

/// Among pairs with an applicable gold label predicted correctly, the share
/// whose negated prediction falls outside the permitted set.
pub fn tau_negational(cases: &[ConsistencyCase], preds: &PredictionSet) -> Result<Metric> {
    let (mut violations, mut total) = (0, 0);
    for case in cases {
        if let ConsistencyCase::Negation {
            original,
            negated,
            applicable,
            label_map,
        } = case
        {
            let o = preds.require(original)?;
            let n = preds.require(negated)?;
            if !applicable.contains(&o.gold) || o.predicted != o.gold {
                continue;
            }
            total += 1;
            let permitted = label_map.get(&o.predicted);
            violations += !permitted.is_some_and(|s| s.contains(&n.predicted)) as usize;
        }
    }
    Ok(Metric::from_counts(
        violations,
        total,
        "no negation pair with an applicable, correctly predicted original",
    ))
}

/// Among pairs with an applicable gold label predicted correctly, the share
/// whose swapped prediction differs.
pub fn tau_symmetric(cases: &[ConsistencyCase], preds: &PredictionSet) -> Result<Metric> {
    let (mut violations, mut total) = (0, 0);
    for case in cases {
        if let ConsistencyCase::Symmetry {
            original,
            swapped,
            applicable,
        } = case
        {
            let o = preds.require(original)?;
            let s = preds.require(swapped)?;
            if !applicable.contains(&o.gold) || o.predicted != o.gold {
                continue;
            }
            total += 1;
            violations += (s.predicted != o.predicted) as usize;
        }
    }
    Ok(Metric::from_counts(
        violations,
        total,
        "no symmetry pair with an applicable, correctly predicted original",
    ))
}

/// Among triples whose premise predictions fall in `r1` and `r2`, the share
/// whose conclusion prediction falls outside `r3`. Gold labels play no part.
pub fn tau_transitive(cases: &[ConsistencyCase], preds: &PredictionSet) -> Result<Metric> {
    let (mut violations, mut total) = (0, 0);
    for case in cases {
        if let ConsistencyCase::Transitive { ab, bc, ac, r1, r2, r3 } = case {
            let (pab, pbc, pac) = (preds.require(ab)?, preds.require(bc)?, preds.require(ac)?);
            if !r1.contains(&pab.predicted) || !r2.contains(&pbc.predicted) {
                continue;
            }
            total += 1;
            violations += !r3.contains(&pac.predicted) as usize;
        }
    }
    Ok(Metric::from_counts(
        violations,
        total,
        "no transitive triple satisfies its premises",
    ))
}

/// Percentage of correct predictions.
pub fn accuracy(preds: &[crate::consistency::PredictionRecord]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("accuracy over zero predictions"));
    }
    let correct = preds.iter().filter(|p| p.predicted == p.gold).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

/// Every metric for one model on one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub seed: Option<u64>,
    pub accuracy: Metric,
    pub tau_sem: Metric,
    pub tau_neg: Metric,
    pub tau_sym: Metric,
    pub tau_trn: Metric,
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "tau_sem", "tau_neg", "tau_sym", "tau_trn"];

impl ConsistencyReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        match name {
            "accuracy" => Some(&self.accuracy),
            "tau_sem" => Some(&self.tau_sem),
            "tau_neg" => Some(&self.tau_neg),
            "tau_sym" => Some(&self.tau_sym),
            "tau_trn" => Some(&self.tau_trn),
            _ => None,
        }
    }
}

/// Scores `preds` on `suite`. Accuracy covers every suite instance.
pub fn evaluate(suite: &Suite, preds: &PredictionSet, seed: Option<u64>) -> Result<ConsistencyReport> {
    suite.validate()?;
    preds.check_against(suite)?;
    let correct = suite
        .instances
        .iter()
        .filter(|i| preds.get(&i.id).is_some_and(|p| p.predicted == i.label))
        .count();
    Ok(ConsistencyReport {
        seed,
        accuracy: Metric::from_counts(correct, suite.instances.len(), "empty suite"),
        tau_sem: tau_semantic(&suite.cases, preds)?,
        tau_neg: tau_negational(&suite.cases, preds)?,
        tau_sym: tau_symmetric(&suite.cases, preds)?,
        tau_trn: tau_transitive(&suite.cases, preds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::PredictionRecord;

    fn preds(rows: &[(&str, usize, usize)]) -> PredictionSet {
        PredictionSet::new(
            rows.iter()
                .map(|&(id, gold, predicted)| PredictionRecord {
                    id: id.into(),
                    gold,
                    predicted,
                    distribution: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn sem(a: &str, b: &str) -> ConsistencyCase {
        ConsistencyCase::Semantic {
            original: a.into(),
            paraphrase: b.into(),
        }
    }

    fn neg(a: &str, b: &str) -> ConsistencyCase {
        ConsistencyCase::Negation {
            original: a.into(),
            negated: b.into(),
            applicable: [0, 1].into(),
            label_map: [(0, [1].into()), (1, [0].into())].into(),
        }
    }

    fn sym(a: &str, b: &str) -> ConsistencyCase {
        ConsistencyCase::Symmetry {
            original: a.into(),
            swapped: b.into(),
            applicable: [0].into(),
        }
    }

    fn trn(ab: &str, bc: &str, ac: &str) -> ConsistencyCase {
        ConsistencyCase::Transitive {
            ab: ab.into(),
            bc: bc.into(),
            ac: ac.into(),
            r1: [0].into(),
            r2: [0].into(),
            r3: [0].into(),
        }
    }

    #[test]
    fn semantic_one_of_four() {
        let p = preds(&[("a", 0, 0), ("b", 0, 0), ("c", 1, 1), ("d", 1, 0)]);
        let cases = [sem("a", "b"), sem("a", "b"), sem("c", "d"), sem("b", "a")];
        let m = tau_semantic(&cases, &p).unwrap();
        assert_eq!(m.value, Some(25.0));
        assert_eq!((m.numerator, m.denominator), (1, 4));
    }

    #[test]
    fn negation_conditioning() {
        // x1 correct and flipped, x2 correct but not flipped, x3 wrong (excluded)
        let p = preds(&[
            ("x1", 0, 0),
            ("n1", 1, 1),
            ("x2", 1, 1),
            ("n2", 0, 1),
            ("x3", 0, 1),
            ("n3", 1, 1),
        ]);
        let cases = [neg("x1", "n1"), neg("x2", "n2"), neg("x3", "n3")];
        let m = tau_negational(&cases, &p).unwrap();
        assert_eq!(m.value, Some(50.0));
        assert_eq!(m.denominator, 2);
        let all_wrong = preds(&[("x1", 0, 1), ("n1", 1, 0)]);
        let m = tau_negational(&cases[..1], &all_wrong).unwrap();
        assert_eq!(m.value, None);
        assert!(m.marker.is_some());
    }

    #[test]
    fn symmetry_applicability() {
        let p = preds(&[("a", 1, 1), ("b", 1, 0), ("c", 0, 0), ("d", 0, 0)]);
        let m = tau_symmetric(&[sym("a", "b"), sym("c", "d")], &p).unwrap();
        assert_eq!((m.numerator, m.denominator), (0, 1));
    }

    #[test]
    fn transitive_vacuous_and_empty() {
        let p = preds(&[("ab", 0, 0), ("bc", 1, 0), ("ac", 1, 0)]);
        assert_eq!(tau_transitive(&[trn("ab", "bc", "ac")], &p).unwrap().value, Some(0.0));
        let p = preds(&[("ab", 0, 1), ("bc", 1, 0), ("ac", 1, 0)]);
        assert_eq!(tau_transitive(&[trn("ab", "bc", "ac")], &p).unwrap().value, None);
    }

    #[test]
    fn accuracy_counts() {
        let mut rows: Vec<(String, usize, usize)> = (0..10).map(|i| (format!("{i}"), 0, (i >= 7) as usize)).collect();
        rows.sort();
        let records: Vec<PredictionRecord> = rows
            .into_iter()
            .map(|(id, gold, predicted)| PredictionRecord { id, gold, predicted, distribution: None })
            .collect();
        assert_eq!(accuracy(&records).unwrap(), 70.0);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let p = preds(&[("a", 0, 0)]);
        assert!(tau_semantic(&[sem("a", "b")], &p).is_err());
    }
}
