//! Shared fixtures: random miniature suites and an exhaustive-count oracle
//! for the four inconsistency rates, written independently of the library.

#![allow(dead_code)]

pub mod grad;

use std::collections::{BTreeMap, BTreeSet};

use crm_core::consistency::{ConsistencyCase, PredictionRecord, PredictionSet, Suite, SuiteInstance};
use rand::seq::IndexedRandom;
use rand::Rng;

/// `(violations, denominator)` for semantic, negational, symmetric and
/// transitive consistency, in that order.
pub type Counts = [(usize, usize); 4];

fn random_set<R: Rng>(rng: &mut R, labels: usize) -> BTreeSet<usize> {
    (0..labels).filter(|_| rng.random_bool(0.5)).collect()
}

/// A suite of at most `max_cases` cases over 2–4 labels, with predictions.
/// With `shared`, cases draw their instances from a common pool (so one
/// instance can sit in several cases); otherwise every case gets fresh ones.
pub fn mini_suite<R: Rng>(rng: &mut R, max_cases: usize, shared: bool) -> (Suite, PredictionSet) {
    let labels = rng.random_range(2..=4);
    let pool = rng.random_range(3..=10);
    let mut instances: Vec<SuiteInstance> = Vec::new();
    let fresh = |rng: &mut R, instances: &mut Vec<SuiteInstance>| {
        let id = format!("x{}", instances.len());
        instances.push(SuiteInstance {
            id: id.clone(),
            tokens_a: vec!["w".into()],
            tokens_b: None,
            label: rng.random_range(0..labels),
        });
        id
    };
    if shared {
        for _ in 0..pool {
            fresh(rng, &mut instances);
        }
    }
    let pick = |rng: &mut R, k: usize, instances: &mut Vec<SuiteInstance>| -> Vec<String> {
        if shared {
            let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
            ids.choose_multiple(rng, k).cloned().collect()
        } else {
            (0..k).map(|_| fresh(rng, instances)).collect()
        }
    };
    let n_cases = rng.random_range(0..=max_cases);
    let mut cases = Vec::new();
    for _ in 0..n_cases {
        let case = match rng.random_range(0..4) {
            0 => {
                let ids = pick(rng, 2, &mut instances);
                ConsistencyCase::Semantic {
                    original: ids[0].clone(),
                    paraphrase: ids[1].clone(),
                }
            }
            1 => {
                let ids = pick(rng, 2, &mut instances);
                let mut label_map: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
                for l in 0..labels {
                    if rng.random_bool(0.8) {
                        label_map.insert(l, random_set(rng, labels));
                    }
                }
                ConsistencyCase::Negation {
                    original: ids[0].clone(),
                    negated: ids[1].clone(),
                    applicable: random_set(rng, labels),
                    label_map,
                }
            }
            2 => {
                let ids = pick(rng, 2, &mut instances);
                ConsistencyCase::Symmetry {
                    original: ids[0].clone(),
                    swapped: ids[1].clone(),
                    applicable: random_set(rng, labels),
                }
            }
            _ => {
                let ids = pick(rng, 3, &mut instances);
                ConsistencyCase::Transitive {
                    ab: ids[0].clone(),
                    bc: ids[1].clone(),
                    ac: ids[2].clone(),
                    r1: random_set(rng, labels),
                    r2: random_set(rng, labels),
                    r3: random_set(rng, labels),
                }
            }
        };
        cases.push(case);
    }
    if instances.is_empty() {
        fresh(rng, &mut instances);
    }
    let preds = PredictionSet::new(
        instances
            .iter()
            .map(|i| PredictionRecord {
                id: i.id.clone(),
                gold: i.label,
                predicted: rng.random_range(0..labels),
                distribution: None,
            })
            .collect(),
    )
    .unwrap();
    let suite = Suite {
        labels: (0..labels).map(|l| format!("l{l}")).collect(),
        instances,
        cases,
    };
    (suite, preds)
}

/// Enumerates every case, builds the full list of `(believed, violated)`
/// flags per metric from first principles, then counts.
pub fn oracle_counts(suite: &Suite, preds: &PredictionSet) -> Counts {
    let label = |id: &str| -> (usize, usize) {
        let r = preds.get(id).expect("prediction present");
        (r.gold, r.predicted)
    };
    let mut flags: [Vec<(bool, bool)>; 4] = Default::default();
    for case in &suite.cases {
        match case {
            ConsistencyCase::Semantic { original, paraphrase } => {
                let same = label(original).1 == label(paraphrase).1;
                flags[0].push((true, !same));
            }
            ConsistencyCase::Negation {
                original,
                negated,
                applicable,
                label_map,
            } => {
                let (gold, pred) = label(original);
                let believed = applicable.iter().any(|&a| a == gold) && pred == gold;
                let allowed: Vec<usize> = label_map
                    .iter()
                    .filter(|(k, _)| **k == pred)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                let violated = !allowed.contains(&label(negated).1);
                flags[1].push((believed, violated));
            }
            ConsistencyCase::Symmetry {
                original,
                swapped,
                applicable,
            } => {
                let (gold, pred) = label(original);
                let believed = applicable.iter().any(|&a| a == gold) && pred == gold;
                flags[2].push((believed, label(swapped).1 != pred));
            }
            ConsistencyCase::Transitive { ab, bc, ac, r1, r2, r3 } => {
                let believed = r1.iter().any(|&l| l == label(ab).1) && r2.iter().any(|&l| l == label(bc).1);
                let violated = !r3.iter().any(|&l| l == label(ac).1);
                flags[3].push((believed, violated));
            }
        }
    }
    let count = |f: &Vec<(bool, bool)>| {
        let believed: Vec<bool> = f.iter().filter(|(b, _)| *b).map(|(_, v)| *v).collect();
        (believed.iter().filter(|v| **v).count(), believed.len())
    };
    [count(&flags[0]), count(&flags[1]), count(&flags[2]), count(&flags[3])]
}
