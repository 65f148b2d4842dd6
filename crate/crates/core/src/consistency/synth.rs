//! A synthetic world for exercising the whole pipeline without external
//! benchmarks.
//!
//! Each concept has two antonymous poles, each named by several synonymous
//! adjectives. Sentences read `the <noun> is [not] <adjective>`; a pair is
//! `equivalent` when both sentences say the same thing about the same noun.
//! The dictionary defines every adjective by its synonyms and by negated
//! antonyms, the general corpus only shows adjectives in sentence frames.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::suite::{ConsistencyCase, PredictionRecord, PredictionSet, Suite, SuiteInstance};
use crate::error::{Error, Result};
use crate::lexicon::{LexiconEntry, TrainingInstance};
use crate::model::Vocabulary;
use crate::training::{derive_seed, SynonymTable, TaskExample};

pub const LABELS: [&str; 2] = ["equivalent", "not_equivalent"];
pub const EQUIVALENT: usize = 0;
pub const NOT_EQUIVALENT: usize = 1;
pub const NEGATION: &str = "not";
const FRAME: [&str; 2] = ["the", "is"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub concepts: usize,
    pub synonyms_per_pole: usize,
    /// Synonyms per pole that may appear in task training and validation
    /// data; the suite draws from all of them.
    pub train_synonyms: usize,
    pub nouns: usize,
    pub corpus_sentences: usize,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub semantic: usize,
    pub negation: usize,
    pub symmetry: usize,
    pub transitive: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            concepts: 20,
            synonyms_per_pole: 5,
            train_synonyms: 3,
            nouns: 12,
            corpus_sentences: 2000,
            train_examples: 600,
            valid_examples: 200,
            semantic: 100,
            negation: 100,
            symmetry: 100,
            transitive: 100,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 || self.nouns == 0 || self.synonyms_per_pole < 2 {
            return Err(Error::invalid(
                "a world needs concepts, nouns and at least two synonyms per pole",
            ));
        }
        if self.train_synonyms == 0 || self.train_synonyms > self.synonyms_per_pole {
            return Err(Error::invalid("train_synonyms must be in 1..=synonyms_per_pole"));
        }
        if self.train_examples == 0 {
            return Err(Error::invalid("train_examples must be positive"));
        }
        Ok(())
    }

    /// Number of dictionary headwords.
    pub fn lexicon_size(&self) -> usize {
        self.concepts * 2 * self.synonyms_per_pole
    }
}

/// `(concept, pole, synonym index)` of every adjective, and the nouns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    adjectives: Vec<[Vec<String>; 2]>,
    nouns: Vec<String>,
    index: HashMap<String, (usize, usize)>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

/// One side of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Sentence {
    noun: usize,
    concept: usize,
    pole: usize,
    synonym: usize,
    negated: bool,
}

impl Sentence {
    fn meaning(&self) -> usize {
        self.pole ^ self.negated as usize
    }
}

impl World {
    pub fn generate(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut used: HashSet<String> = FRAME.iter().chain([&NEGATION]).map(|s| s.to_string()).collect();
        let mut fresh = |rng: &mut ChaCha8Rng| loop {
            let w = pseudo_word(rng);
            if used.insert(w.clone()) {
                return w;
            }
        };
        let nouns: Vec<String> = (0..spec.nouns).map(|_| fresh(&mut rng)).collect();
        let mut adjectives = Vec::with_capacity(spec.concepts);
        let mut index = HashMap::new();
        for c in 0..spec.concepts {
            let poles: [Vec<String>; 2] = std::array::from_fn(|p| {
                (0..spec.synonyms_per_pole)
                    .map(|_| {
                        let w = fresh(&mut rng);
                        index.insert(w.clone(), (c, p));
                        w
                    })
                    .collect()
            });
            adjectives.push(poles);
        }
        Ok(Self {
            adjectives,
            nouns,
            index,
        })
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    /// Words of `concept`'s `pole`.
    pub fn pole(&self, concept: usize, pole: usize) -> &[String] {
        &self.adjectives[concept][pole]
    }

    /// Every adjective is defined by its synonyms, `"<syn>; <syn>"`. Words of
    /// the second pole also get a negated-antonym sense, `"not <ant> or <ant>"`,
    /// the way "unhappy" is glossed as "not happy".
    pub fn lexicon(&self) -> Vec<LexiconEntry> {
        let mut out = Vec::new();
        for poles in &self.adjectives {
            for (p, words) in poles.iter().enumerate() {
                for w in words {
                    let synonyms: Vec<&str> = words.iter().filter(|s| *s != w).map(String::as_str).collect();
                    let mut definitions = vec![synonyms.join("; ")];
                    if p == 1 {
                        let antonyms: Vec<&str> = poles[0].iter().map(String::as_str).collect();
                        definitions.push(format!("{NEGATION} {}", antonyms.join(" or ")));
                    }
                    out.push(LexiconEntry {
                        headword: w.clone(),
                        definitions,
                    });
                }
            }
        }
        out
    }

    pub fn synonym_table(&self) -> Result<SynonymTable> {
        let mut map = BTreeMap::new();
        for poles in &self.adjectives {
            for words in poles {
                for w in words {
                    map.insert(w.clone(), words.iter().filter(|s| *s != w).cloned().collect());
                }
            }
        }
        SynonymTable::new(map)
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let adjectives = self.adjectives.iter().flatten().flatten();
        Vocabulary::build(
            FRAME
                .iter()
                .chain([&NEGATION])
                .map(|s| s.to_string())
                .chain(self.nouns.iter().cloned())
                .chain(adjectives.cloned()),
        )
    }

    fn tokens(&self, s: &Sentence) -> Vec<String> {
        let mut t = vec![FRAME[0].to_string(), self.nouns[s.noun].clone(), FRAME[1].to_string()];
        if s.negated {
            t.push(NEGATION.to_string());
        }
        t.push(self.adjectives[s.concept][s.pole][s.synonym].clone());
        t
    }

    fn parse(&self, tokens: &[String]) -> Option<(usize, usize, usize)> {
        let (noun, negated, adj) = match tokens {
            [the, n, is, adj] if the == FRAME[0] && is == FRAME[1] => (n, false, adj),
            [the, n, is, not, adj] if the == FRAME[0] && is == FRAME[1] && not == NEGATION => (n, true, adj),
            _ => return None,
        };
        let noun = self.nouns.iter().position(|x| x == noun)?;
        let &(concept, pole) = self.index.get(adj)?;
        Some((noun, concept, pole ^ negated as usize))
    }

    /// Gold label of a pair, or `None` when the sentences are not about the
    /// same noun and concept.
    pub fn judge(&self, a: &[String], b: &[String]) -> Option<usize> {
        let (na, ca, ma) = self.parse(a)?;
        let (nb, cb, mb) = self.parse(b)?;
        if na != nb || ca != cb {
            return None;
        }
        Some(if ma == mb { EQUIVALENT } else { NOT_EQUIVALENT })
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, noun: usize, concept: usize, synonyms: usize) -> Sentence {
        Sentence {
            noun,
            concept,
            pole: rng.random_range(0..2),
            synonym: rng.random_range(0..synonyms),
            negated: rng.random_bool(0.5),
        }
    }

    fn pair(&self, rng: &mut ChaCha8Rng, synonyms: usize) -> (Sentence, Sentence) {
        let noun = rng.random_range(0..self.nouns.len());
        let concept = rng.random_range(0..self.adjectives.len());
        let a = Sentence {
            negated: false,
            ..self.sentence(rng, noun, concept, synonyms)
        };
        (a, self.sentence(rng, noun, concept, synonyms))
    }

    fn example(&self, a: &Sentence, b: &Sentence) -> TaskExample {
        TaskExample {
            tokens_a: self.tokens(a),
            tokens_b: Some(self.tokens(b)),
            label: label_of(a, b),
        }
    }
}

fn label_of(a: &Sentence, b: &Sentence) -> usize {
    if a.meaning() == b.meaning() {
        EQUIVALENT
    } else {
        NOT_EQUIVALENT
    }
}

/// Everything one synthetic run needs.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub spec: SynthSpec,
    pub world: World,
    pub lexicon: Vec<LexiconEntry>,
    /// General masked-LM text: adjectives in sentence frames only.
    pub corpus: Vec<TrainingInstance>,
    pub train: Vec<TaskExample>,
    pub valid: Vec<TaskExample>,
    pub suite: Suite,
    pub synonyms: SynonymTable,
    pub vocab: Vocabulary,
}

struct SuiteBuilder<'w> {
    world: &'w World,
    instances: Vec<SuiteInstance>,
}

impl SuiteBuilder<'_> {
    fn add(&mut self, a: &Sentence, b: &Sentence) -> String {
        let id = format!("i{}", self.instances.len());
        let ex = self.world.example(a, b);
        self.instances.push(SuiteInstance {
            id: id.clone(),
            tokens_a: ex.tokens_a,
            tokens_b: ex.tokens_b,
            label: ex.label,
        });
        id
    }
}

/// Task data, a consistency suite and the world's resources, fully
/// determined by `spec`.
pub fn gen_synthetic_suite(spec: &SynthSpec) -> Result<SynthBundle> {
    let world = World::generate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let all = spec.synonyms_per_pole;

    let corpus = (0..spec.corpus_sentences)
        .map(|_| {
            let noun = rng.random_range(0..world.nouns.len());
            let concept = rng.random_range(0..world.adjectives.len());
            TrainingInstance {
                tokens: world.tokens(&world.sentence(&mut rng, noun, concept, all)),
            }
        })
        .collect();
    let task = |n: usize, rng: &mut ChaCha8Rng| -> Vec<TaskExample> {
        (0..n)
            .map(|_| {
                let (a, b) = world.pair(rng, spec.train_synonyms);
                world.example(&a, &b)
            })
            .collect()
    };
    let train = task(spec.train_examples, &mut rng);
    let valid = task(spec.valid_examples, &mut rng);

    let mut b = SuiteBuilder {
        world: &world,
        instances: Vec::new(),
    };
    let mut cases = Vec::new();
    let swap_synonym = |s: &Sentence, rng: &mut ChaCha8Rng| Sentence {
        synonym: (s.synonym + rng.random_range(1..all)) % all,
        ..*s
    };
    for _ in 0..spec.semantic {
        let (x, y) = world.pair(&mut rng, all);
        let (px, py) = (swap_synonym(&x, &mut rng), swap_synonym(&y, &mut rng));
        cases.push(ConsistencyCase::Semantic {
            original: b.add(&x, &y),
            paraphrase: b.add(&px, &py),
        });
    }
    for _ in 0..spec.negation {
        let (x, y) = world.pair(&mut rng, all);
        let y = Sentence { negated: false, ..y };
        let ny = Sentence { negated: true, ..y };
        cases.push(ConsistencyCase::Negation {
            original: b.add(&x, &y),
            negated: b.add(&x, &ny),
            applicable: [EQUIVALENT, NOT_EQUIVALENT].into(),
            label_map: [
                (EQUIVALENT, [NOT_EQUIVALENT].into()),
                (NOT_EQUIVALENT, [EQUIVALENT].into()),
            ]
            .into(),
        });
    }
    // Swapped and chained pairs put the second sentence first, so it stays
    // affirmative like every task premise.
    for _ in 0..spec.symmetry {
        let (x, y) = world.pair(&mut rng, all);
        let y = Sentence { negated: false, ..y };
        cases.push(ConsistencyCase::Symmetry {
            original: b.add(&x, &y),
            swapped: b.add(&y, &x),
            applicable: [EQUIVALENT].into(),
        });
    }
    for _ in 0..spec.transitive {
        let (x, y) = world.pair(&mut rng, all);
        let y = Sentence { negated: false, ..y };
        let z = world.sentence(&mut rng, x.noun, x.concept, all);
        cases.push(ConsistencyCase::Transitive {
            ab: b.add(&x, &y),
            bc: b.add(&y, &z),
            ac: b.add(&x, &z),
            r1: [EQUIVALENT].into(),
            r2: [EQUIVALENT].into(),
            r3: [EQUIVALENT].into(),
        });
    }
    let suite = Suite {
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
        instances: b.instances,
        cases,
    };
    suite.validate()?;
    Ok(SynthBundle {
        spec: *spec,
        lexicon: world.lexicon(),
        corpus,
        train,
        valid,
        synonyms: world.synonym_table()?,
        vocab: world.vocabulary(),
        suite,
        world,
    })
}

/// Predictions of the rule the world was generated from.
pub fn oracle_predictions(world: &World, suite: &Suite) -> Result<PredictionSet> {
    let records = suite
        .instances
        .iter()
        .map(|inst| {
            let b = inst
                .tokens_b
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("instance {} is not a pair", inst.id)))?;
            let label = world
                .judge(&inst.tokens_a, b)
                .ok_or_else(|| Error::invalid(format!("instance {} is outside the world", inst.id)))?;
            let mut distribution = vec![0.0; suite.labels.len()];
            distribution[label] = 1.0;
            Ok(PredictionRecord {
                id: inst.id.clone(),
                gold: inst.label,
                predicted: label,
                distribution: Some(distribution),
            })
        })
        .collect::<Result<_>>()?;
    PredictionSet::new(records)
}

/// Uniformly random labels, for calibration.
pub fn random_predictions(suite: &Suite, seed: u64) -> Result<PredictionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..suite.labels.len()).collect();
    PredictionSet::new(
        suite
            .instances
            .iter()
            .map(|inst| PredictionRecord {
                id: inst.id.clone(),
                gold: inst.label,
                predicted: *labels.choose(&mut rng).expect("labels"),
                distribution: None,
            })
            .collect(),
    )
}
