use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source of meaning-preserving rewrites. Must be a pure function of its
/// arguments.
pub trait Paraphraser {
    /// Rewrites roughly a `rate` share of `tokens`.
    fn paraphrase(&self, tokens: &[String], rate: f64, seed: u64) -> Result<Vec<String>>;
}

/// Token → alternatives. Self-references and duplicates are dropped, and
/// tokens left without alternatives are removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "BTreeMap<String, Vec<String>>")]
pub struct SynonymTable {
    map: BTreeMap<String, Vec<String>>,
}

impl From<SynonymTable> for BTreeMap<String, Vec<String>> {
    fn from(t: SynonymTable) -> Self {
        t.map
    }
}

impl<'de> Deserialize<'de> for SynonymTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, Vec<String>>::deserialize(d)?;
        SynonymTable::new(map).map_err(serde::de::Error::custom)
    }
}

impl SynonymTable {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (word, alts) in raw {
            let mut kept: Vec<String> = Vec::new();
            for a in alts {
                if a != word && !a.is_empty() && !kept.contains(&a) {
                    kept.push(a);
                }
            }
            if !kept.is_empty() {
                map.insert(word, kept);
            }
        }
        if map.is_empty() {
            return Err(Error::invalid("synonym table is empty"));
        }
        Ok(Self { map })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("synonym table", e.to_string()))
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Paraphraser for SynonymTable {
    fn paraphrase(&self, tokens: &[String], rate: f64, seed: u64) -> Result<Vec<String>> {
        paraphrase_substitute(tokens, rate, self, seed)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("substitution rate {rate} outside (0, 1)")))
    }
}

/// Replaces each token that has synonyms, independently with probability
/// `rate`, by one of them drawn uniformly. Other tokens are never touched.
pub fn paraphrase_substitute(
    tokens: &[String],
    rate: f64,
    table: &SynonymTable,
    seed: u64,
) -> Result<Vec<String>> {
    check_rate(rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(tokens
        .iter()
        .map(|t| match table.synonyms(t) {
            Some(alts) if rng.random::<f64>() < rate => alts[rng.random_range(0..alts.len())].clone(),
            _ => t.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SynonymTable {
        let mut raw = BTreeMap::new();
        raw.insert("happy".to_string(), vec!["glad".to_string(), "happy".to_string()]);
        raw.insert("lonely".to_string(), vec![]);
        SynonymTable::new(raw).unwrap()
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn self_references_and_empty_lists_dropped() {
        let t = table();
        assert_eq!(t.synonyms("happy").unwrap(), ["glad"]);
        assert!(t.synonyms("lonely").is_none());
        assert!(SynonymTable::new(BTreeMap::new()).is_err());
        assert!(SynonymTable::from_json("{\"a\":[]}").is_err());
    }

    #[test]
    fn ineligible_tokens_never_change() {
        let t = table();
        let input = words("the cat is lonely");
        for seed in 0..50 {
            assert_eq!(paraphrase_substitute(&input, 0.99, &t, seed).unwrap(), input);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let t = table();
        let input = words("happy happy happy happy happy happy");
        let a = paraphrase_substitute(&input, 0.5, &t, 4).unwrap();
        assert_eq!(a, paraphrase_substitute(&input, 0.5, &t, 4).unwrap());
        assert!(a.iter().all(|w| w == "happy" || w == "glad"));
        assert!(paraphrase_substitute(&input, 1.0, &t, 4).is_err());
    }
}
