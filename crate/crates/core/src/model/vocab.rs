use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const CLS: u32 = 3;
pub const SEP: u32 = 4;

/// Surface forms of the reserved tokens, in id order.
pub const RESERVED: [&str; 5] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"];

/// Number of reserved ids; content tokens start here.
pub const FIRST_CONTENT_ID: u32 = RESERVED.len() as u32;

/// Word-level tokenizer: lowercase, split on whitespace, strip leading and
/// trailing non-alphanumeric characters, drop what is left empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn is_special(id: u32) -> bool {
    id < FIRST_CONTENT_ID
}

/// Token ↔ id bijection with reserved ids 0–4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_id_order(tokens).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    /// Reserved tokens followed by the distinct content tokens in sorted order.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let content: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        let all = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(content)
            .collect();
        Self::from_id_order(all).expect("constructed vocabulary is a bijection")
    }

    /// Rebuilds a vocabulary from its id-ordered token list, checking the
    /// reserved prefix and uniqueness.
    pub fn from_id_order(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(Error::parse(
                "vocabulary",
                "reserved tokens missing or out of place",
            ));
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::parse("vocabulary", "too many tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::parse("vocabulary", format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::parse("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS] tokens… [SEP]`, truncated so the whole sequence fits in
    /// `max_len`. `max_len` must be at least 2.
    pub fn encode<S: AsRef<str>>(&self, text: &[S], max_len: usize) -> Vec<u32> {
        assert!(max_len >= 2, "max_len must leave room for CLS and SEP");
        let room = max_len - 2;
        let mut ids = Vec::with_capacity(text.len().min(room) + 2);
        ids.push(CLS);
        ids.extend(text.iter().take(room).map(|t| self.id_or_unk(t.as_ref())));
        ids.push(SEP);
        ids
    }

    /// `[CLS] a… [SEP] b… [SEP]`. When too long, tokens are dropped from the
    /// end of whichever segment is currently longer.
    pub fn encode_pair<S: AsRef<str>>(&self, a: &[S], b: &[S], max_len: usize) -> Vec<u32> {
        assert!(max_len >= 3, "max_len must leave room for CLS and two SEP");
        let room = max_len - 3;
        let (mut la, mut lb) = (a.len(), b.len());
        while la + lb > room {
            if la >= lb {
                la -= 1;
            } else {
                lb -= 1;
            }
        }
        let mut ids = Vec::with_capacity(la + lb + 3);
        ids.push(CLS);
        ids.extend(a[..la].iter().map(|t| self.id_or_unk(t.as_ref())));
        ids.push(SEP);
        ids.extend(b[..lb].iter().map(|t| self.id_or_unk(t.as_ref())));
        ids.push(SEP);
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["sad", "happy", "not", "happy"])
    }

    #[test]
    fn tokenizer_strips_punctuation_and_case() {
        assert_eq!(
            tokenize("Not happy; sad.  (really)"),
            vec!["not", "happy", "sad", "really"]
        );
        assert_eq!(tokenize(" -- "), Vec::<String>::new());
        assert_eq!(tokenize("행복하지 않은"), vec!["행복하지", "않은"]);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = vocab();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i as u32));
        }
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("happy"), Some(5));
    }

    #[test]
    fn encode_edge_cases() {
        let v = vocab();
        assert_eq!(v.encode::<&str>(&[], 8), vec![CLS, SEP]);
        assert_eq!(v.encode(&["zzz", "qqq"], 8), vec![CLS, UNK, UNK, SEP]);
        let long = ["happy"; 10];
        let ids = v.encode(&long, 5);
        assert_eq!(ids.len(), 5);
        assert_eq!(*ids.last().unwrap(), SEP);
    }

    #[test]
    fn pair_truncation_keeps_both_separators() {
        let v = vocab();
        let ids = v.encode_pair(&["happy"; 6], &["sad"; 2], 7);
        assert_eq!(ids.len(), 7);
        assert_eq!(ids.iter().filter(|&&i| i == SEP).count(), 2);
    }

    #[test]
    fn bijection_round_trips() {
        let v = vocab();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
            assert_eq!(v.token(i as u32), Some(t.as_str()));
        }
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn rejects_bad_id_order() {
        assert!(Vocabulary::from_id_order(vec!["a".into()]).is_err());
        let mut toks: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        toks.push("x".into());
        toks.push("x".into());
        assert!(Vocabulary::from_id_order(toks).is_err());
    }
}
