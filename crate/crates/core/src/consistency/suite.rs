//! Suite and prediction records and their line-delimited JSON forms.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LabelSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteInstance {
    pub id: String,
    pub tokens_a: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_b: Option<Vec<String>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConsistencyCase {
    Semantic {
        original: String,
        paraphrase: String,
    },
    Negation {
        original: String,
        negated: String,
        applicable: LabelSet,
        /// Permitted labels of the negated input, keyed by the original's label.
        label_map: BTreeMap<usize, LabelSet>,
    },
    Symmetry {
        original: String,
        swapped: String,
        applicable: LabelSet,
    },
    Transitive {
        ab: String,
        bc: String,
        ac: String,
        r1: LabelSet,
        r2: LabelSet,
        r3: LabelSet,
    },
}

impl ConsistencyCase {
    pub fn ids(&self) -> Vec<&str> {
        match self {
            ConsistencyCase::Semantic { original, paraphrase } => vec![original, paraphrase],
            ConsistencyCase::Negation { original, negated, .. } => vec![original, negated],
            ConsistencyCase::Symmetry { original, swapped, .. } => vec![original, swapped],
            ConsistencyCase::Transitive { ab, bc, ac, .. } => vec![ab, bc, ac],
        }
    }

    fn label_sets(&self) -> Vec<&LabelSet> {
        match self {
            ConsistencyCase::Semantic { .. } => vec![],
            ConsistencyCase::Negation {
                applicable,
                label_map,
                ..
            } => std::iter::once(applicable).chain(label_map.values()).collect(),
            ConsistencyCase::Symmetry { applicable, .. } => vec![applicable],
            ConsistencyCase::Transitive { r1, r2, r3, .. } => vec![r1, r2, r3],
        }
    }

    fn labels_mentioned(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.label_sets().into_iter().flatten().copied().collect();
        if let ConsistencyCase::Negation { label_map, .. } = self {
            out.extend(label_map.keys().copied());
        }
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    labels: Vec<String>,
}

/// On disk a case is flat, `{"record":"case","kind":"negation",...}`; in
/// memory serde sees the externally tagged `{"negation":{...}}`, which keeps
/// integer map keys and unknown-field checks working.
fn case_line(case: &ConsistencyCase) -> String {
    // `{"<kind>":{<fields>}}` → `{"record":"case","kind":"<kind>",<fields>}`
    let tagged = serde_json::to_string(case).expect("cases serialize");
    let colon = tagged.find(':').expect("externally tagged");
    let kind = &tagged[1..colon];
    let fields = &tagged[colon + 2..tagged.len() - 2];
    format!("{{\"record\":\"case\",\"kind\":{kind},{fields}}}")
}

fn case_from_value(mut value: serde_json::Value) -> std::result::Result<ConsistencyCase, String> {
    let obj = value.as_object_mut().ok_or("case is not an object")?;
    let kind = obj.remove("kind").ok_or("case without kind")?;
    let kind = kind.as_str().ok_or("kind is not a string")?.to_string();
    let mut tagged = serde_json::Map::new();
    tagged.insert(kind, value);
    serde_json::from_value(tagged.into()).map_err(|e| e.to_string())
}

/// Splits off the `record` tag, then reads the rest strictly.
fn parse_record(line: &str) -> std::result::Result<SuiteRecord, String> {
    let mut value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tag = value
        .as_object_mut()
        .ok_or("record is not an object")?
        .remove("record")
        .ok_or("missing record tag")?;
    let err = |e: serde_json::Error| e.to_string();
    match tag.as_str() {
        Some("header") => Ok(SuiteRecord::Header {
            labels: serde_json::from_value::<Header>(value).map_err(err)?.labels,
        }),
        Some("instance") => Ok(SuiteRecord::Instance(serde_json::from_value(value).map_err(err)?)),
        Some("case") => Ok(SuiteRecord::Case(case_from_value(value)?)),
        _ => Err(format!("unknown record tag {tag}")),
    }
}

/// Instances, their consistency cases, and the label alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suite {
    pub labels: Vec<String>,
    pub instances: Vec<SuiteInstance>,
    pub cases: Vec<ConsistencyCase>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SuiteRecord {
    Header { labels: Vec<String> },
    Instance(SuiteInstance),
    Case(ConsistencyCase),
}

impl Suite {
    /// Checks ids, label ranges and case links.
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::parse("suite", d));
        if self.labels.len() < 2 {
            return bad("a suite needs at least two labels".into());
        }
        let n = self.labels.len();
        let mut ids = HashSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id.as_str()) {
                return bad(format!("duplicate instance id {}", inst.id));
            }
            if inst.label >= n {
                return bad(format!("instance {} has label {} of {n}", inst.id, inst.label));
            }
        }
        for (i, case) in self.cases.iter().enumerate() {
            let linked = case.ids();
            let distinct: HashSet<&str> = linked.iter().copied().collect();
            if distinct.len() != linked.len() {
                return bad(format!("case {i} links an instance twice"));
            }
            if let Some(missing) = linked.iter().find(|id| !ids.contains(*id)) {
                return bad(format!("case {i} links unknown instance {missing}"));
            }
            if case.labels_mentioned().iter().any(|&l| l >= n) {
                return bad(format!("case {i} mentions a label outside the alphabet"));
            }
        }
        Ok(())
    }

    pub fn instance(&self, id: &str) -> Option<&SuiteInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: &SuiteRecord| {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        };
        push(&SuiteRecord::Header {
            labels: self.labels.clone(),
        });
        for inst in &self.instances {
            push(&SuiteRecord::Instance(inst.clone()));
        }
        for case in &self.cases {
            out.push_str(&case_line(case));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut labels = None;
        let mut instances = Vec::new();
        let mut cases = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_record(line)
                .map_err(|e| Error::parse("suite", format!("line {}: {e}", i + 1)))?;
            match record {
                SuiteRecord::Header { labels: l } => {
                    if labels.replace(l).is_some() {
                        return Err(Error::parse("suite", format!("line {}: second header", i + 1)));
                    }
                }
                SuiteRecord::Instance(inst) => instances.push(inst),
                SuiteRecord::Case(case) => cases.push(case),
            }
        }
        let labels = labels.ok_or_else(|| Error::parse("suite", "missing header record"))?;
        let suite = Suite {
            labels,
            instances,
            cases,
        };
        suite.validate()?;
        Ok(suite)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| Error::parse("suite", format!("not UTF-8: {e}")))?;
        Self::from_jsonl(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: usize,
    pub predicted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<f64>>,
}

impl PredictionRecord {
    fn validate(&self, num_labels: Option<usize>) -> Result<()> {
        let bad = |d: String| Err(Error::parse("predictions", format!("{}: {d}", self.id)));
        if let Some(n) = num_labels {
            if self.predicted >= n || self.gold >= n {
                return bad(format!("label outside {n} classes"));
            }
        }
        if let Some(dist) = &self.distribution {
            if num_labels.is_some_and(|n| dist.len() != n) || dist.len() <= self.predicted {
                return bad("distribution length does not match the label alphabet".into());
            }
            let sum: f64 = dist.iter().sum();
            if dist.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                return bad(format!("distribution is not normalized (sum {sum})"));
            }
        }
        Ok(())
    }
}

/// Predictions keyed by instance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
    index: HashMap<String, usize>,
}

impl PredictionSet {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(None)?;
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::parse("predictions", format!("duplicate id {}", r.id)));
            }
        }
        Ok(Self { records, index })
    }

    pub fn get(&self, id: &str) -> Option<&PredictionRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn require(&self, id: &str) -> Result<&PredictionRecord> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("no prediction for instance {id}")))
    }

    /// Every suite instance has a prediction whose gold label agrees and whose
    /// labels fit the alphabet.
    pub fn check_against(&self, suite: &Suite) -> Result<()> {
        for inst in &suite.instances {
            let p = self.require(&inst.id)?;
            p.validate(Some(suite.labels.len()))?;
            if p.gold != inst.label {
                return Err(Error::Incompatible(format!(
                    "prediction for {} carries gold {}, suite says {}",
                    inst.id, p.gold, inst.label
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: PredictionRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse("predictions", format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::parse("predictions", format!("not UTF-8: {e}")))?;
        Self::from_jsonl(text)
    }
}
