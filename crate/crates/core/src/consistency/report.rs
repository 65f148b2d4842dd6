use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{ConsistencyReport, METRIC_NAMES};
use super::welch::{welch_t_test, WelchResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Mean over runs where the metric is defined.
    pub mean: Option<f64>,
    pub defined_runs: usize,
}

/// Welch statistics of this report set against a baseline set, or why they
/// could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welch: Option<WelchResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
}

/// One or more runs on the same suite, summarized per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub runs: Vec<ConsistencyReport>,
    pub summary: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub welch: BTreeMap<String, Comparison>,
}

/// Defined values of `metric` across `runs`.
pub fn metric_values(runs: &[ConsistencyReport], metric: &str) -> Vec<f64> {
    runs.iter()
        .filter_map(|r| r.metric(metric).and_then(|m| m.value))
        .collect()
}

impl EvalReport {
    pub fn new(runs: Vec<ConsistencyReport>) -> Self {
        let summary = METRIC_NAMES
            .iter()
            .map(|&name| {
                let values = metric_values(&runs, name);
                let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
                (
                    name.to_string(),
                    MetricSummary {
                        mean,
                        defined_runs: values.len(),
                    },
                )
            })
            .collect();
        Self {
            runs,
            summary,
            welch: BTreeMap::new(),
        }
    }

    /// Fills `welch` with this set (sample a) against `baseline` (sample b).
    pub fn compare_with(&mut self, baseline: &[ConsistencyReport]) {
        for &name in &METRIC_NAMES {
            let a = metric_values(&self.runs, name);
            let b = metric_values(baseline, name);
            let comparison = match welch_t_test(&a, &b) {
                Ok(w) => Comparison {
                    welch: Some(w),
                    marker: None,
                },
                Err(e) => Comparison {
                    welch: None,
                    marker: Some(format!("not computed: {e}")),
                },
            };
            self.welch.insert(name.to_string(), comparison);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("report", e.to_string()))
    }
}
