use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labelled example: a single segment or a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskExample {
    pub tokens_a: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_b: Option<Vec<String>>,
    pub label: usize,
}

/// Line-delimited JSON task data; blank lines are skipped.
pub fn parse_task_data_str(text: &str) -> Result<Vec<TaskExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: TaskExample = serde_json::from_str(line)
            .map_err(|e| Error::parse("task data", format!("line {}: {e}", i + 1)))?;
        if ex.tokens_a.is_empty() {
            return Err(Error::parse(
                "task data",
                format!("line {}: tokens_a is empty", i + 1),
            ));
        }
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::parse("task data", "no examples"));
    }
    Ok(out)
}

pub fn parse_task_data_bytes(bytes: &[u8]) -> Result<Vec<TaskExample>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse("task data", format!("not UTF-8: {e}")))?;
    parse_task_data_str(text)
}

pub fn write_task_data(examples: &[TaskExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("examples serialize"));
        out.push('\n');
    }
    out
}
