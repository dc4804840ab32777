//! JSONL dataset ingestion with per-task prompt templates.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generation task type; selects the prompt template and the quality metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Summarization,
    Qa,
    Translation,
    Freeform,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Summarization => "summarization",
            Task::Qa => "qa",
            Task::Translation => "translation",
            Task::Freeform => "freeform",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summarization" => Ok(Task::Summarization),
            "qa" => Ok(Task::Qa),
            "translation" => Ok(Task::Translation),
            "freeform" => Ok(Task::Freeform),
            other => Err(format!(
                "unknown task '{other}' (expected summarization|qa|translation|freeform)"
            )),
        }
    }
}

/// One evaluation instance, template already applied to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub input: String,
    pub reference: String,
    pub task: Task,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: field '{field}' must be non-empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("dataset contains no records")]
    Empty,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    input: String,
    reference: String,
}

/// Prompt templates applied at load time, one per task.
fn apply_template(input: &str, task: Task) -> String {
    match task {
        Task::Summarization => format!("{input}\n"),
        Task::Qa => format!("\n\nQ: {input}\nA: "),
        Task::Translation => format!("{input}\nTranslate English to Chinese:\n"),
        Task::Freeform => input.to_owned(),
    }
}

/// Parses JSONL text: one record per line with `id`, `input` and `reference`
/// fields. Blank lines are skipped; anything else malformed fails with its
/// 1-based line number.
pub fn parse_dataset(text: &str, task: Task) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.id.trim().is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "id",
            });
        }
        if raw.input.trim().is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "input",
            });
        }
        if raw.reference.trim().is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "reference",
            });
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        records.push(DatasetRecord {
            id: raw.id,
            input: apply_template(&raw.input, task),
            reference: raw.reference,
            task,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(records)
}

/// Reads and parses a JSONL dataset file.
pub fn load_dataset(path: &Path, task: Task) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, task)
}
