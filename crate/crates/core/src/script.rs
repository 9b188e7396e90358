//! Timed command and disturbance scripts (JSONL).
//!
//! The first line is a header naming the view to print and the last second
//! to simulate; each further line schedules one action at a sim time.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::FunctionCall;
use crate::dataset::Category;
use crate::event::{ClockTime, Subscription};
use crate::sim::Disturbance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptAction {
    /// A manual function call, as a human operator would issue it.
    Invoke {
        module: String,
        call: FunctionCall,
        /// Curated reason recorded with the command.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<Category>,
    },
    /// A task handed to a module on the manager's behalf.
    AssignTask {
        module: String,
        task: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<Category>,
    },
    /// A natural-language request from the user to the manager.
    UserTask { text: String },
    Inject { disturbance: Disturbance },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at: u64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptHeader {
    pub record: String,
    /// Events printed by a replay; everything when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<Subscription>,
    /// Last sim second to process.
    pub until: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<ClockTime>,
    /// Task description used when the script is recorded into a suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub header: ScriptHeader,
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("script is empty; expected a header line")]
    MissingHeader,
}

impl Script {
    pub fn parse(input: impl BufRead) -> Result<Self, ScriptError> {
        let mut header = None;
        let mut entries: Vec<ScriptEntry> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let at_line = |message: String| ScriptError::Line {
                line: idx + 1,
                message,
            };
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: ScriptHeader =
                    serde_json::from_str(&line).map_err(|e| at_line(e.to_string()))?;
                if h.record != "header" {
                    return Err(at_line(format!("expected a header record, got {:?}", h.record)));
                }
                header = Some(h);
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| at_line(e.to_string()))?;
            if let Some(prev) = entries.last() {
                if entry.at < prev.at {
                    return Err(at_line(format!(
                        "entries must be in time order ({} after {})",
                        entry.at, prev.at
                    )));
                }
            }
            entries.push(entry);
        }
        let header = header.ok_or(ScriptError::MissingHeader)?;
        Ok(Self { header, entries })
    }

    pub fn parse_str(text: &str) -> Result<Self, ScriptError> {
        Self::parse(text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = r#"{"record":"header","until":10}
{"at":1,"action":"inject","disturbance":{"type":"place_entity","module":"M","track":"C1","position":0,"kind":"carrier"}}
{"at":2,"action":"invoke","module":"M","call":"f('a', 1)","note":"because","category":"routine"}
{"at":2,"action":"user_task","text":"do it"}
"#;
        let script = Script::parse_str(text).unwrap();
        assert_eq!(script.entries.len(), 3);
        assert!(matches!(
            &script.entries[1].action,
            ScriptAction::Invoke { call, note: Some(n), .. } if call.name == "f" && n == "because"
        ));
        assert_eq!(Script::parse_str(&script.to_jsonl()).unwrap(), script);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(Script::parse_str(""), Err(ScriptError::MissingHeader)));
        let err = Script::parse_str("{\"record\":\"header\",\"until\":3}\n{\"at\":1,\"action\":\"dance\"}")
            .unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = Script::parse_str(
            "{\"record\":\"header\",\"until\":3}\n{\"at\":2,\"action\":\"user_task\",\"text\":\"a\"}\n{\"at\":1,\"action\":\"user_task\",\"text\":\"b\"}",
        )
        .unwrap_err();
        assert!(err.to_string().contains("time order"));
    }
}
