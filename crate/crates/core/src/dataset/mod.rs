//! Test points, cases, suites and datasets; JSONL import/export.

mod eval;
mod record;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{
    annotate_plausibility, evaluate, read_annotations, Annotation, CaseVerdict, CorrectnessReport,
    EvalOptions, StratumSummary, Verdict,
};
pub use record::{build_suite, RecordedCommand, RecordingWarning};

use crate::agent::{render_prompt, AgentOutput, OracleBackend, ResolvedAgent};
use crate::event::{ClockTime, Event};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    #[default]
    Routine,
    Unexpected,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Routine => "routine",
            Category::Unexpected => "unexpected",
        })
    }
}

/// One test point with its reference output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub agent: String,
    pub category: Category,
    pub prefix_events: Vec<Event>,
    pub new_events: Vec<Event>,
    pub expected: AgentOutput,
    /// Fully rendered prompt, so exported files are self-contained.
    pub prompt: String,
}

impl TestCase {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.prefix_events.iter().chain(&self.new_events)
    }

    /// Rendered view lines as the agent saw them.
    pub fn history(&self, epoch: ClockTime) -> Vec<String> {
        self.events().map(|e| e.render(epoch)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub name: String,
    pub task_description: String,
    pub cases: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub epoch: ClockTime,
    /// Prompt sections of every agent referenced by a case.
    pub agents: BTreeMap<String, ResolvedAgent>,
    pub suites: Vec<TestSuite>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub task_description: String,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suites: Vec<SuiteEntry>,
    pub totals: usize,
    pub routine: usize,
    pub unexpected: usize,
    pub routine_ratio: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    Version { found: u32 },
    #[error("file has no header record")]
    MissingHeader,
    #[error("manifest does not match contents: {0}")]
    Manifest(String),
    #[error("case {case}: {message}")]
    Case { case: String, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    record: String,
    schema_version: u32,
    epoch: ClockTime,
    manifest: Manifest,
    agents: BTreeMap<String, ResolvedAgent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseRecord {
    record: String,
    suite: String,
    #[serde(flatten)]
    case: TestCase,
}

impl Dataset {
    pub fn cases(&self) -> impl Iterator<Item = (&TestSuite, &TestCase)> {
        self.suites
            .iter()
            .flat_map(|s| s.cases.iter().map(move |c| (s, c)))
    }

    pub fn case_count(&self) -> usize {
        self.suites.iter().map(|s| s.cases.len()).sum()
    }

    pub fn manifest(&self) -> Manifest {
        let totals = self.case_count();
        let routine = self
            .cases()
            .filter(|(_, c)| c.category == Category::Routine)
            .count();
        Manifest {
            suites: self
                .suites
                .iter()
                .map(|s| SuiteEntry {
                    name: s.name.clone(),
                    task_description: s.task_description.clone(),
                    cases: s.cases.len(),
                })
                .collect(),
            totals,
            routine,
            unexpected: totals - routine,
            routine_ratio: if totals == 0 {
                0.0
            } else {
                routine as f64 / totals as f64
            },
            notes: self.notes.clone(),
        }
    }

    /// The prompt a case should carry, rebuilt from its structured fields.
    pub fn render_case_prompt(&self, case: &TestCase) -> Result<String, DatasetError> {
        let agent = self.agents.get(&case.agent).ok_or_else(|| DatasetError::Case {
            case: case.id.clone(),
            message: format!("unknown agent {:?}", case.agent),
        })?;
        let events: Vec<Event> = case.events().cloned().collect();
        Ok(render_prompt(agent, &events, self.epoch).text)
    }

    /// Structural checks: ids unique, windows non-empty, ranges advance,
    /// stored prompts match their fields.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = BTreeSet::new();
        for suite in &self.suites {
            let mut last_seq: BTreeMap<&str, u64> = BTreeMap::new();
            for case in &suite.cases {
                let fail = |message: String| DatasetError::Case {
                    case: case.id.clone(),
                    message,
                };
                if !ids.insert(case.id.as_str()) {
                    return Err(fail("duplicate case id".into()));
                }
                if case.new_events.is_empty() {
                    return Err(fail("new event window is empty".into()));
                }
                let seqs: Vec<u64> = case.events().map(|e| e.seq).collect();
                if seqs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(fail("events are not in seq order".into()));
                }
                let first_new = case.new_events[0].seq;
                let last_new = case.new_events.last().map_or(0, |e| e.seq);
                if let Some(prev) = last_seq.get(case.agent.as_str()) {
                    if first_new <= *prev {
                        return Err(fail("event windows do not advance".into()));
                    }
                }
                last_seq.insert(&case.agent, last_new);
                if self.render_case_prompt(case)? != case.prompt {
                    return Err(fail("stored prompt differs from its fields".into()));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), DatasetError> {
        let header = HeaderRecord {
            record: "header".into(),
            schema_version: SCHEMA_VERSION,
            epoch: self.epoch,
            manifest: self.manifest(),
            agents: self.agents.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for suite in &self.suites {
            for case in &suite.cases {
                let record = CaseRecord {
                    record: "case".into(),
                    suite: suite.name.clone(),
                    case: case.clone(),
                };
                writeln!(out, "{}", serde_json::to_string(&record).expect("case serializes"))?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn export_tests(&self, path: &Path) -> Result<(), DatasetError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, DatasetError> {
        let mut header: Option<HeaderRecord> = None;
        let mut suites: Vec<TestSuite> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let at = |message: String| DatasetError::Line {
                line: idx + 1,
                message,
            };
            if line.trim().is_empty() {
                continue;
            }
            let Some(h) = &header else {
                let value: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
                if value.get("record").and_then(|r| r.as_str()) != Some("header") {
                    return Err(DatasetError::MissingHeader);
                }
                let version = value
                    .get("schema_version")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| at("missing schema_version".into()))?;
                if version != u64::from(SCHEMA_VERSION) {
                    return Err(DatasetError::Version {
                        found: version as u32,
                    });
                }
                header = Some(serde_json::from_value(value).map_err(|e| at(e.to_string()))?);
                continue;
            };
            let record: CaseRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            if record.record != "case" {
                return Err(at(format!("expected a case record, got {:?}", record.record)));
            }
            match suites.last_mut() {
                Some(s) if s.name == record.suite => s.cases.push(record.case),
                _ => {
                    let Some(entry) = h.manifest.suites.iter().find(|s| s.name == record.suite)
                    else {
                        return Err(at(format!("suite {:?} is not in the manifest", record.suite)));
                    };
                    suites.push(TestSuite {
                        name: record.suite,
                        task_description: entry.task_description.clone(),
                        cases: vec![record.case],
                    });
                }
            }
        }
        let header = header.ok_or(DatasetError::MissingHeader)?;
        // suites listed in the manifest but without cases
        let mut ordered = Vec::with_capacity(header.manifest.suites.len());
        for entry in &header.manifest.suites {
            match suites.iter().position(|s| s.name == entry.name) {
                Some(i) => ordered.push(suites.remove(i)),
                None => ordered.push(TestSuite {
                    name: entry.name.clone(),
                    task_description: entry.task_description.clone(),
                    cases: Vec::new(),
                }),
            }
        }
        if let Some(extra) = suites.first() {
            return Err(DatasetError::Manifest(format!(
                "cases of suite {:?} appear out of order",
                extra.name
            )));
        }
        let dataset = Dataset {
            epoch: header.epoch,
            agents: header.agents,
            suites: ordered,
            notes: header.manifest.notes.clone(),
        };
        let actual = dataset.manifest();
        if actual != header.manifest {
            return Err(DatasetError::Manifest(format!(
                "header says {} cases ({} routine), file holds {} ({} routine)",
                header.manifest.totals, header.manifest.routine, actual.totals, actual.routine
            )));
        }
        Ok(dataset)
    }

    pub fn import_tests(path: &Path) -> Result<Self, DatasetError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn parse_str(text: &str) -> Result<Self, DatasetError> {
        Self::read_jsonl(text.as_bytes())
    }

    /// Writes `{prompt, completion}` records. Refuses uncurated cases.
    pub fn write_sft(&self, mut out: impl Write) -> Result<usize, DatasetError> {
        if let Some((_, case)) = self.cases().find(|(_, c)| c.expected.reason.trim().is_empty()) {
            return Err(DatasetError::Case {
                case: case.id.clone(),
                message: "expected reason is empty; curate the case before export".into(),
            });
        }
        let mut n = 0;
        for (_, case) in self.cases() {
            let record = SftRecord {
                prompt: case.prompt.clone(),
                completion: case.expected.to_string(),
            };
            writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))?;
            n += 1;
        }
        Ok(n)
    }

    pub fn export_sft(&self, path: &Path) -> Result<usize, DatasetError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.write_sft(&mut file)?;
        file.flush()?;
        Ok(n)
    }

    /// Scripted backend answering every test point with its reference.
    pub fn oracle(&self, name: &str) -> OracleBackend {
        let mut oracle = OracleBackend::new(name);
        for (_, case) in self.cases() {
            oracle.insert(&case.agent, &case.history(self.epoch), &case.expected);
        }
        oracle
    }
}

/// One supervised fine-tuning example; the prompt is the loss-masked part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

const SAMPLE_DATASET: &str = include_str!("../../assets/sample-dataset.jsonl");

/// The bundled ten-case sample.
pub fn sample_dataset() -> Dataset {
    Dataset::parse_str(SAMPLE_DATASET).expect("bundled sample dataset is valid")
}

pub fn sample_dataset_text() -> &'static str {
    SAMPLE_DATASET
}
