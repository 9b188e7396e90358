//! Correctness evaluation and plausibility annotation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Category, Dataset, DatasetError};
use crate::agent::{complete_with_retry, parse_output, AgentOutput, CompletionRequest, LlmBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
    ParseFailure,
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case_id: String,
    pub suite: String,
    pub agent: String,
    pub category: Category,
    pub verdict: Verdict,
    pub expected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produced: Option<AgentOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausibility: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub cases: usize,
    pub matches: usize,
    /// Matches over cases, 0 when the stratum is empty.
    pub rate: f64,
    pub annotated: usize,
    pub plausibility: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Leave cases whose backend failed out of the denominators.
    pub exclude_backend_failures: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessReport {
    pub backend: String,
    pub options: EvalOptions,
    pub cases: Vec<CaseVerdict>,
    pub overall: StratumSummary,
    pub routine: StratumSummary,
    pub unexpected: StratumSummary,
}

fn summarize<'a>(verdicts: impl Iterator<Item = &'a CaseVerdict>, options: EvalOptions) -> StratumSummary {
    let counted: Vec<&CaseVerdict> = verdicts
        .filter(|v| !(options.exclude_backend_failures && v.verdict == Verdict::BackendFailure))
        .collect();
    let matches = counted.iter().filter(|v| v.verdict == Verdict::Match).count();
    let scores: Vec<u8> = counted.iter().filter_map(|v| v.plausibility).collect();
    StratumSummary {
        cases: counted.len(),
        matches,
        rate: if counted.is_empty() {
            0.0
        } else {
            matches as f64 / counted.len() as f64
        },
        annotated: scores.len(),
        plausibility: (!scores.is_empty())
            .then(|| scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64),
    }
}

impl CorrectnessReport {
    fn from_cases(backend: String, options: EvalOptions, cases: Vec<CaseVerdict>) -> Self {
        let overall = summarize(cases.iter(), options);
        let routine = summarize(cases.iter().filter(|c| c.category == Category::Routine), options);
        let unexpected =
            summarize(cases.iter().filter(|c| c.category == Category::Unexpected), options);
        Self {
            backend,
            options,
            cases,
            overall,
            routine,
            unexpected,
        }
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.cases.iter().filter(|c| c.verdict == verdict).count()
    }

    /// Plain-text table: one row per stratum, rate and mean plausibility.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "backend: {}", self.backend);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>8} {:>12} {:>14}",
            "stratum", "cases", "matches", "correctness", "plausibility"
        );
        for (name, s) in [
            ("all", &self.overall),
            ("routine", &self.routine),
            ("unexpected", &self.unexpected),
        ] {
            let plaus = match s.plausibility {
                Some(p) => format!("{p:.1} ({}/{})", s.annotated, s.cases),
                None => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>8} {:>11.1}% {:>14}",
                name,
                s.cases,
                s.matches,
                s.rate * 100.0,
                plaus
            );
        }
        let failures = self.count(Verdict::ParseFailure) + self.count(Verdict::BackendFailure);
        if failures > 0 {
            let _ = writeln!(
                out,
                "parse failures: {}, backend failures: {}",
                self.count(Verdict::ParseFailure),
                self.count(Verdict::BackendFailure)
            );
        }
        out
    }
}

/// Runs every case through the backend and compares commands structurally.
pub fn evaluate(dataset: &Dataset, backend: &dyn LlmBackend, options: EvalOptions) -> CorrectnessReport {
    let cases: Vec<_> = dataset.cases().collect();
    let verdicts: Vec<CaseVerdict> = cases
        .par_iter()
        .map(|(suite, case)| {
            let request = CompletionRequest {
                agent_id: case.agent.clone(),
                prompt: case.prompt.clone(),
                history: case.history(dataset.epoch),
                new_from: case.prefix_events.len(),
            };
            let (verdict, produced, error) = match complete_with_retry(backend, &request) {
                Err(e) => (Verdict::BackendFailure, None, Some(e.to_string())),
                Ok(raw) => match parse_output(&raw) {
                    Err(e) => (Verdict::ParseFailure, None, Some(e.to_string())),
                    Ok(out) if out.command == case.expected.command => (Verdict::Match, Some(out), None),
                    Ok(out) => (Verdict::Mismatch, Some(out), None),
                },
            };
            CaseVerdict {
                case_id: case.id.clone(),
                suite: suite.name.clone(),
                agent: case.agent.clone(),
                category: case.category,
                verdict,
                expected: case.expected.command.to_string(),
                produced,
                error,
                plausibility: None,
            }
        })
        .collect();
    CorrectnessReport::from_cases(backend.name().to_string(), options, verdicts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub case_id: String,
    pub plausibility: i64,
}

pub fn read_annotations(input: impl BufRead) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Line {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Merges Likert scores (1 to 5) into a report. Later entries for the same
/// case override earlier ones.
pub fn annotate_plausibility(
    report: &CorrectnessReport,
    annotations: &[Annotation],
) -> Result<CorrectnessReport, DatasetError> {
    let mut scores: BTreeMap<&str, u8> = BTreeMap::new();
    for a in annotations {
        if !report.cases.iter().any(|c| c.case_id == a.case_id) {
            return Err(DatasetError::Case {
                case: a.case_id.clone(),
                message: "annotation refers to an unknown case".into(),
            });
        }
        let score = u8::try_from(a.plausibility)
            .ok()
            .filter(|s| (1..=5).contains(s))
            .ok_or_else(|| DatasetError::Case {
                case: a.case_id.clone(),
                message: format!("plausibility {} is outside 1..=5", a.plausibility),
            })?;
        scores.insert(&a.case_id, score);
    }
    let mut cases = report.cases.clone();
    for c in &mut cases {
        if let Some(s) = scores.get(c.case_id.as_str()) {
            c.plausibility = Some(*s);
        }
    }
    Ok(CorrectnessReport::from_cases(report.backend.clone(), report.options, cases))
}
