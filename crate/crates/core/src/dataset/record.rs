//! Reverse construction of test suites from manually operated sessions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Category, TestCase, TestSuite};
use crate::agent::{render_prompt, AgentOutput, ResolvedAgent};
use crate::call::FunctionCall;
use crate::event::EventLog;

/// A human-issued command captured while recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedCommand {
    /// Agent whose decision the command stands in for.
    pub agent: String,
    pub at: u64,
    /// Last log seq before the command took effect.
    pub cursor: u64,
    pub call: FunctionCall,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordingWarning {
    NoCommands,
    EmptyWindow { agent: String, call: String, at: u64 },
    UnknownAgent { agent: String, call: String },
}

impl fmt::Display for RecordingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordingWarning::NoCommands => f.write_str("recording holds no commands; the suite is empty"),
            RecordingWarning::EmptyWindow { agent, call, at } => write!(
                f,
                "skipped {call} by {agent} at t={at}: no new events in the agent's view"
            ),
            RecordingWarning::UnknownAgent { agent, call } => {
                write!(f, "skipped {call}: no agent {agent:?} is configured")
            }
        }
    }
}

/// Splits each agent's view at its command boundaries: a command's window
/// holds the events after the agent's previous command up to the command.
pub fn build_suite(
    name: &str,
    task_description: &str,
    log: &EventLog,
    agents: &BTreeMap<String, ResolvedAgent>,
    commands: &[RecordedCommand],
) -> (TestSuite, Vec<RecordingWarning>) {
    let mut warnings = Vec::new();
    let mut cases = Vec::new();
    if commands.is_empty() {
        warnings.push(RecordingWarning::NoCommands);
    }
    let mut consumed: BTreeMap<&str, u64> = BTreeMap::new();
    for cmd in commands {
        let Some(agent) = agents.get(&cmd.agent) else {
            warnings.push(RecordingWarning::UnknownAgent {
                agent: cmd.agent.clone(),
                call: cmd.call.to_string(),
            });
            continue;
        };
        let boundary = consumed.get(cmd.agent.as_str()).copied().unwrap_or(0);
        let view: Vec<_> = log
            .view(&agent.subscription, 0)
            .into_iter()
            .take_while(|e| e.seq <= cmd.cursor)
            .collect();
        let split = view.partition_point(|e| e.seq <= boundary);
        if split == view.len() {
            warnings.push(RecordingWarning::EmptyWindow {
                agent: cmd.agent.clone(),
                call: cmd.call.to_string(),
                at: cmd.at,
            });
            continue;
        }
        consumed.insert(&cmd.agent, cmd.cursor);
        let prompt = render_prompt(agent, &view, log.epoch()).text;
        let mut prefix = view;
        let new = prefix.split_off(split);
        cases.push(TestCase {
            id: format!("{name}/{}", cases.len() + 1),
            agent: cmd.agent.clone(),
            category: cmd.category,
            prefix_events: prefix,
            new_events: new,
            expected: AgentOutput::new(cmd.reason.clone(), cmd.call.clone()),
            prompt,
        });
    }
    let suite = TestSuite {
        name: name.to_string(),
        task_description: task_description.to_string(),
        cases,
    };
    (suite, warnings)
}
