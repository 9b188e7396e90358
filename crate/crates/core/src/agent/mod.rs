//! Manager, operator and summarizer agents.

mod backend;
mod config;
mod output;
mod prompt;

use std::sync::Arc;

use thiserror::Error;

pub use backend::{
    complete_with_retry, estimate_tokens, BackendError, BackendKind, CompletionRequest,
    LlmBackend, OracleBackend, RemoteBackend, RemoteConfig, ScriptedBackend, ScriptedEntry,
    ScriptedResponse,
};
pub use config::{
    manager_functions, AgentConfig, AgentRole, ConfigError, FunctionDoc, ResolvedAgent,
    PLANNER_SCOPE, PLANT_SCOPE,
};
pub use output::{parse_output, AgentCommand, AgentOutput, OutputError, NO_ACTION};
pub use prompt::{build_prompt, render_prompt, AgentPrompt, SECTION_TITLES};

use crate::call::FunctionCall;
use crate::event::{Event, EventLog};

/// Builds the backend request for an agent over an explicit event list.
pub fn completion_request(
    agent: &ResolvedAgent,
    events: &[Event],
    new_from: usize,
    log: &EventLog,
) -> (AgentPrompt, CompletionRequest) {
    let prompt = render_prompt(agent, events, log.epoch());
    let request = CompletionRequest {
        agent_id: agent.id.clone(),
        prompt: prompt.text.clone(),
        history: log.render_all(events),
        new_from,
    };
    (prompt, request)
}

/// Result of one agent step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Output {
        prompt: AgentPrompt,
        output: AgentOutput,
    },
    /// The model answered, but not in the required shape.
    Rejected { prompt: AgentPrompt, cause: String },
    /// The backend failed twice; the window is skipped.
    BackendFailed { prompt: AgentPrompt, cause: String },
}

impl Decision {
    pub fn prompt(&self) -> &AgentPrompt {
        match self {
            Decision::Output { prompt, .. }
            | Decision::Rejected { prompt, .. }
            | Decision::BackendFailed { prompt, .. } => prompt,
        }
    }
}

/// A configured agent with its backend and consumption cursor.
pub struct Agent {
    config: ResolvedAgent,
    backend: Arc<dyn LlmBackend>,
    cursor: u64,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.config.id)
            .field("backend", &self.backend.name())
            .field("cursor", &self.cursor)
            .finish()
    }
}

impl Agent {
    pub fn new(config: ResolvedAgent, backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            config,
            backend,
            cursor: 0,
        }
    }

    pub fn config(&self) -> &ResolvedAgent {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn backend(&self) -> &Arc<dyn LlmBackend> {
        &self.backend
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn has_new_events(&self, log: &EventLog) -> bool {
        log.events()
            .iter()
            .rev()
            .take_while(|e| e.seq > self.cursor)
            .any(|e| self.config.subscription.matches(e))
    }

    /// Runs prompt → completion → parse over the current view. Returns `None`
    /// when the view holds nothing new. The cursor advances in every other case.
    pub fn decide(&mut self, log: &EventLog) -> Option<Decision> {
        if self.config.role == AgentRole::Summarizer || !self.has_new_events(log) {
            return None;
        }
        let events = log.view(&self.config.subscription, 0);
        let new_from = events.partition_point(|e| e.seq <= self.cursor);
        let (prompt, request) = completion_request(&self.config, &events, new_from, log);
        self.cursor = prompt.cursor;
        let decision = match complete_with_retry(self.backend.as_ref(), &request) {
            Err(e) => Decision::BackendFailed {
                prompt,
                cause: e.to_string(),
            },
            Ok(raw) => match parse_output(&raw) {
                Ok(output) => Decision::Output { prompt, output },
                Err(e) => Decision::Rejected {
                    prompt,
                    cause: e.to_string(),
                },
            },
        };
        Some(decision)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SummaryError {
    #[error("nothing to summarize: the summarizer's view is empty")]
    EmptyLog,
    #[error("summarizer backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("summarizer returned an empty text")]
    EmptySummary,
}

/// Asks the backend for a report over the agent's full view. The returned text
/// is collapsed onto one line so it can be logged.
pub fn summarize(
    agent: &ResolvedAgent,
    backend: &dyn LlmBackend,
    log: &EventLog,
) -> Result<String, SummaryError> {
    let events = log.view(&agent.subscription, 0);
    if events.is_empty() {
        return Err(SummaryError::EmptyLog);
    }
    let (_, request) = completion_request(agent, &events, 0, log);
    let raw = backend.complete(&request)?;
    let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.is_empty() {
        return Err(SummaryError::EmptySummary);
    }
    Ok(text)
}

/// What a manager command asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManagerAction {
    Assign { module: String, task: String },
    Done { module: String },
}

pub fn manager_action(call: &FunctionCall) -> Result<ManagerAction, String> {
    let text = |i: usize| {
        call.args
            .get(i)
            .and_then(|a| a.as_str())
            .map(str::to_string)
            .ok_or_else(|| format!("{}: argument {} must be a string", call.name, i + 1))
    };
    match (call.name.as_str(), call.args.len()) {
        ("assign_task", 2) => Ok(ManagerAction::Assign {
            module: text(0)?,
            task: text(1)?,
        }),
        ("mark_task_done", 1) => Ok(ManagerAction::Done { module: text(0)? }),
        ("assign_task", n) | ("mark_task_done", n) => {
            Err(format!("{} does not take {n} argument(s)", call.name))
        }
        (other, _) => Err(format!("unknown manager function {other}")),
    }
}

/// Task text with a single trailing period.
pub fn sentence(text: &str) -> String {
    format!("{}.", text.trim().trim_end_matches('.'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Filter, SemanticLevel, Source, Subscription};
    use crate::sim::LayoutConfig;

    struct Failing;

    impl LlmBackend for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn kind(&self) -> BackendKind {
            BackendKind::Remote
        }
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            Err(BackendError::Transport("down".into()))
        }
    }

    fn resolved(role: AgentRole) -> ResolvedAgent {
        AgentConfig {
            id: "a".into(),
            role,
            module: Some("Storage Station".into()),
            role_text: "r".into(),
            components: None,
            sop: vec![],
            auxiliary: vec![],
            subscription: Subscription::new(vec![Filter::scope("Storage Station")]),
            backend: "b".into(),
        }
        .resolve(&LayoutConfig::bundled())
        .unwrap()
    }

    fn log_with(lines: &[&str]) -> EventLog {
        let mut log = EventLog::default();
        for (i, l) in lines.iter().enumerate() {
            log.append("Storage Station", Source::System, SemanticLevel::Field, *l, i as u64)
                .unwrap();
        }
        log
    }

    #[test]
    fn decide_consumes_windows() {
        let backend = ScriptedBackend::new(vec![ScriptedEntry {
            agent: "a".into(),
            on: "BG56 detects".into(),
            response: ScriptedResponse::Output(AgentOutput::new(
                "go",
                "conveyor_1_run('forward', 13)".parse::<FunctionCall>().unwrap(),
            )),
        }]);
        let mut agent = Agent::new(resolved(AgentRole::Operator), Arc::new(backend));
        let mut log = log_with(&["BG56 detects a carrier at the infeed of conveyor C1."]);
        match agent.decide(&log).unwrap() {
            Decision::Output { output, prompt } => {
                assert_eq!(output.reason, "go");
                assert_eq!(prompt.cursor, 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(agent.decide(&log).is_none());
        log.append("Elsewhere", Source::System, SemanticLevel::Field, "x", 5).unwrap();
        assert!(agent.decide(&log).is_none());
        log.append("Storage Station", Source::System, SemanticLevel::Field, "y", 5).unwrap();
        let Decision::Output { output, .. } = agent.decide(&log).unwrap() else { panic!() };
        assert_eq!(output.command, AgentCommand::NoAction);
        assert_eq!(agent.cursor(), 3);
    }

    #[test]
    fn failures_are_reported_and_skipped() {
        let log = log_with(&["e"]);
        let mut agent = Agent::new(resolved(AgentRole::Operator), Arc::new(Failing));
        assert!(matches!(agent.decide(&log), Some(Decision::BackendFailed { .. })));
        assert!(agent.decide(&log).is_none());

        let junk = ScriptedBackend::new(vec![ScriptedEntry {
            agent: "a".into(),
            on: String::new(),
            response: ScriptedResponse::Text { text: "sure!".into() },
        }]);
        let mut agent = Agent::new(resolved(AgentRole::Operator), Arc::new(junk));
        let Some(Decision::Rejected { cause, .. }) = agent.decide(&log) else { panic!() };
        assert!(cause.starts_with("malformed output"), "{cause}");
    }

    #[test]
    fn summary_rules() {
        let summarizer = resolved(AgentRole::Summarizer);
        let canned = ScriptedBackend::new(vec![ScriptedEntry {
            agent: "a".into(),
            on: String::new(),
            response: ScriptedResponse::Text {
                text: "Carrier moved.\nPick started.".into(),
            },
        }]);
        assert_eq!(
            summarize(&summarizer, &canned, &EventLog::default()),
            Err(SummaryError::EmptyLog)
        );
        let log = log_with(&["e"]);
        assert_eq!(summarize(&summarizer, &canned, &log).unwrap(), "Carrier moved. Pick started.");
        assert!(matches!(summarize(&summarizer, &Failing, &log), Err(SummaryError::Backend(_))));
    }

    #[test]
    fn manager_calls() {
        let call: FunctionCall = "assign_task('Storage Station', 'fetch it')".parse().unwrap();
        assert_eq!(
            manager_action(&call),
            Ok(ManagerAction::Assign {
                module: "Storage Station".into(),
                task: "fetch it".into()
            })
        );
        assert!(manager_action(&"assign_task('x')".parse().unwrap()).is_err());
        assert!(manager_action(&"mark_task_done(3)".parse().unwrap()).is_err());
        assert!(manager_action(&"conveyor_1_run()".parse().unwrap()).is_err());
        assert_eq!(sentence(" do it. "), "do it.");
    }
}
