use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::is_identifier;
use crate::event::Subscription;
use crate::sim::LayoutConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Manager,
    Operator,
    Summarizer,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Manager => "manager",
            AgentRole::Operator => "operator",
            AgentRole::Summarizer => "summarizer",
        })
    }
}

/// Scope label used by the manager's own events.
pub const PLANNER_SCOPE: &str = "Task Planner";
/// Scope label used by summaries.
pub const PLANT_SCOPE: &str = "Plant";

/// One entry of the callable-function section of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDoc {
    pub name: String,
    pub signature: String,
    pub doc: String,
}

impl FunctionDoc {
    fn new(name: &str, params: &[&str], doc: &str) -> Self {
        Self {
            name: name.to_string(),
            signature: format!("{name}({})", params.join(", ")),
            doc: doc.to_string(),
        }
    }
}

pub fn manager_functions() -> Vec<FunctionDoc> {
    vec![
        FunctionDoc::new(
            "assign_task",
            &["module", "task"],
            "Hands a task, written in natural language, to the operator of the named module.",
        ),
        FunctionDoc::new(
            "mark_task_done",
            &["module"],
            "Records that the task of the named module is finished.",
        ),
    ]
}

/// Agent definition as written in a session configuration file.
///
/// `components` and `functions` are filled in from the layout when the
/// agent is resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: String,
    pub role: AgentRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<String>,
    pub role_text: String,
    /// Overrides the module's component list when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<String>>,
    #[serde(default)]
    pub sop: Vec<String>,
    #[serde(default)]
    pub auxiliary: Vec<String>,
    pub subscription: Subscription,
    pub backend: String,
}

/// An agent with every prompt section materialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedAgent {
    pub id: String,
    pub role: AgentRole,
    /// Module label used for the agent's own events.
    pub scope: String,
    pub role_text: String,
    pub components: Vec<String>,
    pub functions: Vec<FunctionDoc>,
    pub sop: Vec<String>,
    pub auxiliary: Vec<String>,
    pub subscription: Subscription,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("agent {agent}: {message}")]
    Invalid { agent: String, message: String },
}

fn invalid(agent: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        agent: agent.to_string(),
        message: message.into(),
    }
}

/// Identifiers directly followed by `(` in free text.
fn referenced_functions(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for (i, _) in text.match_indices('(') {
        let head = &text[..i];
        let start = head
            .rfind(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .map_or(0, |p| p + 1);
        let ident = &head[start..];
        if is_identifier(ident) {
            out.push(ident);
        }
    }
    out
}

impl AgentConfig {
    pub fn resolve(&self, layout: &LayoutConfig) -> Result<ResolvedAgent, ConfigError> {
        if self.id.trim().is_empty() {
            return Err(invalid(&self.id, "id must not be empty"));
        }
        let (scope, components, functions) = match self.role {
            AgentRole::Operator => {
                let name = self
                    .module
                    .as_deref()
                    .ok_or_else(|| invalid(&self.id, "operators must bind to a module"))?;
                let module = layout
                    .module(name)
                    .ok_or_else(|| invalid(&self.id, format!("unknown module {name:?}")))?;
                let functions = module
                    .functions
                    .iter()
                    .map(|f| FunctionDoc {
                        name: f.name.clone(),
                        signature: f.signature(),
                        doc: f.doc.clone(),
                    })
                    .collect();
                (name.to_string(), module.components.clone(), functions)
            }
            AgentRole::Manager => {
                let components = layout
                    .modules
                    .iter()
                    .map(|m| format!("{} is an automation module with its own operator.", m.name))
                    .collect();
                (PLANNER_SCOPE.to_string(), components, manager_functions())
            }
            AgentRole::Summarizer => (PLANT_SCOPE.to_string(), Vec::new(), Vec::new()),
        };
        let known: BTreeSet<&str> = functions.iter().map(|f: &FunctionDoc| f.name.as_str()).collect();
        for entry in &self.sop {
            if let Some(name) = referenced_functions(entry).into_iter().find(|n| !known.contains(n)) {
                return Err(invalid(
                    &self.id,
                    format!("SOP entry refers to unknown function {name}(): {entry:?}"),
                ));
            }
        }
        Ok(ResolvedAgent {
            id: self.id.clone(),
            role: self.role,
            scope,
            role_text: self.role_text.clone(),
            components: self.components.clone().unwrap_or(components),
            functions,
            sop: self.sop.clone(),
            auxiliary: self.auxiliary.clone(),
            subscription: self.subscription.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Filter;

    fn operator(sop: Vec<String>) -> AgentConfig {
        AgentConfig {
            id: "op".into(),
            role: AgentRole::Operator,
            module: Some("Storage Station".into()),
            role_text: "You operate the storage station.".into(),
            components: None,
            sop,
            auxiliary: vec![],
            subscription: Subscription::new(vec![Filter::scope("Storage Station")]),
            backend: "oracle".into(),
        }
    }

    #[test]
    fn operator_takes_functions_from_layout() {
        let agent = operator(vec![]).resolve(&LayoutConfig::bundled()).unwrap();
        assert_eq!(agent.scope, "Storage Station");
        assert_eq!(agent.functions[0].signature, "conveyor_1_run(direction, time)");
        assert!(agent.components[1].starts_with("BG56"));
    }

    #[test]
    fn sop_must_name_known_functions() {
        let layout = LayoutConfig::bundled();
        let ok = operator(vec!["On arrival call conveyor_1_run(forward, 13).".into()]);
        assert!(ok.resolve(&layout).is_ok());
        let bad = operator(vec!["Then call launch_rocket() (carefully).".into()]);
        let err = bad.resolve(&layout).unwrap_err();
        assert!(err.to_string().contains("launch_rocket"), "{err}");
    }

    #[test]
    fn operator_needs_a_known_module() {
        let mut cfg = operator(vec![]);
        cfg.module = None;
        assert!(cfg.resolve(&LayoutConfig::bundled()).is_err());
        cfg.module = Some("Paint Shop".into());
        assert!(cfg.resolve(&LayoutConfig::bundled()).is_err());
    }

    #[test]
    fn manager_has_fixed_functions() {
        let mut cfg = operator(vec!["Use assign_task(module, task) for each step.".into()]);
        cfg.role = AgentRole::Manager;
        cfg.module = None;
        let agent = cfg.resolve(&LayoutConfig::bundled()).unwrap();
        let names: Vec<_> = agent.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["assign_task", "mark_task_done"]);
        assert_eq!(agent.scope, PLANNER_SCOPE);
    }

    #[test]
    fn function_reference_scanner() {
        assert_eq!(referenced_functions("a f(x) and g_2() (not this)"), vec!["f", "g_2"]);
    }
}
