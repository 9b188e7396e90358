//! The data observer: turns raw plant changes into natural-language events.
//!
//! Rules are grouped per module. A rule matches a change by kind, subject id
//! and optional binding qualifiers (`when`), and carries one template per
//! semantic level. For every level, the first matching rule of the change's
//! module that renders that level fires; levels are emitted in
//! field → control → planning order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::FunctionCall;
use crate::event::{EventDraft, SemanticLevel, Source};
use crate::sim::{placeholders_for, RawChange};

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("rule file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: unknown change kind {kind:?}")]
    UnknownChange { path: String, kind: String },
    #[error("{path}: rule has no renderings")]
    NoRenderings { path: String },
    #[error("{path}: placeholder {{{name}}} is not bound by {kind} changes")]
    UnboundPlaceholder {
        path: String,
        name: String,
        kind: String,
    },
    #[error("{path}: qualifier {name:?} is not bound by {kind} changes")]
    UnboundQualifier {
        path: String,
        name: String,
        kind: String,
    },
    #[error("{path}: unbalanced braces in template {template:?}")]
    BadTemplate { path: String, template: String },
    #[error("{path}: duplicate rule for the same trigger at level {level}")]
    Duplicate { path: String, level: SemanticLevel },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub change: String,
    /// Sensor, holder, track, robot or function id; `*` matches any.
    #[serde(default = "any_subject")]
    pub subject: String,
    /// Extra binding values the change must carry.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub when: BTreeMap<String, String>,
}

fn any_subject() -> String {
    "*".to_string()
}

impl Trigger {
    pub fn matches(&self, change: &RawChange, bindings: &BTreeMap<&'static str, String>) -> bool {
        self.change == change.kind()
            && (self.subject == "*" || self.subject == change.subject())
            && self
                .when
                .iter()
                .all(|(k, v)| bindings.get(k.as_str()) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverRule {
    pub trigger: Trigger,
    pub source: Source,
    pub renderings: BTreeMap<SemanticLevel, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleRules {
    pub module: String,
    #[serde(default)]
    pub rules: Vec<ObserverRule>,
}

/// Validated, read-only rule set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    #[serde(default)]
    pub modules: Vec<ModuleRules>,
}

const BUNDLED_RULES: &str = include_str!("../assets/observer-rules.json");

/// Parses and validates a rule file.
pub fn load_rules(text: &str) -> Result<RuleSet, ObserverError> {
    let set: RuleSet = serde_json::from_str(text)?;
    set.validate()?;
    Ok(set)
}

fn template_placeholders(template: &str) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return None;
        }
        let after = &rest[open + 1..];
        let close = after.find('}')?;
        let name = &after[..close];
        if name.contains('{') {
            return None;
        }
        out.push(name);
        rest = &after[close + 1..];
    }
    Some(out)
}

fn fill(template: &str, bindings: &BTreeMap<&'static str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        // validated at load time
        let close = after.find('}').unwrap_or(after.len());
        if let Some(value) = bindings.get(&after[..close]) {
            out.push_str(value);
        }
        rest = after.get(close + 1..).unwrap_or("");
    }
    out.push_str(rest);
    out
}

impl RuleSet {
    pub fn bundled() -> Self {
        load_rules(BUNDLED_RULES).expect("bundled observer rules are valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED_RULES
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        for (mi, module) in self.modules.iter().enumerate() {
            let mut seen: Vec<(&Trigger, SemanticLevel)> = Vec::new();
            for (ri, rule) in module.rules.iter().enumerate() {
                let path = format!("modules[{mi}].rules[{ri}]");
                let kind = rule.trigger.change.as_str();
                let allowed = placeholders_for(kind).ok_or_else(|| ObserverError::UnknownChange {
                    path: path.clone(),
                    kind: kind.to_string(),
                })?;
                if rule.renderings.is_empty() {
                    return Err(ObserverError::NoRenderings { path });
                }
                for name in rule.trigger.when.keys() {
                    if !allowed.contains(&name.as_str()) {
                        return Err(ObserverError::UnboundQualifier {
                            path,
                            name: name.clone(),
                            kind: kind.to_string(),
                        });
                    }
                }
                for (level, template) in &rule.renderings {
                    let names = template_placeholders(template).ok_or_else(|| {
                        ObserverError::BadTemplate {
                            path: path.clone(),
                            template: template.clone(),
                        }
                    })?;
                    if let Some(name) = names.iter().find(|n| !allowed.contains(n)) {
                        return Err(ObserverError::UnboundPlaceholder {
                            path,
                            name: name.to_string(),
                            kind: kind.to_string(),
                        });
                    }
                    if seen.iter().any(|(t, l)| *t == &rule.trigger && l == level) {
                        return Err(ObserverError::Duplicate {
                            path,
                            level: *level,
                        });
                    }
                    seen.push((&rule.trigger, *level));
                }
            }
        }
        Ok(())
    }

    fn module(&self, name: &str) -> Option<&ModuleRules> {
        self.modules.iter().find(|m| m.module == name)
    }

    /// Events for one raw change, in emission order.
    pub fn on_change(&self, change: &RawChange, sim_time: u64) -> Vec<EventDraft> {
        let Some(module) = self.module(change.module()) else {
            return Vec::new();
        };
        let bindings = change.bindings();
        let matching: Vec<&ObserverRule> = module
            .rules
            .iter()
            .filter(|r| r.trigger.matches(change, &bindings))
            .collect();

        let mut out = Vec::new();
        for level in SemanticLevel::ALL {
            let Some(rule) = matching.iter().find(|r| r.renderings.contains_key(&level)) else {
                continue;
            };
            let text = fill(&rule.renderings[&level], &bindings);
            if let RawChange::FunctionInvoked { module, call, .. } = change {
                if out.is_empty() {
                    let [call_line, ack] =
                        function_call_events(module, call, rule.source, level, &text, sim_time);
                    out.push(call_line);
                    out.push(ack);
                    continue;
                }
            }
            out.push(EventDraft {
                sim_time,
                scope: change.module().to_string(),
                source: rule.source,
                level,
                text,
            });
        }
        out
    }
}

/// The `calls function:` line followed by the acknowledgment line.
pub fn function_call_events(
    module: &str,
    call: &FunctionCall,
    ack_source: Source,
    ack_level: SemanticLevel,
    ack_text: &str,
    sim_time: u64,
) -> [EventDraft; 2] {
    [
        EventDraft {
            sim_time,
            scope: module.to_string(),
            source: Source::Operator,
            level: SemanticLevel::Field,
            text: format!("{module} calls function: {call}."),
        },
        EventDraft {
            sim_time,
            scope: module.to_string(),
            source: ack_source,
            level: ack_level,
            text: ack_text.to_string(),
        },
    ]
}
