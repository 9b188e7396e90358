use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::{CallSyntaxError, FunctionCall};

pub const NO_ACTION: &str = "no_action";

/// What an agent asks the framework to do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AgentCommand {
    Call(FunctionCall),
    NoAction,
}

impl AgentCommand {
    pub fn as_call(&self) -> Option<&FunctionCall> {
        match self {
            AgentCommand::Call(c) => Some(c),
            AgentCommand::NoAction => None,
        }
    }
}

impl fmt::Display for AgentCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentCommand::Call(c) => c.fmt(f),
            AgentCommand::NoAction => f.write_str(NO_ACTION),
        }
    }
}

impl FromStr for AgentCommand {
    type Err = CallSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == NO_ACTION {
            return Ok(AgentCommand::NoAction);
        }
        s.parse().map(AgentCommand::Call)
    }
}

impl From<FunctionCall> for AgentCommand {
    fn from(call: FunctionCall) -> Self {
        AgentCommand::Call(call)
    }
}

impl Serialize for AgentCommand {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentCommand {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A parsed `{reason, command}` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub reason: String,
    pub command: AgentCommand,
}

impl AgentOutput {
    pub fn new(reason: impl Into<String>, command: impl Into<AgentCommand>) -> Self {
        Self {
            reason: reason.into(),
            command: command.into(),
        }
    }

    pub fn no_action(reason: impl Into<String>) -> Self {
        Self::new(reason, AgentCommand::NoAction)
    }
}

/// Serialized as `{ "reason": ..., "command": ... }`, the form used for
/// completions and prompt examples.
impl fmt::Display for AgentOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reason = serde_json::to_string(&self.reason).map_err(|_| fmt::Error)?;
        let command = serde_json::to_string(&self.command.to_string()).map_err(|_| fmt::Error)?;
        write!(f, "{{ \"reason\": {reason}, \"command\": {command} }}")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OutputError {
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("bad command syntax in {command:?}: {error}")]
    BadCommandSyntax {
        command: String,
        error: CallSyntaxError,
    },
}

fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(body) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = body.strip_suffix("```").unwrap_or(body);
    // drop an info string such as `json`
    match body.find('\n') {
        Some(nl) if !body[..nl].trim_start().starts_with('{') => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

pub fn parse_output(raw: &str) -> Result<AgentOutput, OutputError> {
    let body = strip_fences(raw);
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| OutputError::Malformed(e.to_string()))?;
    let serde_json::Value::Object(map) = value else {
        return Err(OutputError::Malformed("expected a JSON object".into()));
    };
    for key in map.keys() {
        if key != "reason" && key != "command" {
            return Err(OutputError::Malformed(format!("unexpected key {key:?}")));
        }
    }
    let field = |key: &str| -> Result<&str, OutputError> {
        map.get(key)
            .ok_or_else(|| OutputError::Malformed(format!("missing key {key:?}")))?
            .as_str()
            .ok_or_else(|| OutputError::Malformed(format!("{key:?} must be a string")))
    };
    let reason = field("reason")?.to_string();
    let command_text = field("command")?;
    let command = command_text
        .parse()
        .map_err(|error| OutputError::BadCommandSyntax {
            command: command_text.to_string(),
            error,
        })?;
    Ok(AgentOutput { reason, command })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::call::Arg;

    const TABLE_EXAMPLE: &str = r#"{ "reason": "Carrier detected at entrance, initiate transport to pick and place point", "command": "conveyor_1_run('forward', 13)" }"#;

    #[test]
    fn parses_the_reference_example() {
        let out = parse_output(TABLE_EXAMPLE).unwrap();
        assert_eq!(
            out.reason,
            "Carrier detected at entrance, initiate transport to pick and place point"
        );
        let call = out.command.as_call().unwrap();
        assert_eq!(call.name, "conveyor_1_run");
        assert_eq!(call.args, vec![Arg::Str("forward".into()), Arg::Int(13)]);
        assert_eq!(out.to_string(), TABLE_EXAMPLE);
    }

    #[test]
    fn sentinel() {
        let out = parse_output(r#"{"reason":"idle","command":"no_action"}"#).unwrap();
        assert_eq!(out, AgentOutput::no_action("idle"));
    }

    #[test]
    fn fenced_output_is_accepted() {
        let fenced = format!("```json\n{TABLE_EXAMPLE}\n```");
        assert_eq!(parse_output(&fenced).unwrap(), parse_output(TABLE_EXAMPLE).unwrap());
        let bare = format!("```{TABLE_EXAMPLE}```");
        assert!(parse_output(&bare).is_ok());
    }

    #[test]
    fn rejects() {
        assert!(matches!(
            parse_output(r#"{"reason":"x","command":"run(--)"}"#),
            Err(OutputError::BadCommandSyntax { .. })
        ));
        for bad in [
            "not json",
            "[1, 2]",
            r#"{"reason":"x"}"#,
            r#"{"command":"f()"}"#,
            r#"{"reason":"x","command":"f()","extra":1}"#,
            r#"{"reason":3,"command":"f()"}"#,
        ] {
            assert!(matches!(parse_output(bad), Err(OutputError::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn display_escapes_json() {
        let out = AgentOutput::new("say \"hi\"", "f('a')".parse::<FunctionCall>().unwrap());
        assert_eq!(parse_output(&out.to_string()).unwrap(), out);
    }
}
