//! Function-call commands such as `conveyor_1_run('forward', 13)`.
//!
//! The canonical rendering quotes strings with single quotes (escaping `\`
//! and `'` with a backslash), writes integers bare and separates arguments
//! with `, `. The parser is more lenient: it accepts double-quoted strings and
//! arbitrary whitespace, so structurally equal calls compare equal no matter
//! how a model formatted them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Arg {
    Str(String),
    Int(i64),
}

impl Arg {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Arg::Str(s) => Some(s),
            Arg::Int(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Arg::Int(i) => Some(*i),
            Arg::Str(_) => None,
        }
    }

    /// Plain value without quoting, used when filling text templates.
    pub fn plain(&self) -> String {
        match self {
            Arg::Str(s) => s.clone(),
            Arg::Int(i) => i.to_string(),
        }
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Int(i) => write!(f, "{i}"),
            Arg::Str(s) => {
                f.write_str("'")?;
                for c in s.chars() {
                    match c {
                        '\\' | '\'' => write!(f, "\\{c}")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                f.write_str("'")
            }
        }
    }
}

impl From<&str> for Arg {
    fn from(s: &str) -> Self {
        Arg::Str(s.to_string())
    }
}

impl From<String> for Arg {
    fn from(s: String) -> Self {
        Arg::Str(s)
    }
}

impl From<i64> for Arg {
    fn from(i: i64) -> Self {
        Arg::Int(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionCall {
    pub name: String,
    pub args: Vec<Arg>,
}

impl FunctionCall {
    pub fn new(name: impl Into<String>, args: Vec<Arg>) -> Self {
        Self {
            name: name.into(),
            args,
        }
    }
}

impl fmt::Display for FunctionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{arg}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad command syntax at offset {offset}: {message}")]
pub struct CallSyntaxError {
    pub offset: usize,
    pub message: String,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn err(&self, message: impl Into<String>) -> CallSyntaxError {
        CallSyntaxError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), CallSyntaxError> {
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(self.err(format!("expected '{want}', found '{c}'"))),
            None => Err(self.err(format!("expected '{want}', found end of input"))),
        }
    }

    fn identifier(&mut self) -> Result<&'a str, CallSyntaxError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        let ident = &self.src[start..self.pos];
        if !is_identifier(ident) {
            return Err(CallSyntaxError {
                offset: start,
                message: "expected a function name".into(),
            });
        }
        Ok(ident)
    }

    fn string(&mut self, quote: char) -> Result<String, CallSyntaxError> {
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string")),
                Some('\\') => match self.bump() {
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some(c) => return Err(self.err(format!("unknown escape '\\{c}'"))),
                    None => return Err(self.err("unterminated escape")),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn integer(&mut self) -> Result<i64, CallSyntaxError> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        self.src[start..self.pos].parse().map_err(|_| CallSyntaxError {
            offset: start,
            message: "expected an integer".into(),
        })
    }

    fn arg(&mut self) -> Result<Arg, CallSyntaxError> {
        match self.peek() {
            Some(q @ ('\'' | '"')) => self.string(q).map(Arg::Str),
            Some(c) if c == '-' || c.is_ascii_digit() => self.integer().map(Arg::Int),
            Some(c) => Err(self.err(format!("unexpected '{c}' in argument list"))),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

impl FromStr for FunctionCall {
    type Err = CallSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut cur = Cursor { src: s, pos: 0 };
        cur.skip_ws();
        let name = cur.identifier()?.to_string();
        cur.skip_ws();
        cur.expect('(')?;
        cur.skip_ws();
        let mut args = Vec::new();
        if cur.peek() == Some(')') {
            cur.bump();
        } else {
            loop {
                cur.skip_ws();
                args.push(cur.arg()?);
                cur.skip_ws();
                match cur.bump() {
                    Some(',') => continue,
                    Some(')') => break,
                    Some(c) => return Err(cur.err(format!("expected ',' or ')', found '{c}'"))),
                    None => return Err(cur.err("missing ')'")),
                }
            }
        }
        cur.skip_ws();
        if cur.pos != s.len() {
            return Err(cur.err("trailing characters after ')'"));
        }
        Ok(FunctionCall { name, args })
    }
}

impl Serialize for FunctionCall {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FunctionCall {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_storage_commands() {
        let fc: FunctionCall = "conveyor_1_run('forward', 13)".parse().unwrap();
        assert_eq!(fc.name, "conveyor_1_run");
        assert_eq!(fc.args, vec![Arg::from("forward"), Arg::Int(13)]);

        let release: FunctionCall = "H1_release()".parse().unwrap();
        assert_eq!(release.args, vec![]);
        assert_eq!(release.to_string(), "H1_release()");
    }

    #[test]
    fn whitespace_and_quotes_are_normalized() {
        let a: FunctionCall = "conveyor_1_run( 'forward',13 )".parse().unwrap();
        let b: FunctionCall = "  conveyor_1_run(\"forward\", 13)\n".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "conveyor_1_run('forward', 13)");
    }

    #[test]
    fn escapes_single_quotes() {
        let fc = FunctionCall::new(
            "assign_task",
            vec!["Storage Station".into(), "retrieve a 'white plastic cylinder'".into()],
        );
        let text = fc.to_string();
        assert_eq!(
            text,
            r"assign_task('Storage Station', 'retrieve a \'white plastic cylinder\'')"
        );
        assert_eq!(text.parse::<FunctionCall>().unwrap(), fc);
        let dq: FunctionCall = r#"assign_task("Storage Station", "retrieve a 'white plastic cylinder'")"#
            .parse()
            .unwrap();
        assert_eq!(dq, fc);
    }

    #[test]
    fn rejects_bad_syntax() {
        for bad in [
            "run(--)",
            "run(",
            "run)",
            "1run()",
            "run('a',)",
            "run('a' 'b')",
            "run('open)",
            "run() extra",
            "",
            "run(forward)",
        ] {
            assert!(bad.parse::<FunctionCall>().is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn negative_integers() {
        let fc: FunctionCall = "move(-5)".parse().unwrap();
        assert_eq!(fc.args, vec![Arg::Int(-5)]);
    }
}
