//! Append-only event log memory.
//!
//! Every state change in the plant, every agent decision and every human
//! action ends up here as a single line of natural language. The log assigns
//! a global sequence number, which is the authoritative order; the simulated
//! clock is only display metadata (several events routinely share a second).
//!
//! Agents never see the log directly. They see a [`Subscription`] view, which
//! is always a subsequence of the full log.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Level of the automation pyramid an event is phrased for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticLevel {
    Field,
    Control,
    Planning,
}

impl SemanticLevel {
    pub const ALL: [SemanticLevel; 3] = [Self::Field, Self::Control, Self::Planning];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Field => "field",
            Self::Control => "control",
            Self::Planning => "planning",
        }
    }
}

impl fmt::Display for SemanticLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticLevel {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "field" => Ok(Self::Field),
            "control" => Ok(Self::Control),
            "planning" => Ok(Self::Planning),
            other => Err(EventError::UnknownLevel(other.to_string())),
        }
    }
}

/// Who emitted an event. Rendered verbatim as the second bracket label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    System,
    Operator,
    Manager,
    User,
    Summarizer,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Self::System,
        Self::Operator,
        Self::Manager,
        Self::User,
        Self::Summarizer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "System",
            Self::Operator => "Operator",
            Self::Manager => "Manager",
            Self::User => "User",
            Self::Summarizer => "Summarizer",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| EventError::UnknownSource(s.to_string()))
    }
}

/// Wall-clock style time of day, `HH:MM:SS`, 24-hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(u32);

/// Display origin used when none is configured.
pub const DEFAULT_EPOCH: ClockTime = ClockTime(12 * 3600);

impl Default for ClockTime {
    fn default() -> Self {
        DEFAULT_EPOCH
    }
}

impl ClockTime {
    const DAY: u64 = 86_400;

    pub fn from_hms(h: u32, m: u32, s: u32) -> Result<Self, EventError> {
        if h > 23 || m > 59 || s > 59 {
            return Err(EventError::BadClock(format!("{h:02}:{m:02}:{s:02}")));
        }
        Ok(Self(h * 3600 + m * 60 + s))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// Display time of a session-relative instant, wrapping at midnight.
    pub fn offset(self, sim_time: u64) -> ClockTime {
        ClockTime(((self.0 as u64 + sim_time) % Self::DAY) as u32)
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, m, s) = (self.0 / 3600, (self.0 / 60) % 60, self.0 % 60);
        write!(f, "{h:02}:{m:02}:{s:02}")
    }
}

impl FromStr for ClockTime {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EventError::BadClock(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.len() != 2) {
            return Err(bad());
        }
        let nums: Vec<u32> = parts
            .iter()
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        ClockTime::from_hms(nums[0], nums[1], nums[2])
    }
}

impl Serialize for ClockTime {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClockTime {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("event text must not be empty")]
    EmptyText,
    #[error("event text must be a single line")]
    LineBreak,
    #[error("invalid scope label {0:?}")]
    BadScope(String),
    #[error("simulated time went backwards: last event at {last}s, new event at {got}s")]
    TimeRegression { last: u64, got: u64 },
    #[error("unknown semantic level {0:?}")]
    UnknownLevel(String),
    #[error("unknown event source {0:?}")]
    UnknownSource(String),
    #[error("invalid clock time {0:?}")]
    BadClock(String),
    #[error("malformed event line {0:?}")]
    MalformedLine(String),
}

/// One entry of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub sim_time: u64,
    pub scope: String,
    pub source: Source,
    pub level: SemanticLevel,
    pub text: String,
}

impl Event {
    pub fn render(&self, epoch: ClockTime) -> String {
        RenderedLine {
            scope: self.scope.clone(),
            source: self.source,
            clock: epoch.offset(self.sim_time),
            text: self.text.clone(),
        }
        .to_string()
    }
}

/// An event that has not been sequenced yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDraft {
    pub sim_time: u64,
    pub scope: String,
    pub source: Source,
    pub level: SemanticLevel,
    pub text: String,
}

/// The `[scope][source][HH:MM:SS] text` line format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedLine {
    pub scope: String,
    pub source: Source,
    pub clock: ClockTime,
    pub text: String,
}

impl fmt::Display for RenderedLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}][{}][{}] {}", self.scope, self.source, self.clock, self.text)
    }
}

impl FromStr for RenderedLine {
    type Err = EventError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || EventError::MalformedLine(line.to_string());
        let mut rest = line;
        let mut labels = Vec::with_capacity(3);
        for _ in 0..3 {
            rest = rest.strip_prefix('[').ok_or_else(bad)?;
            let end = rest.find(']').ok_or_else(bad)?;
            labels.push(&rest[..end]);
            rest = &rest[end + 1..];
        }
        let text = rest.strip_prefix(' ').ok_or_else(bad)?;
        validate_scope(labels[0])?;
        validate_text(text)?;
        Ok(RenderedLine {
            scope: labels[0].to_string(),
            source: labels[1].parse()?,
            clock: labels[2].parse()?,
            text: text.to_string(),
        })
    }
}

fn validate_text(text: &str) -> Result<(), EventError> {
    if text.contains(['\n', '\r']) {
        return Err(EventError::LineBreak);
    }
    if text.trim().is_empty() {
        return Err(EventError::EmptyText);
    }
    Ok(())
}

fn validate_scope(scope: &str) -> Result<(), EventError> {
    if scope.is_empty() || scope.contains(['[', ']', '\n', '\r']) {
        return Err(EventError::BadScope(scope.to_string()));
    }
    Ok(())
}

/// One selection rule of a subscription.
///
/// `scope` is an exact module label, `*`, or a prefix pattern ending in `*`.
/// Absent `sources`/`levels` mean "any".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub scope: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<BTreeSet<Source>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<BTreeSet<SemanticLevel>>,
}

impl Filter {
    pub fn scope(scope: impl Into<String>) -> Self {
        Self {
            scope: scope.into(),
            sources: None,
            levels: None,
        }
    }

    pub fn with_sources(mut self, sources: impl IntoIterator<Item = Source>) -> Self {
        self.sources = Some(sources.into_iter().collect());
        self
    }

    pub fn with_levels(mut self, levels: impl IntoIterator<Item = SemanticLevel>) -> Self {
        self.levels = Some(levels.into_iter().collect());
        self
    }

    pub fn matches(&self, event: &Event) -> bool {
        scope_matches(&self.scope, &event.scope)
            && self.sources.as_ref().is_none_or(|s| s.contains(&event.source))
            && self.levels.as_ref().is_none_or(|l| l.contains(&event.level))
    }
}

fn scope_matches(pattern: &str, scope: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => scope.starts_with(prefix),
        None => pattern == scope,
    }
}

/// Declarative selection over the log. An event is included iff at least one
/// filter matches; an empty subscription selects nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subscription {
    pub filters: Vec<Filter>,
}

impl Subscription {
    pub fn new(filters: Vec<Filter>) -> Self {
        Self { filters }
    }

    pub fn everything() -> Self {
        Self::new(vec![Filter::scope("*")])
    }

    pub fn matches(&self, event: &Event) -> bool {
        self.filters.iter().any(|f| f.matches(event))
    }
}

type Listener = Box<dyn FnMut(&Event) + Send>;

/// The event log memory. Append-only; iteration order is seq order.
pub struct EventLog {
    events: Vec<Event>,
    epoch: ClockTime,
    listeners: Vec<Listener>,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog")
            .field("events", &self.events.len())
            .field("epoch", &self.epoch)
            .field("listeners", &self.listeners.len())
            .finish()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new(ClockTime::default())
    }
}

impl EventLog {
    pub fn new(epoch: ClockTime) -> Self {
        Self {
            events: Vec::new(),
            epoch,
            listeners: Vec::new(),
        }
    }

    /// Rebuilds a log from previously persisted events, checking every
    /// ordering invariant on the way.
    pub fn from_events(epoch: ClockTime, events: Vec<Event>) -> Result<Self, EventError> {
        let mut log = Self::new(epoch);
        for ev in events {
            let seq = log.append(ev.scope, ev.source, ev.level, ev.text, ev.sim_time)?;
            if seq != ev.seq {
                return Err(EventError::MalformedLine(format!(
                    "expected seq {seq}, found {}",
                    ev.seq
                )));
            }
        }
        Ok(log)
    }

    pub fn epoch(&self) -> ClockTime {
        self.epoch
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn last_time(&self) -> Option<u64> {
        self.events.last().map(|e| e.sim_time)
    }

    pub fn get(&self, seq: u64) -> Option<&Event> {
        // seq values are 1..=n with no gaps
        seq.checked_sub(1).and_then(|i| self.events.get(i as usize))
    }

    /// Registers a callback invoked synchronously, in seq order, for every
    /// subsequently appended event.
    pub fn subscribe(&mut self, listener: impl FnMut(&Event) + Send + 'static) {
        self.listeners.push(Box::new(listener));
    }

    pub fn append(
        &mut self,
        scope: impl Into<String>,
        source: Source,
        level: SemanticLevel,
        text: impl Into<String>,
        sim_time: u64,
    ) -> Result<u64, EventError> {
        let scope = scope.into();
        let text = text.into();
        validate_scope(&scope)?;
        validate_text(&text)?;
        if let Some(last) = self.last_time() {
            if sim_time < last {
                return Err(EventError::TimeRegression { last, got: sim_time });
            }
        }
        let seq = self.last_seq() + 1;
        let event = Event {
            seq,
            sim_time,
            scope,
            source,
            level,
            text,
        };
        for listener in &mut self.listeners {
            listener(&event);
        }
        self.events.push(event);
        Ok(seq)
    }

    pub fn append_draft(&mut self, draft: EventDraft) -> Result<u64, EventError> {
        self.append(draft.scope, draft.source, draft.level, draft.text, draft.sim_time)
    }

    /// Events with `seq > from_seq` selected by `subscription`, in seq order.
    pub fn view(&self, subscription: &Subscription, from_seq: u64) -> Vec<Event> {
        self.events
            .iter()
            .skip(from_seq.min(self.events.len() as u64) as usize)
            .filter(|e| subscription.matches(e))
            .cloned()
            .collect()
    }

    pub fn render(&self, event: &Event) -> String {
        event.render(self.epoch)
    }

    pub fn render_all(&self, events: &[Event]) -> Vec<String> {
        events.iter().map(|e| e.render(self.epoch)).collect()
    }

    /// Writes `events.log` style output: one rendered line per event.
    pub fn write_rendered(&self, mut out: impl Write) -> std::io::Result<()> {
        for event in &self.events {
            writeln!(out, "{}", event.render(self.epoch))?;
        }
        Ok(())
    }

    /// Writes the JSONL sidecar carrying every field.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Persists both `events.log` and `events.jsonl` into `dir`.
    pub fn persist(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let log = std::fs::File::create(dir.join("events.log"))?;
        self.write_rendered(std::io::BufWriter::new(log))?;
        let jsonl = std::fs::File::create(dir.join("events.jsonl"))?;
        self.write_jsonl(std::io::BufWriter::new(jsonl))
    }

    pub fn read_jsonl(epoch: ClockTime, input: impl BufRead) -> Result<Self, EventError> {
        let mut events = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| EventError::MalformedLine(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line)
                .map_err(|e| EventError::MalformedLine(format!("line {}: {e}", idx + 1)))?;
            events.push(event);
        }
        Self::from_events(epoch, events)
    }
}
