//! Session orchestration: plant → observer → log → agents.
//!
//! A session owns all mutable state. Each [`Session::advance`] ticks the
//! plant once, renders the changes into events, runs scheduled actions for
//! the new second and then steps agents until none has unseen events (or the
//! round cap is hit). Backend calls happen inside the step, so simulated time
//! stands still while an agent thinks.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    manager_action, sentence, summarize, Agent, AgentCommand, AgentConfig, AgentOutput, AgentRole,
    BackendError, ConfigError, Decision, LlmBackend, ManagerAction, RemoteBackend, RemoteConfig,
    ResolvedAgent, ScriptedBackend, SummaryError, PLANNER_SCOPE, PLANT_SCOPE,
};
use crate::call::FunctionCall;
use crate::dataset::{
    build_suite, sample_dataset, Category, Dataset, DatasetError, RecordedCommand, RecordingWarning,
    TestSuite,
};
use crate::event::{ClockTime, Event, EventDraft, EventError, EventLog, SemanticLevel, Source, Subscription};
use crate::observer::{load_rules, ObserverError, RuleSet};
use crate::script::{Script, ScriptAction, ScriptEntry};
use crate::sim::{Disturbance, LayoutConfig, LayoutError, Plant, PlantState, SimError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Rules(#[from] ObserverError),
    #[error(transparent)]
    Agent(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no proposal with id {0}")]
    UnknownProposal(u64),
    #[error("proposal {id} is already {status:?}")]
    Conflict { id: u64, status: ProposalStatus },
    #[error("recording needs agents disabled or approval mode on")]
    RecordingNotAllowed,
    #[error("no recording is in progress")]
    NotRecording,
    #[error("a recording is already in progress")]
    AlreadyRecording,
    #[error("a task description is required to finish a recording")]
    EmptyTaskDescription,
    #[error("no summarizer agent is configured")]
    NoSummarizer,
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error("cannot schedule an action at t={at}: the session is already at t={now}")]
    InThePast { at: u64, now: u64 },
    #[error("unknown module {0:?}")]
    UnknownModule(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Lockstep,
    Realtime,
}

/// A layout or rule file: `"bundled"`, a path relative to the config file,
/// or an inline JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resource {
    Named(String),
    Inline(serde_json::Value),
}

impl Default for Resource {
    fn default() -> Self {
        Resource::Named("bundled".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Scripted(ScriptedBackend),
    /// Reference answers from a dataset file (`"bundled"` for the sample).
    Oracle { dataset: String },
    Remote(RemoteConfig),
}

fn default_tick_rate() -> f64 {
    1.0
}

fn default_rounds() -> usize {
    8
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub layout: Resource,
    #[serde(default)]
    pub rules: Resource,
    #[serde(default)]
    pub epoch: ClockTime,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub approval_required: bool,
    /// Ticks per wall-clock second in real-time mode.
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    /// Upper bound on agent rounds per tick.
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "yes")]
    pub agents_enabled: bool,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

const DEMO_CONFIG: &str = include_str!("../assets/demo-session.json");

fn read(path: &Path) -> Result<String, SessionError> {
    std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl SessionConfig {
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, SessionError> {
        let mut config: SessionConfig =
            serde_json::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        config.base_dir = base_dir.map(Path::to_path_buf);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        Self::parse(&read(path)?, path.parent())
    }

    /// Bundled demo: storage retrieval with scripted SOP-following agents.
    pub fn demo() -> Self {
        Self::parse(DEMO_CONFIG, None).expect("bundled demo config is valid")
    }

    pub fn demo_text() -> &'static str {
        DEMO_CONFIG
    }

    fn resolve_path(&self, name: &str) -> PathBuf {
        match &self.base_dir {
            Some(dir) => dir.join(name),
            None => PathBuf::from(name),
        }
    }

    fn resource_text(&self, resource: &Resource, bundled: &str) -> Result<String, SessionError> {
        match resource {
            Resource::Named(name) if name == "bundled" => Ok(bundled.to_string()),
            Resource::Named(name) => read(&self.resolve_path(name)),
            Resource::Inline(value) => Ok(value.to_string()),
        }
    }

    pub fn layout(&self) -> Result<LayoutConfig, SessionError> {
        Ok(LayoutConfig::parse(
            &self.resource_text(&self.layout, LayoutConfig::bundled_text())?,
        )?)
    }

    pub fn rules(&self) -> Result<RuleSet, SessionError> {
        Ok(load_rules(&self.resource_text(&self.rules, RuleSet::bundled_text())?)?)
    }

    pub fn backends(&self) -> Result<BTreeMap<String, Arc<dyn LlmBackend>>, SessionError> {
        let mut out: BTreeMap<String, Arc<dyn LlmBackend>> = BTreeMap::new();
        for (id, spec) in &self.backends {
            let backend: Arc<dyn LlmBackend> = match spec {
                BackendSpec::Scripted(s) => Arc::new(s.clone()),
                BackendSpec::Oracle { dataset } => {
                    let ds = if dataset == "bundled" {
                        sample_dataset()
                    } else {
                        Dataset::import_tests(&self.resolve_path(dataset))?
                    };
                    Arc::new(ds.oracle(id))
                }
                BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::new(id.clone(), cfg.clone())?),
            };
            out.insert(id.clone(), backend);
        }
        Ok(out)
    }

    pub fn resolve_agents(&self, layout: &LayoutConfig) -> Result<Vec<ResolvedAgent>, SessionError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for agent in &self.agents {
            if !seen.insert(agent.id.as_str()) {
                return Err(SessionError::Config(format!("duplicate agent id {:?}", agent.id)));
            }
            if !self.backends.contains_key(&agent.backend) {
                return Err(SessionError::Config(format!(
                    "agent {:?} refers to unknown backend {:?}",
                    agent.id, agent.backend
                )));
            }
            out.push(agent.resolve(layout)?);
        }
        if out.iter().filter(|a| a.role == AgentRole::Summarizer).count() > 1 {
            return Err(SessionError::Config("at most one summarizer is supported".into()));
        }
        if !(self.tick_rate > 0.0) {
            return Err(SessionError::Config("tick_rate must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(SessionError::Config("max_rounds must be at least 1".into()));
        }
        Ok(out)
    }

    /// Loads every referenced resource without starting anything.
    pub fn validate(&self) -> Result<(), SessionError> {
        Session::new(self).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Approved,
    Rejected,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: u64,
    pub agent: String,
    pub output: AgentOutput,
    pub created: u64,
    pub status: ProposalStatus,
}

/// One status transition of a proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub proposal: u64,
    pub agent: String,
    pub command: String,
    pub at: u64,
    pub status: ProposalStatus,
}

pub struct Session {
    plant: Plant,
    rules: RuleSet,
    log: EventLog,
    agents: Vec<Agent>,
    summarizer: Option<(ResolvedAgent, Arc<dyn LlmBackend>)>,
    backends: BTreeMap<String, Arc<dyn LlmBackend>>,
    mode: Mode,
    tick_rate: f64,
    approval_required: bool,
    agents_enabled: bool,
    max_rounds: usize,
    schedule: VecDeque<ScriptEntry>,
    started: bool,
    proposals: Vec<Proposal>,
    journal: Vec<JournalEntry>,
    recording: Option<Vec<RecordedCommand>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("now", &self.now())
            .field("events", &self.log.len())
            .field("agents", &self.agents)
            .finish()
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Session {
    pub fn new(config: &SessionConfig) -> Result<Self, SessionError> {
        let layout = config.layout()?;
        layout.validate()?;
        let rules = config.rules()?;
        let resolved = config.resolve_agents(&layout)?;
        let backends = config.backends()?;
        let mut agents = Vec::new();
        let mut summarizer = None;
        for (cfg, agent) in config.agents.iter().zip(resolved) {
            let backend = Arc::clone(&backends[&cfg.backend]);
            if agent.role == AgentRole::Summarizer {
                summarizer = Some((agent, backend));
            } else {
                agents.push(Agent::new(agent, backend));
            }
        }
        Ok(Self {
            plant: Plant::new(layout),
            rules,
            log: EventLog::new(config.epoch),
            agents,
            summarizer,
            backends,
            mode: config.mode,
            tick_rate: config.tick_rate,
            approval_required: config.approval_required,
            agents_enabled: config.agents_enabled,
            max_rounds: config.max_rounds,
            schedule: VecDeque::new(),
            started: false,
            proposals: Vec::new(),
            journal: Vec::new(),
            recording: None,
        })
    }

    /// A session with no agents, for pure simulation runs.
    pub fn plain(epoch: ClockTime) -> Self {
        let config = SessionConfig {
            epoch,
            ..SessionConfig::default()
        };
        Self::new(&config).expect("bundled resources are valid")
    }

    pub fn now(&self) -> u64 {
        self.plant.now()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn snapshot(&self) -> PlantState {
        self.plant.snapshot()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tick_rate(&self) -> f64 {
        self.tick_rate
    }

    pub fn approval_required(&self) -> bool {
        self.approval_required
    }

    pub fn agents_enabled(&self) -> bool {
        self.agents_enabled
    }

    pub fn set_agents_enabled(&mut self, enabled: bool) {
        self.agents_enabled = enabled;
    }

    pub fn agents(&self) -> impl Iterator<Item = &ResolvedAgent> {
        self.agents
            .iter()
            .map(Agent::config)
            .chain(self.summarizer.as_ref().map(|(a, _)| a))
    }

    pub fn backend(&self, id: &str) -> Option<Arc<dyn LlmBackend>> {
        self.backends.get(id).cloned()
    }

    pub fn backend_ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Registers an in-order callback for every future event.
    pub fn subscribe(&mut self, listener: impl FnMut(&Event) + Send + 'static) {
        self.log.subscribe(listener);
    }

    fn emit(&mut self, drafts: impl IntoIterator<Item = EventDraft>) -> Result<Vec<u64>, SessionError> {
        let mut seqs = Vec::new();
        for d in drafts {
            seqs.push(self.log.append_draft(d)?);
        }
        Ok(seqs)
    }

    fn emit_one(
        &mut self,
        scope: &str,
        source: Source,
        level: SemanticLevel,
        text: &str,
    ) -> Result<u64, SessionError> {
        let now = self.now();
        Ok(self.log.append(scope, source, level, one_line(text), now)?)
    }

    /// Time of the next unprocessed second.
    fn processing_time(&self) -> u64 {
        if self.started {
            self.now() + 1
        } else {
            0
        }
    }

    pub fn schedule(&mut self, entries: impl IntoIterator<Item = ScriptEntry>) -> Result<(), SessionError> {
        for entry in entries {
            let earliest = self.processing_time();
            if entry.at < earliest {
                return Err(SessionError::InThePast {
                    at: entry.at,
                    now: self.now(),
                });
            }
            let pos = self.schedule.partition_point(|e| e.at <= entry.at);
            self.schedule.insert(pos, entry);
        }
        Ok(())
    }

    /// Processes the next second of simulated time.
    pub fn advance(&mut self) -> Result<(), SessionError> {
        if self.started {
            let changes = self.plant.tick();
            let now = self.now();
            for change in &changes {
                let drafts = self.rules.on_change(change, now);
                self.emit(drafts)?;
            }
        } else {
            self.started = true;
        }
        while self.schedule.front().is_some_and(|e| e.at <= self.now()) {
            let entry = self.schedule.pop_front().expect("checked non-empty");
            self.run_action(entry.action)?;
        }
        if self.agents_enabled {
            self.step_agents()?;
        }
        Ok(())
    }

    pub fn run_until(&mut self, until: u64) -> Result<(), SessionError> {
        while !self.started || self.now() < until {
            self.advance()?;
        }
        Ok(())
    }

    fn run_action(&mut self, action: ScriptAction) -> Result<(), SessionError> {
        match action {
            ScriptAction::Invoke {
                module,
                call,
                note,
                category,
            } => match self.invoke_manual(&module, &call, note, category) {
                Ok(_) | Err(SessionError::Sim(_)) => Ok(()),
                Err(e) => Err(e),
            },
            ScriptAction::AssignTask {
                module,
                task,
                note,
                category,
            } => {
                self.journal_command(
                    AgentRole::Manager,
                    PLANNER_SCOPE,
                    FunctionCall::new("assign_task", vec![module.as_str().into(), task.as_str().into()]),
                    note,
                    category,
                );
                self.assign_task(&module, &task).map(|_| ())
            }
            ScriptAction::UserTask { text } => self.user_task(&text).map(|_| ()),
            ScriptAction::Inject { disturbance } => self.inject(&disturbance).map(|_| ()),
        }
    }

    fn journal_command(
        &mut self,
        role: AgentRole,
        scope: &str,
        call: FunctionCall,
        note: Option<String>,
        category: Option<Category>,
    ) {
        let Some(commands) = &self.recording else {
            return;
        };
        let agent = self
            .agents
            .iter()
            .map(Agent::config)
            .find(|a| a.role == role && (role != AgentRole::Operator || a.scope == scope))
            .map_or_else(|| format!("{role}:{scope}"), |a| a.id.clone());
        let cursor = self.log.last_seq();
        let at = self.now();
        let mut commands = commands.clone();
        commands.push(RecordedCommand {
            agent,
            at,
            cursor,
            call,
            reason: note.unwrap_or_default(),
            category: category.unwrap_or_default(),
        });
        self.recording = Some(commands);
    }

    /// Executes a function call on a module and logs its events. Failures are
    /// logged as a System event and returned.
    fn dispatch_call(&mut self, module: &str, call: &FunctionCall) -> Result<Vec<u64>, SessionError> {
        match self.plant.invoke(module, call) {
            Ok(changes) => {
                let now = self.now();
                let mut seqs = Vec::new();
                for change in &changes {
                    let drafts = self.rules.on_change(change, now);
                    seqs.extend(self.emit(drafts)?);
                }
                Ok(seqs)
            }
            Err(e) => {
                if self.plant.layout().module(module).is_some() {
                    self.emit_one(
                        module,
                        Source::System,
                        SemanticLevel::Control,
                        &format!("function call rejected: {call}: {e}."),
                    )?;
                }
                Err(e.into())
            }
        }
    }

    /// A human-issued function call. Journaled while recording.
    pub fn invoke_manual(
        &mut self,
        module: &str,
        call: &FunctionCall,
        note: Option<String>,
        category: Option<Category>,
    ) -> Result<Vec<u64>, SessionError> {
        let known = self
            .plant
            .layout()
            .module(module)
            .is_some_and(|m| m.function(&call.name).is_some());
        if known {
            self.journal_command(AgentRole::Operator, module, call.clone(), note, category);
        }
        self.dispatch_call(module, call)
    }

    pub fn invoke(&mut self, module: &str, call: &FunctionCall) -> Result<Vec<u64>, SessionError> {
        self.invoke_manual(module, call, None, None)
    }

    /// Logs a task assignment and its delivery to the module.
    pub fn assign_task(&mut self, module: &str, task: &str) -> Result<Vec<u64>, SessionError> {
        if self.plant.layout().module(module).is_none() {
            return Err(SessionError::UnknownModule(module.to_string()));
        }
        let task = sentence(&one_line(task));
        Ok(vec![
            self.emit_one(
                PLANNER_SCOPE,
                Source::Manager,
                SemanticLevel::Control,
                &format!("task assigned: {task}"),
            )?,
            self.emit_one(
                module,
                Source::System,
                SemanticLevel::Control,
                &format!("task received: {task}"),
            )?,
        ])
    }

    pub fn user_task(&mut self, text: &str) -> Result<u64, SessionError> {
        let text = sentence(&one_line(text));
        if text == "." {
            return Err(SessionError::Config("task text must not be empty".into()));
        }
        self.emit_one(
            PLANNER_SCOPE,
            Source::User,
            SemanticLevel::Planning,
            &format!("user task: {text}"),
        )
    }

    pub fn inject(&mut self, disturbance: &Disturbance) -> Result<Vec<u64>, SessionError> {
        let changes = self.plant.inject(disturbance)?;
        let now = self.now();
        let mut seqs = Vec::new();
        for change in &changes {
            let drafts = self.rules.on_change(change, now);
            seqs.extend(self.emit(drafts)?);
        }
        Ok(seqs)
    }

    /// Steps agents until none has unseen events or the round cap is reached.
    pub fn step_agents(&mut self) -> Result<(), SessionError> {
        for _ in 0..self.max_rounds {
            let mut stepped = false;
            for i in 0..self.agents.len() {
                let Some(decision) = self.agents[i].decide(&self.log) else {
                    continue;
                };
                stepped = true;
                self.handle_decision(i, decision)?;
            }
            if !stepped {
                break;
            }
        }
        Ok(())
    }

    fn handle_decision(&mut self, index: usize, decision: Decision) -> Result<(), SessionError> {
        let (id, scope) = {
            let a = self.agents[index].config();
            (a.id.clone(), a.scope.clone())
        };
        match decision {
            Decision::Rejected { cause, .. } => {
                self.emit_one(
                    &scope,
                    Source::System,
                    SemanticLevel::Control,
                    &format!("agent output rejected: {cause}."),
                )?;
            }
            Decision::BackendFailed { cause, .. } => {
                self.emit_one(
                    &scope,
                    Source::System,
                    SemanticLevel::Control,
                    &format!("agent backend failed: {cause}."),
                )?;
            }
            Decision::Output { output, .. } => {
                if output.command == AgentCommand::NoAction {
                    return Ok(());
                }
                if self.approval_required {
                    self.propose(&id, output);
                } else {
                    self.dispatch_agent(index, &output)?;
                }
            }
        }
        Ok(())
    }

    fn dispatch_agent(&mut self, index: usize, output: &AgentOutput) -> Result<(), SessionError> {
        let Some(call) = output.command.as_call() else {
            return Ok(());
        };
        let agent = self.agents[index].config();
        let (role, scope) = (agent.role, agent.scope.clone());
        match role {
            AgentRole::Operator => match self.dispatch_call(&scope, call) {
                Ok(_) | Err(SessionError::Sim(_)) => Ok(()),
                Err(e) => Err(e),
            },
            AgentRole::Manager => {
                let rejected = |cause: String| format!("agent output rejected: {cause}.");
                match manager_action(call) {
                    Ok(ManagerAction::Assign { module, task }) => {
                        match self.assign_task(&module, &task) {
                            Err(SessionError::UnknownModule(m)) => {
                                let text = rejected(format!("unknown module {m:?}"));
                                self.emit_one(PLANNER_SCOPE, Source::System, SemanticLevel::Control, &text)?;
                            }
                            other => {
                                other?;
                            }
                        }
                    }
                    Ok(ManagerAction::Done { module }) => {
                        self.emit_one(
                            PLANNER_SCOPE,
                            Source::Manager,
                            SemanticLevel::Control,
                            &format!("task done: {module}."),
                        )?;
                    }
                    Err(cause) => {
                        self.emit_one(PLANNER_SCOPE, Source::System, SemanticLevel::Control, &rejected(cause))?;
                    }
                }
                Ok(())
            }
            AgentRole::Summarizer => Ok(()),
        }
    }

    fn record_transition(&mut self, index: usize, status: ProposalStatus) {
        let p = &mut self.proposals[index];
        p.status = status;
        self.journal.push(JournalEntry {
            proposal: p.id,
            agent: p.agent.clone(),
            command: p.output.command.to_string(),
            at: self.plant.now(),
            status,
        });
    }

    fn propose(&mut self, agent: &str, output: AgentOutput) {
        for i in 0..self.proposals.len() {
            if self.proposals[i].agent == agent && self.proposals[i].status == ProposalStatus::Pending {
                self.record_transition(i, ProposalStatus::Expired);
            }
        }
        let id = self.proposals.len() as u64 + 1;
        self.proposals.push(Proposal {
            id,
            agent: agent.to_string(),
            output,
            created: self.now(),
            status: ProposalStatus::Pending,
        });
        self.record_transition(self.proposals.len() - 1, ProposalStatus::Pending);
    }

    fn pending_index(&self, id: u64) -> Result<usize, SessionError> {
        let index = self
            .proposals
            .iter()
            .position(|p| p.id == id)
            .ok_or(SessionError::UnknownProposal(id))?;
        match self.proposals[index].status {
            ProposalStatus::Pending => Ok(index),
            status => Err(SessionError::Conflict { id, status }),
        }
    }

    /// Approves a pending proposal and dispatches its command exactly once.
    pub fn approve(&mut self, id: u64) -> Result<(), SessionError> {
        let index = self.pending_index(id)?;
        self.record_transition(index, ProposalStatus::Approved);
        let proposal = self.proposals[index].clone();
        let Some(agent_index) = self.agents.iter().position(|a| a.id() == proposal.agent) else {
            return Ok(());
        };
        if let Some(call) = proposal.output.command.as_call() {
            let (role, scope) = {
                let a = self.agents[agent_index].config();
                (a.role, a.scope.clone())
            };
            self.journal_command(role, &scope, call.clone(), Some(proposal.output.reason.clone()), None);
        }
        self.dispatch_agent(agent_index, &proposal.output)
    }

    pub fn reject(&mut self, id: u64) -> Result<(), SessionError> {
        let index = self.pending_index(id)?;
        self.record_transition(index, ProposalStatus::Rejected);
        Ok(())
    }

    pub fn start_recording(&mut self) -> Result<(), SessionError> {
        if self.agents_enabled && !self.approval_required && !self.agents.is_empty() {
            return Err(SessionError::RecordingNotAllowed);
        }
        if self.recording.is_some() {
            return Err(SessionError::AlreadyRecording);
        }
        self.recording = Some(Vec::new());
        Ok(())
    }

    pub fn recorded_commands(&self) -> Option<&[RecordedCommand]> {
        self.recording.as_deref()
    }

    /// Ends the recording and turns it into a suite.
    pub fn stop_recording(
        &mut self,
        name: &str,
        task_description: &str,
    ) -> Result<(TestSuite, Vec<RecordingWarning>), SessionError> {
        if self.recording.is_none() {
            return Err(SessionError::NotRecording);
        }
        if task_description.trim().is_empty() {
            return Err(SessionError::EmptyTaskDescription);
        }
        let commands = self.recording.take().unwrap_or_default();
        let agents: BTreeMap<String, ResolvedAgent> =
            self.agents().map(|a| (a.id.clone(), a.clone())).collect();
        Ok(build_suite(name, task_description.trim(), &self.log, &agents, &commands))
    }

    /// Wraps suites into a dataset carrying the prompt sections they need.
    pub fn dataset(&self, suites: Vec<TestSuite>) -> Dataset {
        let used: std::collections::BTreeSet<&str> = suites
            .iter()
            .flat_map(|s| s.cases.iter().map(|c| c.agent.as_str()))
            .collect();
        Dataset {
            epoch: self.log.epoch(),
            agents: self
                .agents()
                .filter(|a| used.contains(a.id.as_str()))
                .map(|a| (a.id.clone(), a.clone()))
                .collect(),
            suites,
            notes: Vec::new(),
        }
    }

    /// Runs the summarizer and logs its report.
    pub fn summary(&mut self) -> Result<String, SessionError> {
        let (agent, backend) = self.summarizer.as_ref().ok_or(SessionError::NoSummarizer)?;
        let text = summarize(agent, backend.as_ref(), &self.log)?;
        self.emit_one(PLANT_SCOPE, Source::Summarizer, SemanticLevel::Planning, &text)?;
        Ok(text)
    }

    pub fn persist(&self, dir: &Path) -> std::io::Result<()> {
        self.log.persist(dir)
    }
}

/// Runs a script in a fresh agent-free session and returns the rendered view.
pub fn replay(script: &Script) -> Result<Vec<String>, SessionError> {
    let mut session = Session::plain(script.header.epoch.unwrap_or_default());
    session.schedule(script.entries.iter().cloned())?;
    session.run_until(script.header.until)?;
    let view = script
        .header
        .view
        .clone()
        .unwrap_or_else(Subscription::everything);
    let log = session.log();
    Ok(log.render_all(&log.view(&view, 0)))
}

/// Runs a script under `config` with agents off, recording every manual
/// command, and returns the resulting suite.
pub fn record_script(
    config: &SessionConfig,
    script: &Script,
    name: &str,
    task_description: &str,
) -> Result<(Session, TestSuite, Vec<RecordingWarning>), SessionError> {
    let mut session = Session::new(config)?;
    session.set_agents_enabled(false);
    session.start_recording()?;
    session.schedule(script.entries.iter().cloned())?;
    session.run_until(script.header.until)?;
    let (suite, warnings) = session.stop_recording(name, task_description)?;
    Ok((session, suite, warnings))
}

const FIG3_SCRIPT: &str = include_str!("../assets/scripts/storage-retrieval.jsonl");
const FIG6_SCRIPT: &str = include_str!("../assets/scripts/storage-export.jsonl");
const FAULT_SCRIPT: &str = include_str!("../assets/scripts/bg51-fault.jsonl");
const DEMO_SCENARIO: &str = include_str!("../assets/scripts/demo-scenario.jsonl");

/// Bundled scripts by name.
pub fn bundled_script(name: &str) -> Option<Script> {
    let text = match name {
        "storage-retrieval" => FIG3_SCRIPT,
        "storage-export" => FIG6_SCRIPT,
        "bg51-fault" => FAULT_SCRIPT,
        "demo-scenario" => DEMO_SCENARIO,
        _ => return None,
    };
    Some(Script::parse_str(text).expect("bundled scripts are valid"))
}

pub const BUNDLED_SCRIPTS: [&str; 4] = ["storage-retrieval", "storage-export", "bg51-fault", "demo-scenario"];

/// Regenerates the bundled sample dataset from the bundled recording scripts.
pub fn build_sample_dataset() -> Result<Dataset, SessionError> {
    let config = SessionConfig::demo();
    let mut suites = Vec::new();
    let mut session_for_agents = None;
    for name in ["storage-retrieval", "storage-export", "bg51-fault"] {
        let script = bundled_script(name).expect("bundled");
        let task = script
            .header
            .task
            .clone()
            .unwrap_or_else(|| name.to_string());
        let (session, suite, _) = record_script(&config, &script, name, &task)?;
        suites.push(suite);
        session_for_agents = Some(session);
    }
    let session = session_for_agents.expect("three scripts");
    let mut dataset = session.dataset(suites);
    dataset.notes = vec![
        "Recorded from manually operated bundled scripts; reasons curated in the scripts.".into(),
    ];
    Ok(dataset)
}
