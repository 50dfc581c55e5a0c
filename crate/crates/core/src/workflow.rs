//! The routed session graph. Control flow is fixed here; agents only fill
//! in their node's result. Every state change is an [`Event`], so a
//! session can be rebuilt from its log with [`reconstruct`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{
    analyze_and_propose, apply_repair, find_required_candidates, map_core, map_failure, plan_and_explain,
    retrieve_knowledge, route, AdaptationProposal, AgentContext, AgentError, AgentResult, AnalysisInput, Candidate,
    Intent,
};
use crate::llm::LlmProvider;
use crate::model::rdf::{cap, rdf_type, Term, Triple};
use crate::model::Iri;
use crate::smt::{PlanningResult, DEFAULT_MAX_HORIZON};
use crate::solver::SolverConfig;
use crate::store::{GraphStore, SnapshotId};

pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingUser,
    AwaitingHitl,
    Running,
    Done,
    Unresolvable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    ConfirmGoal,
    ApproveAdaptation,
    ConfirmFailureUpdate,
}

impl Checkpoint {
    pub fn node(self) -> &'static str {
        match self {
            Checkpoint::ConfirmGoal => "confirm_goal",
            Checkpoint::ApproveAdaptation => "approve_adaptation",
            Checkpoint::ConfirmFailureUpdate => "confirm_failure_update",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlRequest {
    pub id: String,
    pub checkpoint: Checkpoint,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Deny,
    Modify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlDecision {
    pub request_id: String,
    pub verdict: Verdict,
    /// Replacement payload for `modify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    pub actor: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    System,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub transcript: Vec<Turn>,
    pub intent: Option<Intent>,
    pub candidates: Option<Vec<Candidate>>,
    pub confirmed_goal: Option<Iri>,
    pub last_result: Option<PlanningResult>,
    pub pending_proposal: Option<AdaptationProposal>,
    pub pending_hitl: Option<HitlRequest>,
    pub iteration: usize,
    pub status: Status,
    /// Every decision taken in this session, in order.
    pub decisions: Vec<HitlDecision>,
    /// Visited graph nodes, in order.
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<SnapshotId>,
    hitl_counter: u64,
}

impl SessionState {
    pub fn new(id: impl Into<String>) -> Self {
        SessionState {
            id: id.into(),
            transcript: Vec::new(),
            intent: None,
            candidates: None,
            confirmed_goal: None,
            last_result: None,
            pending_proposal: None,
            pending_hitl: None,
            iteration: 0,
            status: Status::AwaitingUser,
            decisions: Vec::new(),
            path: Vec::new(),
            snapshots: Vec::new(),
            hitl_counter: 0,
        }
    }

    /// Folds one event into the state.
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::SessionStarted { session } => *self = SessionState::new(session.clone()),
            Event::UserTurn { text } => {
                self.transcript.push(Turn { speaker: Speaker::User, text: text.clone() });
                self.intent = None;
                self.candidates = None;
                self.pending_proposal = None;
                self.iteration = 0;
                self.status = Status::Running;
            }
            Event::SystemTurn { text } => self.transcript.push(Turn { speaker: Speaker::System, text: text.clone() }),
            Event::ErrorTurn { text } => self.transcript.push(Turn { speaker: Speaker::Error, text: text.clone() }),
            Event::NodeEntered { node } => self.path.push(node.clone()),
            Event::AgentResult { .. } => {}
            Event::IntentClassified { intent } => self.intent = Some(*intent),
            Event::CandidatesFound { candidates } => self.candidates = Some(candidates.clone()),
            Event::HitlRequested { request } => {
                self.hitl_counter += 1;
                self.pending_hitl = Some(request.clone());
                self.status = Status::AwaitingHitl;
            }
            Event::HitlDecided { decision } => {
                self.pending_hitl = None;
                self.decisions.push(decision.clone());
                self.status = Status::Running;
            }
            Event::GoalConfirmed { goal } => self.confirmed_goal = Some(goal.clone()),
            Event::Planned { result, .. } => self.last_result = Some(result.clone()),
            Event::IterationStarted { iteration } => self.iteration = *iteration,
            Event::ProposalMade { proposal } => self.pending_proposal = Some(proposal.clone()),
            Event::SnapshotTaken { snapshot } => self.snapshots.push(*snapshot),
            Event::ChangeApplied { .. } => self.pending_proposal = None,
            Event::RolledBack { .. } => {}
            Event::StatusChanged { status } => self.status = *status,
        }
    }

    fn next_request_id(&self) -> String {
        format!("{}/hitl-{}", self.id, self.hitl_counter + 1)
    }
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionStarted { session: String },
    UserTurn { text: String },
    SystemTurn { text: String },
    ErrorTurn { text: String },
    NodeEntered { node: String },
    AgentResult { result: AgentResult },
    IntentClassified { intent: Intent },
    CandidatesFound { candidates: Vec<Candidate> },
    HitlRequested { request: HitlRequest },
    HitlDecided { decision: HitlDecision },
    GoalConfirmed { goal: Iri },
    Planned { result: PlanningResult, explanation: String },
    IterationStarted { iteration: usize },
    ProposalMade { proposal: AdaptationProposal },
    SnapshotTaken { snapshot: SnapshotId },
    ChangeApplied { approval: String, sequences: Vec<u64> },
    RolledBack { snapshot: SnapshotId, sequence: u64 },
    StatusChanged { status: Status },
}

/// Rebuilds a session from its event log.
pub fn reconstruct(events: &[Event]) -> SessionState {
    let mut state = SessionState::new("");
    for e in events {
        state.apply(e);
    }
    state
}

/// Serializes events as line-delimited JSON.
pub fn to_jsonl(events: &[Event]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}

pub fn from_jsonl(text: &str) -> Result<Vec<Event>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Input {
    Message { text: String },
    Decision {
        request_id: String,
        verdict: Verdict,
        #[serde(default)]
        payload: Option<Value>,
        #[serde(default = "default_actor")]
        actor: String,
    },
}

fn default_actor() -> String {
    "user".into()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("{input} is not accepted while the session is {status:?}")]
    IllegalEvent { input: &'static str, status: Status },
    #[error("decision `{0}` does not match the pending request")]
    StaleDecision(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub max_iterations: usize,
    pub max_horizon: usize,
    pub solver: SolverConfig,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_horizon: DEFAULT_MAX_HORIZON,
            solver: SolverConfig::default(),
        }
    }
}

/// A session: its state and the log that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub state: SessionState,
    pub events: Vec<Event>,
}

impl Session {
    fn emit(&mut self, event: Event) {
        self.state.apply(&event);
        self.events.push(event);
    }

    fn node(&mut self, name: &str) {
        self.emit(Event::NodeEntered { node: name.into() });
    }

    fn pause(&mut self, status: Status) {
        self.emit(Event::StatusChanged { status });
    }
}

/// Shared by all sessions: the store, the provider and the limits.
pub struct Engine {
    store: GraphStore,
    provider: Arc<dyn LlmProvider>,
    config: WorkflowConfig,
    sessions: AtomicU64,
}

/// Why a step stopped early.
enum Halt {
    Agent(AgentError),
    Message(String),
}

impl From<AgentError> for Halt {
    fn from(e: AgentError) -> Self {
        Halt::Agent(e)
    }
}

impl Engine {
    pub fn new(store: GraphStore, provider: Arc<dyn LlmProvider>, config: WorkflowConfig) -> Self {
        Engine { store, provider, config, sessions: AtomicU64::new(0) }
    }

    pub fn store(&self) -> &GraphStore {
        &self.store
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn start_session(&self) -> Session {
        let n = self.sessions.fetch_add(1, Ordering::SeqCst) + 1;
        let mut session = Session { state: SessionState::new(""), events: Vec::new() };
        session.emit(Event::SessionStarted { session: format!("session-{n}") });
        session
    }

    fn ctx<'a>(&'a self, session: &'a str) -> AgentContext<'a> {
        AgentContext {
            provider: self.provider.as_ref(),
            session,
            store: &self.store,
            solver: &self.config.solver,
            max_horizon: self.config.max_horizon,
        }
    }

    /// Runs the graph from `input` to the next pause point.
    pub fn step(&self, session: &mut Session, input: Input) -> Result<(), WorkflowError> {
        let status = session.state.status;
        match input {
            Input::Message { text } => {
                if !matches!(status, Status::AwaitingUser | Status::Done | Status::Unresolvable) {
                    return Err(WorkflowError::IllegalEvent { input: "a user message", status });
                }
                session.emit(Event::UserTurn { text: text.clone() });
                let outcome = self.on_message(session, &text);
                self.finish(session, outcome);
            }
            Input::Decision { request_id, verdict, payload, actor } => {
                let Some(pending) = session.state.pending_hitl.clone() else {
                    return Err(WorkflowError::StaleDecision(request_id));
                };
                if pending.id != request_id {
                    return Err(WorkflowError::StaleDecision(request_id));
                }
                if verdict == Verdict::Modify && payload.is_none() {
                    return Err(WorkflowError::IllegalEvent { input: "a modify decision without payload", status });
                }
                let recorded = match verdict {
                    Verdict::Deny => self.store.approvals().deny(&request_id),
                    _ => self.store.approvals().grant(&request_id),
                };
                if recorded.is_err() {
                    return Err(WorkflowError::StaleDecision(request_id));
                }
                let decision = HitlDecision { request_id, verdict, payload, actor, timestamp: self.store.now() };
                session.emit(Event::HitlDecided { decision: decision.clone() });
                let outcome = self.on_decision(session, &pending, &decision);
                self.finish(session, outcome);
            }
        }
        Ok(())
    }

    fn finish(&self, session: &mut Session, outcome: Result<(), Halt>) {
        match outcome {
            Ok(()) => {}
            Err(Halt::Message(text)) => {
                session.emit(Event::SystemTurn { text });
                session.pause(Status::AwaitingUser);
            }
            Err(Halt::Agent(e)) => {
                session.emit(Event::ErrorTurn { text: e.to_string() });
                session.pause(Status::AwaitingUser);
            }
        }
    }

    fn record(&self, session: &mut Session, result: AgentResult) {
        session.emit(Event::AgentResult { result });
    }

    fn on_message(&self, session: &mut Session, text: &str) -> Result<(), Halt> {
        let id = session.state.id.clone();
        let ctx = self.ctx(&id);
        session.node("router");
        let (intent, r) = route(&ctx, text)?;
        self.record(session, r);
        session.emit(Event::IntentClassified { intent });
        match intent {
            Intent::KnowledgeQuery => {
                session.node("knowledge_retrieval");
                let r = retrieve_knowledge(&ctx, text)?;
                let answer = r.payload["answer"].as_str().unwrap_or_default().to_string();
                self.record(session, r);
                session.emit(Event::SystemTurn { text: answer });
                session.pause(Status::AwaitingUser);
            }
            Intent::PlanningRequest => {
                session.node("candidate_search");
                let (candidates, r) = find_required_candidates(&ctx, text)?;
                self.record(session, r);
                session.emit(Event::CandidatesFound { candidates: candidates.clone() });
                if candidates.is_empty() {
                    return Err(Halt::Message("No modeled required capability matches this request.".into()));
                }
                let model = self.store.materialize().map_err(AgentError::from)?;
                let listed: Vec<Value> = candidates
                    .iter()
                    .map(|c| {
                        let description = model.capability(&c.iri).map(|m| m.description.clone()).unwrap_or_default();
                        json!({ "iri": c.iri, "description": description, "reason": c.reason })
                    })
                    .collect();
                self.request(session, Checkpoint::ConfirmGoal, json!({ "goal": candidates[0].iri, "candidates": listed }));
            }
            Intent::RuntimeFailureReport => {
                session.node("capability_mapper");
                let (mapping, r) = map_failure(&ctx, text)?;
                self.record(session, r);
                session.node("analyzer");
                let input = AnalysisInput::Failure {
                    report: text.to_string(),
                    goal: session.state.confirmed_goal.clone(),
                    affected: mapping.affected,
                };
                let (proposal, r) = analyze_and_propose(&ctx, &input)?;
                self.record(session, r);
                if !proposal.resolvable {
                    session.emit(Event::SystemTurn { text: proposal.rationale.clone() });
                    session.pause(Status::Unresolvable);
                    return Ok(());
                }
                session.emit(Event::ProposalMade { proposal: proposal.clone() });
                let payload = serde_json::to_value(&proposal).expect("proposal serializes");
                self.request(session, Checkpoint::ConfirmFailureUpdate, payload);
            }
        }
        Ok(())
    }

    fn request(&self, session: &mut Session, checkpoint: Checkpoint, payload: Value) {
        session.node(checkpoint.node());
        let request = HitlRequest { id: session.state.next_request_id(), checkpoint, payload };
        session.emit(Event::HitlRequested { request });
    }

    fn on_decision(&self, session: &mut Session, pending: &HitlRequest, decision: &HitlDecision) -> Result<(), Halt> {
        let payload = match decision.verdict {
            Verdict::Deny => {
                let text = match pending.checkpoint {
                    Checkpoint::ConfirmGoal => "The goal was not confirmed; nothing was planned.",
                    _ => "The proposal was declined; the capability model is unchanged.",
                };
                return Err(Halt::Message(text.into()));
            }
            Verdict::Approve => pending.payload.clone(),
            Verdict::Modify => decision.payload.clone().unwrap_or_default(),
        };
        match pending.checkpoint {
            Checkpoint::ConfirmGoal => {
                let goal = payload["goal"]
                    .as_str()
                    .and_then(|s| Iri::new(s).ok())
                    .ok_or_else(|| Halt::Message("The decision does not name a goal.".into()))?;
                let typed = Triple::new(goal.clone(), rdf_type(), Term::Iri(cap("RequiredCapability")));
                if !self.store.contains(&typed) {
                    return Err(Halt::Message(format!("`{goal}` is not a required capability.")));
                }
                session.emit(Event::GoalConfirmed { goal: goal.clone() });
                self.plan(session, &goal, None)
            }
            Checkpoint::ApproveAdaptation | Checkpoint::ConfirmFailureUpdate => {
                let proposal: AdaptationProposal = serde_json::from_value(payload)
                    .map_err(|e| Halt::Message(format!("The modified proposal is malformed: {e}")))?;
                let id = session.state.id.clone();
                session.node("repair");
                let snapshot = self.store.snapshot();
                session.emit(Event::SnapshotTaken { snapshot });
                let r = apply_repair(&self.ctx(&id), &proposal, &decision.request_id)?;
                let sequences = r.payload["change_records"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .filter_map(Value::as_u64)
                    .collect();
                self.record(session, r);
                session.emit(Event::ChangeApplied { approval: decision.request_id.clone(), sequences });
                if pending.checkpoint == Checkpoint::ConfirmFailureUpdate && session.state.iteration == 0 {
                    session.emit(Event::IterationStarted { iteration: 1 });
                }
                match session.state.confirmed_goal.clone() {
                    Some(goal) => self.plan(session, &goal, Some(snapshot)),
                    None => {
                        session.emit(Event::SystemTurn { text: "The capability model was updated.".into() });
                        session.pause(Status::Done);
                        Ok(())
                    }
                }
            }
        }
    }

    /// Plans `goal`; on infeasibility runs one analysis round of the
    /// adaptation cycle. `rollback` is the snapshot to restore if planning
    /// fails after a repair.
    fn plan(&self, session: &mut Session, goal: &Iri, rollback: Option<SnapshotId>) -> Result<(), Halt> {
        let id = session.state.id.clone();
        let ctx = self.ctx(&id);
        session.node("planner");
        let (output, r) = match plan_and_explain(&ctx, goal) {
            Ok(v) => v,
            Err(e) => {
                if let Some(snapshot) = rollback {
                    if let Ok(record) = self.store.rollback(snapshot) {
                        session.emit(Event::RolledBack { snapshot, sequence: record.sequence });
                    }
                }
                return Err(e.into());
            }
        };
        self.record(session, r);
        session.emit(Event::Planned { result: output.result.clone(), explanation: output.explanation.clone() });
        session.emit(Event::SystemTurn { text: output.explanation });
        let diagnosis = match output.result {
            PlanningResult::Sat(_) => {
                session.pause(Status::Done);
                return Ok(());
            }
            PlanningResult::Unsat(d) => d,
        };
        if session.state.iteration >= self.config.max_iterations {
            session.emit(Event::SystemTurn {
                text: format!(
                    "Stopped after {} adaptation iterations without a feasible plan.",
                    self.config.max_iterations
                ),
            });
            session.pause(Status::Unresolvable);
            return Ok(());
        }
        session.emit(Event::IterationStarted { iteration: session.state.iteration + 1 });
        let conflict = diagnosis.primary().clone();
        session.node("capability_mapper");
        let labels: Vec<String> = conflict.labels.iter().cloned().collect();
        let (mapping, r) = map_core(&ctx, goal, &labels)?;
        self.record(session, r);
        session.node("analyzer");
        let input = AnalysisInput::Unsat { goal: goal.clone(), mapping, conflict };
        let (proposal, r) = analyze_and_propose(&ctx, &input)?;
        self.record(session, r);
        if !proposal.resolvable {
            session.emit(Event::SystemTurn { text: proposal.rationale.clone() });
            session.pause(Status::Unresolvable);
            return Ok(());
        }
        session.emit(Event::ProposalMade { proposal: proposal.clone() });
        let payload = serde_json::to_value(&proposal).expect("proposal serializes");
        self.request(session, Checkpoint::ApproveAdaptation, payload);
        Ok(())
    }
}
