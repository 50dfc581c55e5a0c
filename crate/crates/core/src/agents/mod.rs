//! The specialized agents. Each one builds a request from the slice of
//! session state it needs, runs its tools, validates the final payload and
//! returns an [`AgentResult`] with the complete tool trace.
//!
//! Tool scoping: the router has no tools; knowledge retrieval, candidate
//! search and the capability mapper only query (`select`, `ask`); the
//! planner calls the solver; only the repair agent writes (`insert`,
//! `delete`). The analyzer is tool-less.

mod analyzer;
mod knowledge;
mod mapper;
mod planner;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use analyzer::{analyze_and_propose, apply_repair, AdaptationProposal, AnalysisInput, Edit, ProposedConflict, ValueChange};
pub use knowledge::{find_required_candidates, retrieve_knowledge, route, Candidate};
pub use mapper::{map_core, map_failure, CoreMapping, FailureMapping, MappedOrigin, ParameterInfo};
pub use planner::{plan_and_explain, PlannerOutput};

use crate::llm::{complete_validated, LlmError, LlmProvider, LlmRequest, LlmResponse, Message, ToolDecl};
use crate::smt::PlanningError;
use crate::solver::SolverConfig;
use crate::store::{GraphStore, QueryForm, QueryKind, QueryResult, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    KnowledgeQuery,
    PlanningRequest,
    RuntimeFailureReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tool: String,
    pub arguments: Value,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub agent: String,
    pub payload: Value,
    pub trace: Vec<TraceEntry>,
    /// Reasons for which earlier final answers were sent back.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{agent} output rejected: {reason}")]
    Rejected { agent: String, reason: String },
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0} exceeded its tool-call budget")]
    TooManyTurns(String),
}

/// What an agent invocation may touch.
pub struct AgentContext<'a> {
    pub provider: &'a dyn LlmProvider,
    pub session: &'a str,
    pub store: &'a GraphStore,
    pub solver: &'a SolverConfig,
    pub max_horizon: usize,
}

pub const MAX_TOOL_TURNS: usize = 8;

pub(crate) fn prompt(agent: &str) -> &'static str {
    match agent {
        "router" => include_str!("../../resources/agents/router.md"),
        "knowledge" => include_str!("../../resources/agents/knowledge.md"),
        "candidates" => include_str!("../../resources/agents/candidates.md"),
        "mapper" => include_str!("../../resources/agents/mapper.md"),
        "planner" => include_str!("../../resources/agents/planner.md"),
        "analyzer" => include_str!("../../resources/agents/analyzer.md"),
        other => panic!("no prompt for agent `{other}`"),
    }
}

/// Output schema of `agent`.
pub fn schema(agent: &str) -> Value {
    let text = match agent {
        "router" => include_str!("../../resources/agents/router.schema.json"),
        "knowledge" => include_str!("../../resources/agents/knowledge.schema.json"),
        "candidates" => include_str!("../../resources/agents/candidates.schema.json"),
        "mapper" => include_str!("../../resources/agents/mapper.schema.json"),
        "planner" => include_str!("../../resources/agents/planner.schema.json"),
        "analyzer" => include_str!("../../resources/agents/analyzer.schema.json"),
        other => panic!("no schema for agent `{other}`"),
    };
    serde_json::from_str(text).expect("shipped schema is valid JSON")
}

fn query_tools() -> Vec<ToolDecl> {
    let parameters: Value =
        serde_json::from_str(include_str!("../../resources/agents/query_tool.schema.json")).expect("valid schema");
    vec![
        ToolDecl {
            name: "select".into(),
            description: "Run a SELECT query over the capability graph and return the result table.".into(),
            parameters: parameters.clone(),
        },
        ToolDecl {
            name: "ask".into(),
            description: "Run an ASK query over the capability graph and return true or false.".into(),
            parameters,
        },
    ]
}

pub(crate) fn result_json(result: &QueryResult) -> Value {
    match result {
        QueryResult::Table { variables, rows } => json!({
            "variables": variables,
            "rows": rows
                .iter()
                .map(|r| r.iter().map(|t| t.as_ref().map(|t| t.to_string())).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        }),
        QueryResult::Boolean(b) => json!({ "boolean": b }),
    }
}

/// Runs a read-only query tool; failures become an `error` result.
pub(crate) fn run_query(store: &GraphStore, tool: &str, query: &str) -> TraceEntry {
    let arguments = json!({ "query": query });
    let expected = if tool == "ask" { QueryKind::Ask } else { QueryKind::Select };
    let result = match QueryForm::parse(query) {
        Ok(form) if form.kind != expected => json!({ "error": format!("the {tool} tool only runs {expected:?} queries") }),
        Ok(form) => match store.query(&form) {
            Ok(r) => result_json(&r),
            Err(e) => json!({ "error": e.to_string() }),
        },
        Err(e) => json!({ "error": e.to_string() }),
    };
    TraceEntry { tool: tool.to_string(), arguments, result }
}

type Check<'a> = &'a dyn Fn(&Value, &[TraceEntry]) -> Result<(), String>;

/// Tool loop: executes query tool calls until the model gives a final
/// answer, then applies `check`. A rejected answer is regenerated once with
/// the reason appended to the task.
pub(crate) fn react(
    ctx: &AgentContext,
    agent: &str,
    task: &str,
    with_tools: bool,
    check: Check,
) -> Result<AgentResult, AgentError> {
    let mut rejections = Vec::new();
    for attempt in 0..2 {
        let mut request = LlmRequest::new(agent, prompt(agent), schema(agent));
        if with_tools {
            request.tools = query_tools();
        }
        let content = match rejections.last() {
            None => task.to_string(),
            Some(reason) => format!("{task}\n\nYour previous answer was rejected: {reason}\nProduce a corrected answer."),
        };
        request.messages.push(Message::User { content });
        let mut trace = Vec::new();
        loop {
            if trace.len() >= MAX_TOOL_TURNS {
                return Err(AgentError::TooManyTurns(agent.to_string()));
            }
            match complete_validated(ctx.provider, ctx.session, &request)? {
                LlmResponse::ToolCall { name, arguments } => {
                    let id = format!("call_{}", trace.len());
                    let query = arguments.get("query").and_then(Value::as_str).unwrap_or_default().to_string();
                    let entry = run_query(ctx.store, &name, &query);
                    request.messages.push(Message::ToolCall { id: id.clone(), name: name.clone(), arguments });
                    request.messages.push(Message::ToolResult { id, name, content: entry.result.to_string() });
                    trace.push(entry);
                }
                LlmResponse::Final(payload) => match check(&payload, &trace) {
                    Ok(()) => return Ok(AgentResult { agent: agent.to_string(), payload, trace, rejections }),
                    Err(reason) => {
                        if attempt == 1 {
                            return Err(AgentError::Rejected { agent: agent.to_string(), reason });
                        }
                        rejections.push(reason);
                        break;
                    }
                },
            }
        }
    }
    unreachable!("the loop returns on its second attempt")
}
