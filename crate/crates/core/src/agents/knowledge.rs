use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{react, AgentContext, AgentError, AgentResult, Intent, TraceEntry};
use crate::model::rdf::{cap, rdf_type, Term, Triple};
use crate::model::Iri;

/// Classifies a user message. The router has no tools.
pub fn route(ctx: &AgentContext, message: &str) -> Result<(Intent, AgentResult), AgentError> {
    let result = react(ctx, "router", message, false, &|_, _| Ok(()))?;
    let intent: Intent = serde_json::from_value(result.payload["intent"].clone())
        .map_err(|e| AgentError::Rejected { agent: "router".into(), reason: e.to_string() })?;
    Ok((intent, result))
}

fn iri_exists(ctx: &AgentContext, text: &str) -> Result<Iri, String> {
    let iri = Iri::new(text).map_err(|e| e.to_string())?;
    if ctx.store.mentions(&iri) {
        Ok(iri)
    } else {
        Err(format!("`{text}` does not exist in the knowledge graph"))
    }
}

fn check_support(payload: &Value, trace: &[TraceEntry]) -> Result<(), String> {
    let claims = payload["claims"].as_array().cloned().unwrap_or_default();
    for (i, claim) in claims.iter().enumerate() {
        for s in claim["support"].as_array().into_iter().flatten() {
            let call = s["call"].as_u64().unwrap_or(u64::MAX) as usize;
            let row = s["row"].as_u64().unwrap_or(u64::MAX) as usize;
            let rows = trace.get(call).and_then(|t| t.result["rows"].as_array());
            match rows {
                Some(rows) if row < rows.len() => {}
                _ => return Err(format!("claim {i} cites call {call} row {row}, which does not exist")),
            }
        }
    }
    Ok(())
}

/// Answers a question from query results. Every claim must cite a row
/// returned by one of the agent's own queries, and every entity must
/// exist in the graph.
pub fn retrieve_knowledge(ctx: &AgentContext, question: &str) -> Result<AgentResult, AgentError> {
    let check = |payload: &Value, trace: &[TraceEntry]| -> Result<(), String> {
        check_support(payload, trace)?;
        for e in payload["entities"].as_array().into_iter().flatten() {
            iri_exists(ctx, e.as_str().unwrap_or_default())?;
        }
        Ok(())
    };
    react(ctx, "knowledge", question, true, &check)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub iri: Iri,
    pub reason: String,
}

/// Ranks required capabilities of the graph against a request. An empty
/// list means no matching goal is modeled.
pub fn find_required_candidates(
    ctx: &AgentContext,
    request: &str,
) -> Result<(Vec<Candidate>, AgentResult), AgentError> {
    let check = |payload: &Value, _: &[TraceEntry]| -> Result<(), String> {
        for c in payload["candidates"].as_array().into_iter().flatten() {
            let text = c["iri"].as_str().unwrap_or_default();
            let iri = Iri::new(text).map_err(|e| e.to_string())?;
            let typed = Triple::new(iri, rdf_type(), Term::Iri(cap("RequiredCapability")));
            if !ctx.store.contains(&typed) {
                return Err(format!("`{text}` is not a required capability in the knowledge graph"));
            }
        }
        Ok(())
    };
    let result = react(ctx, "candidates", request, true, &check)?;
    let candidates: Vec<Candidate> = serde_json::from_value(result.payload["candidates"].clone())
        .map_err(|e| AgentError::Rejected { agent: "candidates".into(), reason: e.to_string() })?;
    Ok((candidates, result))
}
