use std::collections::HashMap;
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{LlmError, LlmProvider, LlmRequest, LlmResponse};

/// A scripted response sequence for one agent. The entry applies when
/// every `contains` string occurs in the request's last user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub agent: String,
    #[serde(default)]
    pub contains: Vec<String>,
    pub responses: Vec<LlmResponse>,
    /// Keep returning the last response once the sequence is used up.
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptEntry {
    fn matches(&self, request: &LlmRequest) -> bool {
        let last = request.last_user_message();
        self.agent == request.agent && self.contains.iter().all(|c| last.contains(c.as_str()))
    }
}

/// Replays script entries; consumption is tracked per session.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
    cursors: Mutex<HashMap<String, Vec<usize>>>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, LlmError> {
        if let Some(e) = entries.iter().find(|e| e.responses.is_empty()) {
            return Err(LlmError::Script(format!("entry for `{}` has no responses", e.agent)));
        }
        Ok(ScriptedProvider { entries, cursors: Mutex::default() })
    }

    /// Reads one or more script documents (JSON arrays of entries) and
    /// concatenates them.
    pub fn from_files(paths: &[impl AsRef<Path>]) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for p in paths {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p).map_err(|e| LlmError::Script(format!("{}: {e}", p.display())))?;
            let mut doc: Vec<ScriptEntry> =
                serde_json::from_str(&text).map_err(|e| LlmError::Script(format!("{}: {e}", p.display())))?;
            entries.append(&mut doc);
        }
        ScriptedProvider::new(entries)
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Forgets the consumption state of `session`.
    pub fn reset(&self, session: &str) {
        self.cursors.lock().remove(session);
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&self, session: &str, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let matching: Vec<usize> =
            self.entries.iter().enumerate().filter(|(_, e)| e.matches(request)).map(|(i, _)| i).collect();
        let message = request.last_user_message().to_string();
        let idx = match matching.as_slice() {
            [] => return Err(LlmError::NoScript { agent: request.agent.clone(), message }),
            [one] => *one,
            many => {
                return Err(LlmError::Ambiguous { agent: request.agent.clone(), message, count: many.len() })
            }
        };
        let entry = &self.entries[idx];
        let mut cursors = self.cursors.lock();
        let cursor = cursors.entry(session.to_string()).or_insert_with(|| vec![0; self.entries.len()]);
        let pos = cursor[idx];
        if pos < entry.responses.len() {
            cursor[idx] += 1;
            Ok(entry.responses[pos].clone())
        } else if entry.repeat {
            Ok(entry.responses[entry.responses.len() - 1].clone())
        } else {
            Err(LlmError::Exhausted { agent: request.agent.clone() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Message;
    use serde_json::json;

    fn request(agent: &str, text: &str) -> LlmRequest {
        let mut r = LlmRequest::new(agent, "", json!({}));
        r.messages.push(Message::User { content: text.into() });
        r
    }

    fn provider() -> ScriptedProvider {
        ScriptedProvider::new(vec![
            ScriptEntry {
                agent: "router".into(),
                contains: vec!["defective".into()],
                responses: vec![LlmResponse::Final(json!({"intent": "runtime_failure_report"}))],
                repeat: false,
            },
            ScriptEntry {
                agent: "knowledge".into(),
                contains: vec!["depth".into()],
                responses: vec![
                    LlmResponse::ToolCall { name: "select".into(), arguments: json!({"query": "SELECT ?s WHERE { ?s ?p ?o }"}) },
                    LlmResponse::Final(json!({"answer": "5 to 10 mm"})),
                ],
                repeat: false,
            },
        ])
        .unwrap()
    }

    #[test]
    fn sequences_are_consumed_per_session() {
        let p = provider();
        let r = request("knowledge", "What depth range?");
        assert!(matches!(p.complete("a", &r).unwrap(), LlmResponse::ToolCall { .. }));
        assert!(matches!(p.complete("b", &r).unwrap(), LlmResponse::ToolCall { .. }));
        assert!(matches!(p.complete("a", &r).unwrap(), LlmResponse::Final(_)));
        assert!(matches!(p.complete("a", &r), Err(LlmError::Exhausted { .. })));
    }

    #[test]
    fn unmatched_requests_are_errors() {
        let p = provider();
        assert!(matches!(p.complete("a", &request("router", "hello")), Err(LlmError::NoScript { .. })));
        assert!(matches!(p.complete("a", &request("knowledge", "defective")), Err(LlmError::NoScript { .. })));
    }

    #[test]
    fn overlapping_matchers_are_ambiguous() {
        let mut entries = provider().entries().to_vec();
        entries[1].agent = "router".into();
        entries[1].contains = vec!["conveyor".into()];
        let p = ScriptedProvider::new(entries).unwrap();
        let r = request("router", "The conveyor is defective.");
        assert!(matches!(p.complete("a", &r), Err(LlmError::Ambiguous { count: 2, .. })));
    }
}
