//! Chat completion with tool calling and structured output.
//!
//! Two providers implement [`LlmProvider`]: [`ScriptedProvider`] replays
//! fixture responses and is used by every test; [`HttpProvider`] speaks the
//! common chat-completion wire format.

mod http;
mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use http::{HttpProvider, HttpProviderConfig, API_KEY_ENV};
pub use scripted::{ScriptEntry, ScriptedProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Message {
    User { content: String },
    Assistant { content: String },
    ToolCall { id: String, name: String, arguments: Value },
    ToolResult { id: String, name: String, content: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDecl {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub agent: String,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolDecl>,
    pub output_schema: Value,
    pub temperature: f64,
}

impl LlmRequest {
    pub fn new(agent: &str, system_prompt: &str, output_schema: Value) -> Self {
        LlmRequest {
            agent: agent.to_string(),
            system_prompt: system_prompt.to_string(),
            messages: Vec::new(),
            tools: Vec::new(),
            output_schema,
            temperature: 0.0,
        }
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find_map(|m| match m {
                Message::User { content } => Some(content.as_str()),
                _ => None,
            })
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmResponse {
    ToolCall { name: String, arguments: Value },
    Final(Value),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("no script entry for agent `{agent}` matches `{message}`")]
    NoScript { agent: String, message: String },
    #[error("{count} script entries for agent `{agent}` match `{message}`")]
    Ambiguous { agent: String, message: String, count: usize },
    #[error("script entry for agent `{agent}` is exhausted")]
    Exhausted { agent: String },
    #[error("output violates schema at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid script: {0}")]
    Script(String),
}

pub trait LlmProvider: Send + Sync {
    /// `session` keys any per-conversation provider state.
    fn complete(&self, session: &str, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Outcome of structural validation; `path` points at the first failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    pub path: Option<String>,
    pub message: Option<String>,
}

pub fn validate_output(payload: &Value, schema: &Value) -> Validation {
    let compiled = match jsonschema::JSONSchema::compile(schema) {
        Ok(c) => c,
        Err(e) => {
            return Validation { valid: false, path: Some(String::new()), message: Some(format!("invalid schema: {e}")) }
        }
    };
    let result = match compiled.validate(payload) {
        Ok(()) => Validation { valid: true, path: None, message: None },
        Err(mut errors) => {
            let first = errors.next();
            Validation {
                valid: false,
                path: first.as_ref().map(|e| pointer_path(&e.instance_path.to_string())),
                message: first.map(|e| e.to_string()),
            }
        }
    };
    result
}

/// `/a/0/b` becomes `a.0.b`; the root is the empty string.
fn pointer_path(pointer: &str) -> String {
    pointer.trim_start_matches('/').replace('/', ".")
}

fn check_response(request: &LlmRequest, response: &LlmResponse) -> Result<(), LlmError> {
    let (payload, schema) = match response {
        LlmResponse::Final(v) => (v, &request.output_schema),
        LlmResponse::ToolCall { name, arguments } => {
            let tool = request
                .tools
                .iter()
                .find(|t| &t.name == name)
                .ok_or_else(|| LlmError::UnknownTool(name.clone()))?;
            (arguments, &tool.parameters)
        }
    };
    let v = validate_output(payload, schema);
    if v.valid {
        Ok(())
    } else {
        Err(LlmError::Schema { path: v.path.unwrap_or_default(), message: v.message.unwrap_or_default() })
    }
}

/// Completes and validates; a response that violates its schema (or
/// names an undeclared tool) is retried once, then reported.
pub fn complete_validated(
    provider: &dyn LlmProvider,
    session: &str,
    request: &LlmRequest,
) -> Result<LlmResponse, LlmError> {
    let first = provider.complete(session, request)?;
    match check_response(request, &first) {
        Ok(()) => Ok(first),
        Err(LlmError::Schema { .. }) | Err(LlmError::UnknownTool(_)) => {
            let second = provider.complete(session, request)?;
            check_response(request, &second)?;
            Ok(second)
        }
        Err(e) => Err(e),
    }
}
