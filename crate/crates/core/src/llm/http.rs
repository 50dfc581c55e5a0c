use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmError, LlmProvider, LlmRequest, LlmResponse, Message};

pub const API_KEY_ENV: &str = "CAPAPLAN_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Per-agent model overrides.
    pub agent_models: BTreeMap<String, String>,
    pub timeout_ms: u64,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            agent_models: BTreeMap::new(),
            timeout_ms: 60_000,
        }
    }
}

/// Chat-completion client. The API key is read from `CAPAPLAN_LLM_API_KEY`.
#[derive(Debug)]
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| LlmError::Transport(format!("{API_KEY_ENV} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpProvider { config, api_key, client })
    }
}

/// Builds the request body for `request`.
pub(crate) fn to_wire(config: &HttpProviderConfig, request: &LlmRequest) -> Value {
    let model = config.agent_models.get(&request.agent).unwrap_or(&config.model);
    let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
    for m in &request.messages {
        messages.push(match m {
            Message::User { content } => json!({"role": "user", "content": content}),
            Message::Assistant { content } => json!({"role": "assistant", "content": content}),
            Message::ToolCall { id, name, arguments } => json!({
                "role": "assistant",
                "content": null,
                "tool_calls": [{"id": id, "type": "function", "function": {"name": name, "arguments": arguments.to_string()}}]
            }),
            Message::ToolResult { id, content, .. } => json!({"role": "tool", "tool_call_id": id, "content": content}),
        });
    }
    let mut body = json!({
        "model": model,
        "temperature": request.temperature,
        "messages": messages,
        "response_format": {
            "type": "json_schema",
            "json_schema": {"name": format!("{}_output", request.agent), "schema": request.output_schema}
        }
    });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameters}}))
            .collect();
    }
    body
}

/// Reads the first choice of a response body.
pub(crate) fn from_wire(body: &Value) -> Result<LlmResponse, LlmError> {
    let bad = |m: &str| LlmError::BadResponse(m.to_string());
    let message = body.pointer("/choices/0/message").ok_or_else(|| bad("no choices"))?;
    if let Some(call) = message.get("tool_calls").and_then(Value::as_array).and_then(|c| c.first()) {
        let name = call.pointer("/function/name").and_then(Value::as_str).ok_or_else(|| bad("tool call without name"))?;
        let args = call.pointer("/function/arguments").and_then(Value::as_str).unwrap_or("{}");
        let arguments = serde_json::from_str(args).map_err(|e| LlmError::BadResponse(format!("tool arguments: {e}")))?;
        return Ok(LlmResponse::ToolCall { name: name.to_string(), arguments });
    }
    let content = message.get("content").and_then(Value::as_str).ok_or_else(|| bad("no content"))?;
    let payload = serde_json::from_str(content).map_err(|e| LlmError::BadResponse(format!("content is not JSON: {e}")))?;
    Ok(LlmResponse::Final(payload))
}

impl LlmProvider for HttpProvider {
    fn complete(&self, _session: &str, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(url)
            .bearer_auth(&self.api_key)
            .json(&to_wire(&self.config, request))
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let body: Value = response.json().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}: {body}")));
        }
        from_wire(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ToolDecl;

    #[test]
    fn request_translation() {
        let mut r = LlmRequest::new("knowledge", "sys", json!({"type": "object"}));
        r.messages.push(Message::User { content: "q".into() });
        r.messages.push(Message::ToolCall { id: "call_1".into(), name: "select".into(), arguments: json!({"query": "x"}) });
        r.messages.push(Message::ToolResult { id: "call_1".into(), name: "select".into(), content: "[]".into() });
        r.tools.push(ToolDecl { name: "select".into(), description: "d".into(), parameters: json!({"type": "object"}) });
        let mut cfg = HttpProviderConfig::default();
        cfg.agent_models.insert("knowledge".into(), "big".into());
        let body = to_wire(&cfg, &r);
        assert_eq!(body["model"], "big");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["arguments"], "{\"query\":\"x\"}");
        assert_eq!(body["messages"][3]["tool_call_id"], "call_1");
        assert_eq!(body["tools"][0]["function"]["name"], "select");
        assert_eq!(body["response_format"]["json_schema"]["name"], "knowledge_output");
    }

    #[test]
    fn response_translation() {
        let call = json!({"choices": [{"message": {"tool_calls": [{"function": {"name": "ask", "arguments": "{\"query\":\"ASK {}\"}"}}]}}]});
        assert_eq!(
            from_wire(&call).unwrap(),
            LlmResponse::ToolCall { name: "ask".into(), arguments: json!({"query": "ASK {}"}) }
        );
        let fin = json!({"choices": [{"message": {"content": "{\"intent\":\"knowledge_query\"}"}}]});
        assert_eq!(from_wire(&fin).unwrap(), LlmResponse::Final(json!({"intent": "knowledge_query"})));
        assert!(from_wire(&json!({"choices": []})).is_err());
    }
}
