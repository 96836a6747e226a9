//! HTTP provider for OpenAI-compatible chat-completion endpoints.
//!
//! Requests go to `POST {endpoint}/chat/completions` with the familiar
//! `model` / `messages` / `tools` / `tool_choice` body. Tool calls come back
//! through `choices[0].message.tool_calls[0].function`, whose `arguments`
//! field is a JSON-encoded string per the wire convention. Transport
//! failures (connect errors, timeouts, HTTP 5xx) are retried up to
//! [`HttpConfig::max_retries`] times with exponential backoff; 4xx statuses
//! and malformed payloads are protocol errors and are not retried.

use super::{
    precheck, validate_response, ChatRequest, ChatResponse, GatewayError, LlmClient, ParamType,
    Role, ToolCall, ToolChoice, Usage,
};
use serde::Deserialize;
use serde_json::{json, Value};
use std::time::Duration;

/// Environment variable naming the endpoint base URL (no trailing slash
/// needed), e.g. `http://127.0.0.1:8000/v1`.
pub const ENV_ENDPOINT: &str = "AGENTFM_LLM_ENDPOINT";
/// Environment variable holding the bearer token. Optional: many local
/// servers accept unauthenticated requests.
pub const ENV_KEY: &str = "AGENTFM_LLM_KEY";
/// Environment variable naming the model to request.
pub const ENV_MODEL: &str = "AGENTFM_LLM_MODEL";

/// Connection settings for the HTTP provider.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Retries after the first attempt on transport errors.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_base: Duration,
    pub request_timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            max_retries: 3,
            backoff_base: Duration::from_millis(200),
            request_timeout: Duration::from_secs(120),
        }
    }

    /// Reads the endpoint, key, and model from the environment. The endpoint
    /// and model are required; a missing variable is a configuration error.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| {
            GatewayError::Config(format!("{ENV_ENDPOINT} is not set; required for --llm http"))
        })?;
        let model = std::env::var(ENV_MODEL).map_err(|_| {
            GatewayError::Config(format!("{ENV_MODEL} is not set; required for --llm http"))
        })?;
        let mut config = HttpConfig::new(endpoint, model);
        config.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(config)
    }
}

/// Blocking HTTP client for chat completions.
pub struct HttpClient {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        if config.endpoint.is_empty() {
            return Err(GatewayError::Config("endpoint must not be empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client build failed: {e}")))?;
        Ok(HttpClient { config, client })
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn request_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.text}));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.tools.is_empty() {
            let tools: Vec<Value> = request
                .tools
                .iter()
                .map(|tool| {
                    let mut properties = serde_json::Map::new();
                    let mut required = Vec::new();
                    for param in &tool.parameters {
                        properties.insert(param.name.clone(), param_schema(param));
                        if param.required {
                            required.push(Value::String(param.name.clone()));
                        }
                    }
                    json!({
                        "type": "function",
                        "function": {
                            "name": tool.name,
                            "description": tool.description,
                            "parameters": {
                                "type": "object",
                                "properties": properties,
                                "required": required,
                            },
                        },
                    })
                })
                .collect();
            body["tools"] = Value::Array(tools);
            body["tool_choice"] = Value::String(
                match request.tool_choice {
                    ToolChoice::Auto => "auto",
                    ToolChoice::Required => "required",
                }
                .into(),
            );
        }
        body
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut builder = self
            .client
            .post(self.completions_url())
            .json(&self.request_body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(format!("request failed: {e}")))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| GatewayError::Transport(format!("reading response body: {e}")))?;
        if status.is_server_error() {
            return Err(GatewayError::Transport(format!(
                "server returned {status}: {}",
                truncate(&body, 200)
            )));
        }
        if !status.is_success() {
            return Err(GatewayError::Protocol(format!(
                "server returned {status}: {}",
                truncate(&body, 200)
            )));
        }
        parse_chat_completion_body(&body)
    }
}

fn param_schema(param: &super::ToolParam) -> Value {
    let mut schema = match &param.param_type {
        ParamType::String => json!({"type": "string"}),
        ParamType::Boolean => json!({"type": "boolean"}),
        ParamType::Enum(options) => json!({"type": "string", "enum": options}),
        ParamType::StringArray => json!({"type": "array", "items": {"type": "string"}}),
        ParamType::Array => json!({"type": "array"}),
    };
    schema["description"] = Value::String(param.description.clone());
    schema
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max).collect();
        format!("{cut}…")
    }
}

/// Wire shape of a chat-completion response (the subset we consume).
#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Debug, Deserialize)]
struct WireToolCall {
    function: WireFunction,
}

#[derive(Debug, Deserialize)]
struct WireFunction {
    name: String,
    /// JSON-encoded object, per the chat-completions convention.
    arguments: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

/// Parses a chat-completion response body into a [`ChatResponse`].
///
/// Public so robustness harnesses can drive the parser directly; all
/// failures are [`GatewayError::Protocol`].
pub fn parse_chat_completion_body(body: &str) -> Result<ChatResponse, GatewayError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::Protocol(format!("malformed completion body: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("completion body has no choices".into()))?;
    let tool_call = match choice.message.tool_calls.and_then(|mut c| {
        if c.is_empty() {
            None
        } else {
            Some(c.remove(0))
        }
    }) {
        Some(call) => {
            let arguments: serde_json::Map<String, Value> =
                serde_json::from_str(&call.function.arguments).map_err(|e| {
                    GatewayError::Protocol(format!(
                        "tool call arguments are not a JSON object: {e}"
                    ))
                })?;
            Some(ToolCall {
                name: call.function.name,
                arguments,
            })
        }
        None => None,
    };
    let text = choice.message.content.filter(|c| !c.is_empty());
    let usage = wire
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ChatResponse {
        text,
        tool_call,
        usage,
    })
}

impl LlmClient for HttpClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        precheck(request)?;
        let mut delay = self.config.backoff_base;
        let mut last_err = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(request) {
                Ok(response) => {
                    validate_response(request, &response)?;
                    return Ok(response);
                }
                Err(GatewayError::Transport(msg)) => {
                    log::warn!(
                        "transport error talking to {} (attempt {}/{}): {msg}",
                        self.completions_url(),
                        attempt + 1,
                        self.config.max_retries + 1
                    );
                    last_err = Some(GatewayError::Transport(msg));
                }
                Err(other) => return Err(other),
            }
        }
        Err(last_err.unwrap_or_else(|| GatewayError::Transport("no attempts made".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, ToolParam, ToolSchema};

    #[test]
    fn parses_text_completion() {
        let body = r#"{"choices":[{"message":{"content":"hello there"}}],
                       "usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let resp = parse_chat_completion_body(body).unwrap();
        assert_eq!(resp.text.as_deref(), Some("hello there"));
        assert!(resp.tool_call.is_none());
        assert_eq!(resp.usage.prompt_tokens, 12);
        assert_eq!(resp.usage.completion_tokens, 3);
    }

    #[test]
    fn parses_tool_call_with_string_encoded_arguments() {
        let body = r#"{"choices":[{"message":{"content":null,
            "tool_calls":[{"id":"c1","type":"function",
                "function":{"name":"verdict","arguments":"{\"answer\":\"yes\"}"}}]}}]}"#;
        let resp = parse_chat_completion_body(body).unwrap();
        let call = resp.tool_call.unwrap();
        assert_eq!(call.name, "verdict");
        assert_eq!(call.arguments["answer"], serde_json::json!("yes"));
    }

    #[test]
    fn rejects_bodies_without_choices() {
        let err = parse_chat_completion_body(r#"{"choices":[]}"#).unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)));
        let err = parse_chat_completion_body("not json").unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)));
    }

    #[test]
    fn rejects_non_object_tool_arguments() {
        let body = r#"{"choices":[{"message":{
            "tool_calls":[{"function":{"name":"verdict","arguments":"[1,2]"}}]}}]}"#;
        assert!(matches!(
            parse_chat_completion_body(body),
            Err(GatewayError::Protocol(_))
        ));
    }

    #[test]
    fn request_body_includes_tools_and_choice() {
        let client = HttpClient::new(HttpConfig::new("http://example.invalid/v1", "m")).unwrap();
        let request = ChatRequest {
            system_prompt: "sys".into(),
            messages: vec![ChatMessage::user("u"), ChatMessage::assistant("a")],
            tools: vec![ToolSchema {
                name: "verdict".into(),
                description: "d".into(),
                parameters: vec![ToolParam {
                    name: "answer".into(),
                    description: "the verdict".into(),
                    param_type: ParamType::Enum(vec!["yes".into(), "no".into()]),
                    required: true,
                }],
            }],
            tool_choice: ToolChoice::Required,
            temperature: 0.25,
            max_tokens: 77,
        };
        let body = client.request_body(&request);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2]["role"], "assistant");
        assert_eq!(body["tool_choice"], "required");
        assert_eq!(body["tools"][0]["function"]["name"], "verdict");
        assert_eq!(
            body["tools"][0]["function"]["parameters"]["properties"]["answer"]["enum"][0],
            "yes"
        );
        assert_eq!(body["max_tokens"], 77);
    }

    #[test]
    fn endpoint_url_tolerates_trailing_slash() {
        let client = HttpClient::new(HttpConfig::new("http://h:1/v1/", "m")).unwrap();
        assert_eq!(client.completions_url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn from_env_requires_endpoint_and_model() {
        // Serialize access to the process environment within this test.
        let guard = ENV_LOCK.lock().unwrap();
        std::env::remove_var(ENV_ENDPOINT);
        std::env::remove_var(ENV_MODEL);
        std::env::remove_var(ENV_KEY);
        assert!(matches!(HttpConfig::from_env(), Err(GatewayError::Config(_))));
        std::env::set_var(ENV_ENDPOINT, "http://h:1/v1");
        assert!(matches!(HttpConfig::from_env(), Err(GatewayError::Config(_))));
        std::env::set_var(ENV_MODEL, "m");
        let config = HttpConfig::from_env().unwrap();
        assert_eq!(config.endpoint, "http://h:1/v1");
        assert_eq!(config.model, "m");
        assert_eq!(config.api_key, None);
        std::env::set_var(ENV_KEY, "secret");
        assert_eq!(HttpConfig::from_env().unwrap().api_key.as_deref(), Some("secret"));
        std::env::remove_var(ENV_ENDPOINT);
        std::env::remove_var(ENV_MODEL);
        std::env::remove_var(ENV_KEY);
        drop(guard);
    }

    static ENV_LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());

    #[test]
    fn unreachable_endpoint_is_a_transport_error_after_retries() {
        let mut config = HttpConfig::new("http://127.0.0.1:1/v1", "m");
        config.max_retries = 1;
        config.backoff_base = Duration::from_millis(1);
        config.request_timeout = Duration::from_millis(200);
        let client = HttpClient::new(config).unwrap();
        let err = client.chat(&ChatRequest::text("s", "u")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
    }
}
