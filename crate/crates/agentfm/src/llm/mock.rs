//! Deterministic scripted mock provider.
//!
//! A [`MockScript`] is an ordered list of rules. Each rule pairs a substring
//! matcher with a scripted outcome (text, tool call, or transport error).
//! For every request the client flattens the prompt text and picks the first
//! rule whose matcher occurs in it *and* whose outcome is compatible with
//! the request (a scripted tool call requires that tool to be offered; plain
//! text is incompatible with `tool_choice = required`). When nothing
//! matches, a configurable default response is used.
//!
//! Scripts serialize to JSON so CLI runs can replay them:
//!
//! ```json
//! {
//!   "rules": [
//!     {"match": "window [60s,", "tool": {"name": "verdict", "arguments": {"answer": "yes"}}},
//!     {"match": "flaky", "transport_error": "connection reset"},
//!     {"match": "describe", "text": "all quiet"}
//!   ],
//!   "default": {"text": "ok"}
//! }
//! ```

use super::{
    estimate_tokens, precheck, validate_response, ChatRequest, ChatResponse, GatewayError,
    LlmClient, ToolCall, ToolChoice, Usage,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;

/// Scripted outcome of a matched rule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedResponse {
    Text(String),
    Tool {
        name: String,
        arguments: serde_json::Map<String, serde_json::Value>,
    },
    /// Simulates an unreachable provider. The mock does not retry: scripted
    /// failures are deterministic.
    TransportError(String),
}

impl ScriptedResponse {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedResponse::Text(s.into())
    }

    /// Builds a tool response; `arguments` must be a JSON object.
    pub fn tool(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        let arguments = arguments
            .as_object()
            .cloned()
            .expect("scripted tool arguments must be a JSON object");
        ScriptedResponse::Tool {
            name: name.into(),
            arguments,
        }
    }

    /// Compatibility between a scripted outcome and a request: tool
    /// responses need the tool to be offered, text responses are unusable
    /// when a tool call is mandatory, and transport errors always apply.
    fn compatible_with(&self, request: &ChatRequest) -> bool {
        match self {
            ScriptedResponse::Text(_) => request.tool_choice != ToolChoice::Required,
            ScriptedResponse::Tool { name, .. } => {
                request.tools.iter().any(|t| &t.name == name)
            }
            ScriptedResponse::TransportError(_) => true,
        }
    }
}

/// One matcher/response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MockRule {
    /// Substring searched for in the flattened prompt (system prompt plus
    /// all messages, newline-joined).
    pub matcher: String,
    pub response: ScriptedResponse,
}

/// An ordered rule list plus the default used when no rule matches.
#[derive(Debug, Clone, PartialEq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default_response: ScriptedResponse,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            rules: Vec::new(),
            default_response: ScriptedResponse::text("ok"),
        }
    }
}

impl MockScript {
    /// Appends a rule. Earlier rules win, so order your matchers from most
    /// to least specific.
    pub fn script_response(&mut self, matcher: impl Into<String>, response: ScriptedResponse) {
        self.rules.push(MockRule {
            matcher: matcher.into(),
            response,
        });
    }

    /// Parses a script from its JSON form. Each rule must carry exactly one
    /// of `text`, `tool`, or `transport_error`.
    pub fn from_json_str(text: &str) -> Result<Self, GatewayError> {
        let raw: ScriptJson = serde_json::from_str(text)
            .map_err(|e| GatewayError::Config(format!("mock script parse error: {e}")))?;
        raw.try_into()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let raw: ScriptJson = self.clone().into();
        serde_json::to_string_pretty(&raw).expect("script serialization is infallible")
    }
}

/// Serde-facing representation of a script.
#[derive(Debug, Serialize, Deserialize)]
struct ScriptJson {
    #[serde(default)]
    rules: Vec<RuleJson>,
    #[serde(default)]
    default: Option<ResponseJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleJson {
    #[serde(rename = "match")]
    matcher: String,
    #[serde(flatten)]
    response: ResponseJson,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tool: Option<ToolJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transport_error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolJson {
    name: String,
    arguments: serde_json::Map<String, serde_json::Value>,
}

impl TryFrom<ResponseJson> for ScriptedResponse {
    type Error = GatewayError;

    fn try_from(raw: ResponseJson) -> Result<Self, Self::Error> {
        match (raw.text, raw.tool, raw.transport_error) {
            (Some(text), None, None) => Ok(ScriptedResponse::Text(text)),
            (None, Some(tool), None) => Ok(ScriptedResponse::Tool {
                name: tool.name,
                arguments: tool.arguments,
            }),
            (None, None, Some(msg)) => Ok(ScriptedResponse::TransportError(msg)),
            _ => Err(GatewayError::Config(
                "each scripted response needs exactly one of text/tool/transport_error".into(),
            )),
        }
    }
}

impl From<ScriptedResponse> for ResponseJson {
    fn from(resp: ScriptedResponse) -> Self {
        match resp {
            ScriptedResponse::Text(text) => ResponseJson {
                text: Some(text),
                ..Default::default()
            },
            ScriptedResponse::Tool { name, arguments } => ResponseJson {
                tool: Some(ToolJson { name, arguments }),
                ..Default::default()
            },
            ScriptedResponse::TransportError(msg) => ResponseJson {
                transport_error: Some(msg),
                ..Default::default()
            },
        }
    }
}

impl TryFrom<ScriptJson> for MockScript {
    type Error = GatewayError;

    fn try_from(raw: ScriptJson) -> Result<Self, Self::Error> {
        let mut script = MockScript::default();
        for rule in raw.rules {
            let response = rule.response.try_into()?;
            script.script_response(rule.matcher, response);
        }
        if let Some(default) = raw.default {
            script.default_response = default.try_into()?;
        }
        Ok(script)
    }
}

impl From<MockScript> for ScriptJson {
    fn from(script: MockScript) -> Self {
        ScriptJson {
            rules: script
                .rules
                .into_iter()
                .map(|r| RuleJson {
                    matcher: r.matcher,
                    response: r.response.into(),
                })
                .collect(),
            default: Some(script.default_response.into()),
        }
    }
}

/// Deterministic provider that replays a [`MockScript`] and records every
/// request for later inspection.
pub struct MockClient {
    script: MockScript,
    calls: Mutex<Vec<ChatRequest>>,
}

impl MockClient {
    pub fn new(script: MockScript) -> Self {
        MockClient {
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// All requests seen so far, in call order.
    pub fn recorded_calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("mock call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("mock call log poisoned").len()
    }

    fn materialize(
        &self,
        request: &ChatRequest,
        scripted: &ScriptedResponse,
        prompt_tokens: usize,
    ) -> Result<ChatResponse, GatewayError> {
        let response = match scripted {
            ScriptedResponse::TransportError(msg) => {
                return Err(GatewayError::Transport(msg.clone()))
            }
            ScriptedResponse::Text(text) => ChatResponse {
                text: Some(text.clone()),
                tool_call: None,
                usage: Usage {
                    prompt_tokens: prompt_tokens as u32,
                    completion_tokens: estimate_tokens(text) as u32,
                },
            },
            ScriptedResponse::Tool { name, arguments } => {
                let rendered = serde_json::to_string(arguments)
                    .expect("tool arguments serialize infallibly");
                ChatResponse {
                    text: None,
                    tool_call: Some(ToolCall {
                        name: name.clone(),
                        arguments: arguments.clone(),
                    }),
                    usage: Usage {
                        prompt_tokens: prompt_tokens as u32,
                        completion_tokens: estimate_tokens(&rendered) as u32,
                    },
                }
            }
        };
        validate_response(request, &response)?;
        Ok(response)
    }
}

impl LlmClient for MockClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        precheck(request)?;
        self.calls
            .lock()
            .expect("mock call log poisoned")
            .push(request.clone());
        let haystack = request.flattened_text();
        let prompt_tokens = estimate_tokens(&haystack);
        let scripted = self
            .script
            .rules
            .iter()
            .find(|rule| haystack.contains(&rule.matcher) && rule.response.compatible_with(request))
            .map(|rule| &rule.response)
            .unwrap_or(&self.script.default_response);
        self.materialize(request, scripted, prompt_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, ParamType, ToolParam, ToolSchema};
    use serde_json::json;

    fn probe_tool() -> ToolSchema {
        ToolSchema {
            name: "probe".into(),
            description: "test".into(),
            parameters: vec![ToolParam {
                name: "value".into(),
                description: String::new(),
                param_type: ParamType::String,
                required: true,
            }],
        }
    }

    fn text_request(prompt: &str) -> ChatRequest {
        ChatRequest::text("system", prompt)
    }

    fn tool_request(prompt: &str) -> ChatRequest {
        ChatRequest {
            system_prompt: "system".into(),
            messages: vec![ChatMessage::user(prompt)],
            tools: vec![probe_tool()],
            tool_choice: ToolChoice::Required,
            temperature: 0.0,
            max_tokens: 64,
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let mut script = MockScript::default();
        script.script_response("needle", ScriptedResponse::text("first"));
        script.script_response("needle", ScriptedResponse::text("second"));
        let client = MockClient::new(script);
        let resp = client.chat(&text_request("find the needle here")).unwrap();
        assert_eq!(resp.text.as_deref(), Some("first"));
    }

    #[test]
    fn incompatible_rules_are_skipped() {
        let mut script = MockScript::default();
        // Text rule cannot satisfy a required tool call, so the later tool
        // rule must be chosen even though both matchers hit.
        script.script_response("needle", ScriptedResponse::text("text path"));
        script.script_response(
            "needle",
            ScriptedResponse::tool("probe", json!({"value": "tool path"})),
        );
        let client = MockClient::new(script);
        let resp = client.chat(&tool_request("needle")).unwrap();
        assert_eq!(resp.tool_call.unwrap().arguments["value"], json!("tool path"));
    }

    #[test]
    fn tool_rule_requires_offered_tool() {
        let mut script = MockScript::default();
        script.script_response(
            "needle",
            ScriptedResponse::tool("unoffered", json!({"value": "x"})),
        );
        script.script_response("needle", ScriptedResponse::text("fallback text"));
        let client = MockClient::new(script);
        let resp = client.chat(&text_request("needle")).unwrap();
        assert_eq!(resp.text.as_deref(), Some("fallback text"));
    }

    #[test]
    fn default_response_on_no_match() {
        let client = MockClient::new(MockScript::default());
        let resp = client.chat(&text_request("anything at all")).unwrap();
        assert_eq!(resp.text.as_deref(), Some("ok"));
    }

    #[test]
    fn scripted_transport_error_surfaces() {
        let mut script = MockScript::default();
        script.script_response("flaky", ScriptedResponse::TransportError("reset".into()));
        let client = MockClient::new(script);
        let err = client.chat(&text_request("flaky endpoint")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
    }

    #[test]
    fn matcher_sees_system_prompt_and_all_messages() {
        let mut script = MockScript::default();
        script.script_response("hidden-in-system", ScriptedResponse::text("sys"));
        let client = MockClient::new(script);
        let mut req = text_request("user text");
        req.system_prompt = "prefix hidden-in-system suffix".into();
        assert_eq!(client.chat(&req).unwrap().text.as_deref(), Some("sys"));
    }

    #[test]
    fn records_calls_in_order() {
        let client = MockClient::new(MockScript::default());
        client.chat(&text_request("one")).unwrap();
        client.chat(&text_request("two")).unwrap();
        let calls = client.recorded_calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].messages[0].text, "one");
        assert_eq!(calls[1].messages[0].text, "two");
    }

    #[test]
    fn usage_is_estimated() {
        let client = MockClient::new(MockScript::default());
        let resp = client.chat(&text_request("a longer prompt body")).unwrap();
        assert!(resp.usage.prompt_tokens > 0);
        assert!(resp.usage.completion_tokens > 0);
    }

    #[test]
    fn script_json_round_trip() {
        let mut script = MockScript::default();
        script.script_response("a", ScriptedResponse::text("alpha"));
        script.script_response("b", ScriptedResponse::tool("probe", json!({"value": "v"})));
        script.script_response("c", ScriptedResponse::TransportError("down".into()));
        script.default_response = ScriptedResponse::text("fallback");
        let json_text = script.to_json_string();
        let parsed = MockScript::from_json_str(&json_text).unwrap();
        assert_eq!(parsed, script);
    }

    #[test]
    fn script_rejects_ambiguous_rules() {
        let bad = r#"{"rules":[{"match":"x","text":"a","transport_error":"b"}]}"#;
        assert!(matches!(
            MockScript::from_json_str(bad),
            Err(GatewayError::Config(_))
        ));
        let empty = r#"{"rules":[{"match":"x"}]}"#;
        assert!(MockScript::from_json_str(empty).is_err());
    }

    #[test]
    fn script_parses_documented_example() {
        let text = r#"{
            "rules": [
                {"match": "window [60s,", "tool": {"name": "verdict", "arguments": {"answer": "yes"}}},
                {"match": "flaky", "transport_error": "connection reset"},
                {"match": "describe", "text": "all quiet"}
            ],
            "default": {"text": "ok"}
        }"#;
        let script = MockScript::from_json_str(text).unwrap();
        assert_eq!(script.rules.len(), 3);
        assert_eq!(script.default_response, ScriptedResponse::text("ok"));
    }
}
