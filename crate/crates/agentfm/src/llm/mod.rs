//! Gateway between the agents and a chat-completion language model.
//!
//! Two providers implement [`LlmClient`]: an HTTP client for
//! OpenAI-compatible endpoints ([`http`]) and a deterministic scripted mock
//! ([`mock`]) used by tests and offline runs. Both return validated
//! [`ChatResponse`] values: tool calls are checked against the declared
//! [`ToolSchema`]s before any agent sees them, so agents never parse
//! free-form model output for structured decisions.

pub mod http;
pub mod mock;

pub use http::{parse_chat_completion_body, HttpClient, HttpConfig};
pub use mock::{MockClient, MockRule, MockScript, ScriptedResponse};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Errors produced by the gateway.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    /// A request was malformed before it ever reached a provider.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The provider could not be reached (connect, timeout, 5xx). Transport
    /// errors are retried by providers that talk to real networks.
    #[error("transport error: {0}")]
    Transport(String),
    /// The provider answered, but the payload broke the chat protocol
    /// (unknown tool, bad argument types, missing required tool call).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Provider configuration is missing or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
}

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

/// One turn of conversation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// Parameter type accepted by a tool. Kept deliberately small: agents only
/// exchange strings, booleans, closed string enums, string lists, and lists
/// of objects whose shape the agent validates itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Boolean,
    Enum(Vec<String>),
    StringArray,
    /// Free-form JSON array; element structure is the caller's contract.
    Array,
}

/// One named tool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    pub description: String,
    pub param_type: ParamType,
    pub required: bool,
}

/// A callable tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParam>,
}

/// Whether the model may answer in text or must call a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolChoice {
    Auto,
    Required,
}

/// A fully specified chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSchema>,
    pub tool_choice: ToolChoice,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// A plain-text request with no tools.
    pub fn text(system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            messages: vec![ChatMessage::user(user)],
            tools: Vec::new(),
            tool_choice: ToolChoice::Auto,
            temperature: 0.0,
            max_tokens: 512,
        }
    }

    /// All text the request exposes to matching and token estimation, in
    /// order: system prompt, then each message.
    pub fn flattened_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidArgument(
                "chat request needs at least one message".into(),
            ));
        }
        if self.tool_choice == ToolChoice::Required && self.tools.is_empty() {
            return Err(GatewayError::InvalidArgument(
                "tool_choice=required with no tools offered".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidArgument(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidArgument("max_tokens must be > 0".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for tool in &self.tools {
            if !names.insert(tool.name.as_str()) {
                return Err(GatewayError::InvalidArgument(format!(
                    "duplicate tool name {:?}",
                    tool.name
                )));
            }
        }
        Ok(())
    }
}

/// A tool invocation returned by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: serde_json::Map<String, Value>,
}

/// Token accounting reported by the provider (estimated for the mock).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

/// A validated model response: free text, a tool call, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: Option<String>,
    pub tool_call: Option<ToolCall>,
    pub usage: Usage,
}

/// Provider abstraction. Implementations must return only responses that
/// pass [`validate_response`] for the given request.
pub trait LlmClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Crude token estimate (≈ 4 characters per token) used for budgeting and
/// for the mock provider's usage accounting.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count() / 4 + 1
}

/// Checks a provider response against the request contract:
///
/// * at least one of `text` / `tool_call` is present;
/// * `tool_choice == Required` implies a tool call;
/// * a tool call names an offered tool, supplies every required parameter,
///   introduces no unknown parameters, and respects parameter types.
pub fn validate_response(
    request: &ChatRequest,
    response: &ChatResponse,
) -> Result<(), GatewayError> {
    if response.text.is_none() && response.tool_call.is_none() {
        return Err(GatewayError::Protocol(
            "response carries neither text nor a tool call".into(),
        ));
    }
    if request.tool_choice == ToolChoice::Required && response.tool_call.is_none() {
        return Err(GatewayError::Protocol(
            "tool call required but the model answered in free text".into(),
        ));
    }
    let Some(call) = &response.tool_call else {
        return Ok(());
    };
    let Some(schema) = request.tools.iter().find(|t| t.name == call.name) else {
        return Err(GatewayError::Protocol(format!(
            "model called unknown tool {:?}",
            call.name
        )));
    };
    for param in &schema.parameters {
        match call.arguments.get(&param.name) {
            None => {
                if param.required {
                    return Err(GatewayError::Protocol(format!(
                        "tool {:?} call missing required parameter {:?}",
                        call.name, param.name
                    )));
                }
            }
            Some(value) => check_param_type(&call.name, param, value)?,
        }
    }
    for key in call.arguments.keys() {
        if !schema.parameters.iter().any(|p| &p.name == key) {
            return Err(GatewayError::Protocol(format!(
                "tool {:?} call has unknown parameter {:?}",
                call.name, key
            )));
        }
    }
    Ok(())
}

fn check_param_type(tool: &str, param: &ToolParam, value: &Value) -> Result<(), GatewayError> {
    let mismatch = |expected: &str| {
        Err(GatewayError::Protocol(format!(
            "tool {tool:?} parameter {:?} expected {expected}, got {value}",
            param.name
        )))
    };
    match &param.param_type {
        ParamType::String => {
            if !value.is_string() {
                return mismatch("a string");
            }
        }
        ParamType::Boolean => {
            if !value.is_boolean() {
                return mismatch("a boolean");
            }
        }
        ParamType::Enum(options) => match value.as_str() {
            Some(s) if options.iter().any(|o| o == s) => {}
            _ => {
                return Err(GatewayError::Protocol(format!(
                    "tool {tool:?} parameter {:?} must be one of {options:?}, got {value}",
                    param.name
                )))
            }
        },
        ParamType::StringArray => match value.as_array() {
            Some(items) if items.iter().all(Value::is_string) => {}
            _ => return mismatch("an array of strings"),
        },
        ParamType::Array => {
            if !value.is_array() {
                return mismatch("an array");
            }
        }
    }
    Ok(())
}

/// Tool used by [`ask_yes_no`].
fn verdict_tool() -> ToolSchema {
    ToolSchema {
        name: "verdict".into(),
        description: "Deliver the final yes/no verdict after reasoning.".into(),
        parameters: vec![ToolParam {
            name: "answer".into(),
            description: "The verdict.".into(),
            param_type: ParamType::Enum(vec!["yes".into(), "no".into()]),
            required: true,
        }],
    }
}

/// Asks a strict yes/no question: the model must answer through the
/// `verdict` tool, whose single argument is the closed enum `yes`/`no`.
/// Free-text answers are protocol errors; the function never guesses from
/// prose.
pub fn ask_yes_no(
    question: &str,
    context: &str,
    llm: &dyn LlmClient,
) -> Result<bool, GatewayError> {
    let mut user = String::new();
    if !context.is_empty() {
        user.push_str(context);
        user.push_str("\n\n");
    }
    user.push_str(question);
    let request = ChatRequest {
        system_prompt: "Answer the question strictly by calling the `verdict` tool with \
                        `answer` set to \"yes\" or \"no\". Think step by step first."
            .into(),
        messages: vec![ChatMessage::user(user)],
        tools: vec![verdict_tool()],
        tool_choice: ToolChoice::Required,
        temperature: 0.0,
        max_tokens: 256,
    };
    let response = llm.chat(&request)?;
    let call = response.tool_call.as_ref().ok_or_else(|| {
        GatewayError::Protocol("verdict tool call missing from validated response".into())
    })?;
    match call.arguments.get("answer").and_then(Value::as_str) {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        other => Err(GatewayError::Protocol(format!(
            "verdict answer must be yes/no, got {other:?}"
        ))),
    }
}

/// A labeled block of prompt context.
#[derive(Debug, Clone, PartialEq)]
struct PromptBlock {
    label: String,
    text: String,
}

/// Result of [`PromptAssembler::assemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub text: String,
    /// Labels of blocks dropped or truncated to honor the budget, oldest
    /// first.
    pub truncated_blocks: Vec<String>,
    pub estimated_tokens: usize,
}

/// Builds prompt context from labeled blocks under a token budget.
///
/// Blocks are kept newest-first when the budget is tight: the assembler
/// drops whole blocks oldest-first, and if a single remaining block still
/// exceeds the budget it truncates that block's head (keeping its tail,
/// where the most recent content lives).
#[derive(Debug, Clone)]
pub struct PromptAssembler {
    budget_tokens: usize,
    blocks: Vec<PromptBlock>,
}

impl PromptAssembler {
    pub fn new(budget_tokens: usize) -> Self {
        PromptAssembler {
            budget_tokens: budget_tokens.max(1),
            blocks: Vec::new(),
        }
    }

    /// Appends a block; earlier blocks are considered older.
    pub fn push(&mut self, label: impl Into<String>, text: impl Into<String>) {
        self.blocks.push(PromptBlock {
            label: label.into(),
            text: text.into(),
        });
    }

    pub fn assemble(&self) -> AssembledPrompt {
        let mut kept: Vec<&PromptBlock> = self.blocks.iter().collect();
        let mut truncated = Vec::new();
        let total = |blocks: &[&PromptBlock]| -> usize {
            blocks.iter().map(|b| estimate_tokens(&b.text) + 1).sum()
        };
        while kept.len() > 1 && total(&kept) > self.budget_tokens {
            truncated.push(kept.remove(0).label.clone());
        }
        let mut text = String::new();
        let mut tail_truncated: Option<String> = None;
        if let [only] = kept.as_slice() {
            let tokens = estimate_tokens(&only.text) + 1;
            if tokens > self.budget_tokens {
                // Keep roughly budget*4 characters from the tail of the block.
                let keep_chars = self.budget_tokens.saturating_sub(1).saturating_mul(4).max(1);
                let chars: Vec<char> = only.text.chars().collect();
                let start = chars.len().saturating_sub(keep_chars);
                text = chars[start..].iter().collect();
                tail_truncated = Some(only.label.clone());
            }
        }
        if tail_truncated.is_none() {
            let mut first = true;
            for block in &kept {
                if !first {
                    text.push_str("\n\n");
                }
                first = false;
                text.push_str(&block.text);
            }
        } else {
            truncated.push(tail_truncated.unwrap());
        }
        let estimated_tokens = estimate_tokens(&text);
        AssembledPrompt {
            text,
            truncated_blocks: truncated,
            estimated_tokens,
        }
    }
}

/// Validates a request and dispatches it, used by providers before their
/// transport-specific work.
pub(crate) fn precheck(request: &ChatRequest) -> Result<(), GatewayError> {
    request.validate()
}
