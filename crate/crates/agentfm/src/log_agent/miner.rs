//! Log template mining with a fixed-depth prefix tree.
//!
//! Messages are split on whitespace and each token is first masked if it
//! looks like a variable (number, hex id, IPv4 with optional port, UUID, or
//! filesystem path). The masked token vector is routed through a two-level
//! tree — token count, then first token — to a small candidate list of
//! templates. The candidate sharing the most constant tokens is reused when
//! its similarity is at least [`SIMILARITY_THRESHOLD`] (mismatching constant
//! positions degrade to wildcards); otherwise the message founds a new
//! template. Parameters are the raw tokens at wildcard positions, so
//! `pattern + parameters` always reconstructs the original token sequence.

use crate::telemetry::{LogEntry, LogLevel};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

/// Stable identifier of a mined template, assigned in discovery order.
pub type TemplateId = u64;

/// Minimum fraction of a template's constant tokens that must match before
/// a message is merged into it.
pub const SIMILARITY_THRESHOLD: f64 = 0.5;

/// Wildcard marker used in rendered patterns.
pub const WILDCARD: &str = "<*>";

/// Pattern assigned to whitespace-only messages, which have no tokens.
pub const BLANK_PATTERN: &str = "<blank>";

/// One position of a template: a constant word or a wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Token {
    Wildcard,
    Word(String),
}

/// A mined template: its id, token layout, rendered pattern, match count,
/// and the highest severity at which it was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub template_id: TemplateId,
    tokens: Vec<Token>,
    pub pattern: String,
    pub match_count: u64,
    pub max_level: LogLevel,
}

impl EventTemplate {
    fn render(tokens: &[Token]) -> String {
        if tokens.is_empty() {
            return BLANK_PATTERN.to_string();
        }
        let parts: Vec<&str> = tokens
            .iter()
            .map(|t| match t {
                Token::Wildcard => WILDCARD,
                Token::Word(w) => w.as_str(),
            })
            .collect();
        parts.join(" ")
    }

    /// Number of wildcard positions (arity of the parameter list).
    pub fn wildcard_count(&self) -> usize {
        self.tokens.iter().filter(|t| **t == Token::Wildcard).count()
    }

    /// Substitutes `params` into the wildcard positions, reproducing a
    /// concrete token sequence. Errors if the arity does not match.
    pub fn reconstruct(&self, params: &[String]) -> Option<Vec<String>> {
        if params.len() != self.wildcard_count() {
            return None;
        }
        let mut params = params.iter();
        Some(
            self.tokens
                .iter()
                .map(|t| match t {
                    Token::Wildcard => params.next().expect("arity checked").clone(),
                    Token::Word(w) => w.clone(),
                })
                .collect(),
        )
    }
}

struct MaskRegexes {
    number: Regex,
    hex: Regex,
    ipv4: Regex,
    uuid: Regex,
}

fn mask_regexes() -> &'static MaskRegexes {
    static CELL: OnceLock<MaskRegexes> = OnceLock::new();
    CELL.get_or_init(|| MaskRegexes {
        number: Regex::new(r"^[+-]?\d+(\.\d+)?([eE][+-]?\d+)?$").unwrap(),
        hex: Regex::new(r"^(0[xX][0-9a-fA-F]+|[0-9a-fA-F]{8,})$").unwrap(),
        ipv4: Regex::new(r"^\d{1,3}(\.\d{1,3}){3}(:\d+)?$").unwrap(),
        uuid: Regex::new(
            r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$",
        )
        .unwrap(),
    })
}

/// Decides whether a raw token is a variable. Trailing punctuation is
/// ignored for classification only; parameters keep the original token.
fn is_variable(token: &str) -> bool {
    let trimmed = token.trim_end_matches([',', '.', ';', ':', ')']).trim_start_matches('(');
    if trimmed.is_empty() {
        return false;
    }
    let re = mask_regexes();
    if re.number.is_match(trimmed) || re.ipv4.is_match(trimmed) || re.uuid.is_match(trimmed) {
        return true;
    }
    if re.hex.is_match(trimmed) && trimmed.chars().any(|c| c.is_ascii_digit()) {
        return true;
    }
    // Filesystem paths: rooted or explicitly relative.
    if trimmed.starts_with('/') && trimmed.len() > 1
        || trimmed.starts_with("./")
        || trimmed.starts_with("../")
    {
        return true;
    }
    false
}

/// Result of parsing one message: the template it matched and the raw tokens
/// captured at the template's wildcard positions, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedMessage {
    pub template_id: TemplateId,
    pub parameters: Vec<String>,
}

/// Streaming template miner. One miner instance learns the template table
/// for one log stream; parsing is deterministic given the input order.
#[derive(Debug, Default)]
pub struct TemplateMiner {
    /// Prefix tree: (token count, first masked token) → candidate templates
    /// in creation order (so the lowest template id is tried first).
    buckets: HashMap<(usize, String), Vec<TemplateId>>,
    templates: BTreeMap<TemplateId, EventTemplate>,
    next_id: TemplateId,
}

impl TemplateMiner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a bare message at severity `level`.
    pub fn parse_message(&mut self, message: &str, level: LogLevel) -> ParsedMessage {
        let raw: Vec<&str> = message.split_whitespace().collect();
        let masked: Vec<Token> = raw
            .iter()
            .map(|t| {
                if is_variable(t) {
                    Token::Wildcard
                } else {
                    Token::Word((*t).to_string())
                }
            })
            .collect();
        let first_key = match masked.first() {
            None => String::new(),
            Some(Token::Wildcard) => WILDCARD.to_string(),
            Some(Token::Word(w)) => w.clone(),
        };
        let bucket_key = (masked.len(), first_key);
        let candidates = self.buckets.entry(bucket_key).or_default();

        // Pick the candidate with the highest similarity over its constant
        // tokens; ties resolve to the lowest template id because candidates
        // are stored in creation order and `>` keeps the first maximum.
        let mut best: Option<(TemplateId, f64)> = None;
        for &id in candidates.iter() {
            let template = &self.templates[&id];
            let mut constants = 0usize;
            let mut matches = 0usize;
            for (t_tok, m_tok) in template.tokens.iter().zip(&masked) {
                if let Token::Word(w) = t_tok {
                    constants += 1;
                    if matches!(m_tok, Token::Word(m) if m == w) {
                        matches += 1;
                    }
                }
            }
            // A fully-wildcarded template matches anything of its length.
            let sim = if constants == 0 {
                1.0
            } else {
                matches as f64 / constants as f64
            };
            if sim >= SIMILARITY_THRESHOLD && best.map_or(true, |(_, s)| sim > s) {
                best = Some((id, sim));
            }
        }

        let template_id = match best {
            Some((id, _)) => {
                let template = self.templates.get_mut(&id).expect("candidate exists");
                // Degrade mismatching constant positions to wildcards.
                for (t_tok, m_tok) in template.tokens.iter_mut().zip(&masked) {
                    let keep = match (&t_tok, m_tok) {
                        (Token::Word(w), Token::Word(m)) => w == m,
                        (Token::Wildcard, _) => true,
                        (Token::Word(_), Token::Wildcard) => false,
                    };
                    if !keep {
                        *t_tok = Token::Wildcard;
                    }
                }
                template.pattern = EventTemplate::render(&template.tokens);
                template.match_count += 1;
                template.max_level = template.max_level.max(level);
                id
            }
            None => {
                let id = self.next_id;
                self.next_id += 1;
                let template = EventTemplate {
                    template_id: id,
                    pattern: EventTemplate::render(&masked),
                    tokens: masked.clone(),
                    match_count: 1,
                    max_level: level,
                };
                self.templates.insert(id, template);
                self.buckets
                    .get_mut(&(masked.len(), match masked.first() {
                        None => String::new(),
                        Some(Token::Wildcard) => WILDCARD.to_string(),
                        Some(Token::Word(w)) => w.clone(),
                    }))
                    .expect("bucket created above")
                    .push(id);
                id
            }
        };

        let template = &self.templates[&template_id];
        let parameters = raw
            .iter()
            .zip(&template.tokens)
            .filter(|(_, t)| **t == Token::Wildcard)
            .map(|(r, _)| (*r).to_string())
            .collect();
        ParsedMessage {
            template_id,
            parameters,
        }
    }

    /// Parses a structured log entry.
    pub fn parse_log(&mut self, entry: &LogEntry) -> ParsedMessage {
        self.parse_message(&entry.message, entry.level)
    }

    /// The template table, ordered by template id.
    pub fn templates(&self) -> &BTreeMap<TemplateId, EventTemplate> {
        &self.templates
    }

    pub fn template(&self, id: TemplateId) -> Option<&EventTemplate> {
        self.templates.get(&id)
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    /// Checks that `parsed` losslessly reconstructs `message`'s tokens.
    pub fn reconstructs(&self, message: &str, parsed: &ParsedMessage) -> bool {
        let raw: Vec<String> = message.split_whitespace().map(str::to_string).collect();
        self.template(parsed.template_id)
            .and_then(|t| t.reconstruct(&parsed.parameters))
            .map_or(false, |tokens| tokens == raw)
    }
}
