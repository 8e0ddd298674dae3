//! Chat templates and prompt rendering.
//!
//! A question prompt replays the system prompt and every completed
//! (question, answer) turn, then opens a new user turn so the model speaks
//! as the user. An answer prompt additionally carries the pending question
//! and opens the assistant turn. Continuation prompts carry no role markers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{LayerSpec, Mode, Role};

pub const LLAMA2_CHAT: &str = "llama2-chat";
pub const PLAIN: &str = "plain";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("path roles do not fit the prompt shape: {0}")]
    Structure(String),
    #[error("continuation prompts only apply to role-free paths")]
    Mode,
    #[error("completion is empty after stripping")]
    EmptyCompletion,
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {path}: {message}")]
    Load { path: String, message: String },
}

/// Role-marker byte strings for one model family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatTemplate {
    pub id: String,
    #[serde(default)]
    pub system_open: String,
    #[serde(default)]
    pub system_close: String,
    #[serde(default)]
    pub user_open: String,
    #[serde(default)]
    pub user_close: String,
    #[serde(default)]
    pub assistant_open: String,
    #[serde(default)]
    pub assistant_close: String,
    /// Between completed turns in chat mode; between texts in continuation mode.
    #[serde(default)]
    pub turn_separator: String,
    /// Placed between `assistant_open` and a completed answer when the answer
    /// is replayed as history. Generation prompts stop at `assistant_open`.
    #[serde(default)]
    pub assistant_lead: String,
}

impl ChatTemplate {
    /// Llama-2-chat: the system block sits inside the first `[INST]`, and the
    /// model starts answering after `[/INST]`.
    pub fn llama2_chat() -> Self {
        ChatTemplate {
            id: LLAMA2_CHAT.to_string(),
            system_open: "[INST] <<SYS>>\n".to_string(),
            system_close: "\n<</SYS>>\n\n".to_string(),
            user_open: String::new(),
            user_close: String::new(),
            assistant_open: " [/INST]".to_string(),
            assistant_close: " </s>".to_string(),
            turn_separator: "<s>[INST] ".to_string(),
            assistant_lead: " ".to_string(),
        }
    }

    /// No markers; texts joined by a single space.
    pub fn plain() -> Self {
        ChatTemplate {
            id: PLAIN.to_string(),
            system_open: String::new(),
            system_close: String::new(),
            user_open: String::new(),
            user_close: String::new(),
            assistant_open: String::new(),
            assistant_close: String::new(),
            turn_separator: " ".to_string(),
            assistant_lead: String::new(),
        }
    }

    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            LLAMA2_CHAT => Some(Self::llama2_chat()),
            PLAIN => Some(Self::plain()),
            _ => None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, PromptError> {
        let load_err = |message: String| PromptError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    }

    /// A built-in id, or else a path to a template JSON file.
    pub fn resolve(id_or_path: &str) -> Result<Self, PromptError> {
        if let Some(t) = Self::builtin(id_or_path) {
            return Ok(t);
        }
        let path = Path::new(id_or_path);
        if path.exists() {
            Self::from_path(path)
        } else {
            Err(PromptError::UnknownTemplate(id_or_path.to_string()))
        }
    }

    fn role_markers(&self) -> [&str; 6] {
        [
            &self.system_open,
            &self.system_close,
            &self.user_open,
            &self.user_close,
            &self.assistant_open,
            &self.assistant_close,
        ]
    }

    /// Whitespace-delimited pieces of every marker, e.g. `[INST]`, `</s>`.
    /// A completion is cut at the first of these.
    pub fn marker_pieces(&self) -> Vec<&str> {
        let mut pieces: Vec<&str> = Vec::new();
        let all = self
            .role_markers()
            .into_iter()
            .chain([self.turn_separator.as_str(), self.assistant_lead.as_str()]);
        for marker in all {
            for piece in marker.split_whitespace() {
                if !pieces.contains(&piece) {
                    pieces.push(piece);
                }
            }
        }
        pieces
    }

    /// True if joining texts with `turn_separator` introduces no role marker.
    pub fn separator_is_role_free(&self) -> bool {
        let sep = self.turn_separator.as_str();
        self.role_markers()
            .into_iter()
            .flat_map(str::split_whitespace)
            .all(|piece| !sep.contains(piece))
    }
}

/// One ancestor on the path being rendered (root excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Turn<'a> {
    pub role: Role,
    pub text: &'a str,
}

impl<'a> Turn<'a> {
    pub fn new(role: Role, text: &'a str) -> Self {
        Turn { role, text }
    }
}

fn check_alternation(path: &[Turn<'_>]) -> Result<(), PromptError> {
    for (i, turn) in path.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::Question } else { Role::Answer };
        if turn.role != expected {
            return Err(PromptError::Structure(format!(
                "position {} holds {:?}, expected {:?}",
                i + 1,
                turn.role,
                expected
            )));
        }
    }
    Ok(())
}

/// System block plus `pairs` completed turns, and the separator that opens
/// the next turn when at least one turn precedes it.
fn render_history(path: &[Turn<'_>], pairs: usize, template: &ChatTemplate, system_prompt: &str) -> String {
    let mut out = String::new();
    out.push_str(&template.system_open);
    out.push_str(system_prompt);
    out.push_str(&template.system_close);
    for pair in path[..2 * pairs].chunks(2) {
        out.push_str(&template.user_open);
        out.push_str(pair[0].text);
        out.push_str(&template.user_close);
        out.push_str(&template.assistant_open);
        out.push_str(&template.assistant_lead);
        out.push_str(pair[1].text);
        out.push_str(&template.assistant_close);
        out.push_str(&template.turn_separator);
    }
    out
}

/// Prompt for the next question layer, given `i` completed turns.
pub fn render_question_prompt(
    path: &[Turn<'_>],
    template: &ChatTemplate,
    system_prompt: &str,
) -> Result<String, PromptError> {
    check_alternation(path)?;
    if !path.len().is_multiple_of(2) {
        return Err(PromptError::Structure(
            "question prompt needs a path of complete turns".into(),
        ));
    }
    let mut out = render_history(path, path.len() / 2, template, system_prompt);
    out.push_str(&template.user_open);
    Ok(out)
}

/// Prompt for the next answer layer; `path` ends with the pending question.
pub fn render_answer_prompt(
    path: &[Turn<'_>],
    template: &ChatTemplate,
    system_prompt: &str,
) -> Result<String, PromptError> {
    check_alternation(path)?;
    if path.len() % 2 != 1 {
        return Err(PromptError::Structure(
            "answer prompt needs a path ending with a question".into(),
        ));
    }
    let pending = path[path.len() - 1];
    let mut out = render_history(path, path.len() / 2, template, system_prompt);
    out.push_str(&template.user_open);
    out.push_str(pending.text);
    out.push_str(&template.user_close);
    out.push_str(&template.assistant_open);
    Ok(out)
}

/// Role-free continuation prompt: the system prompt followed by each
/// ancestor text, each preceded by `separator`.
pub fn render_continuation_prompt(
    path: &[Turn<'_>],
    system_prompt: &str,
    separator: &str,
) -> Result<String, PromptError> {
    if path.iter().any(|t| t.role != Role::Continuation) {
        return Err(PromptError::Mode);
    }
    let mut out = String::from(system_prompt);
    for turn in path {
        out.push_str(separator);
        out.push_str(turn.text);
    }
    Ok(out)
}

/// Render the prompt that produces children of the last node on `path`.
pub fn render_for_layer(
    mode: Mode,
    next_role: Role,
    path: &[Turn<'_>],
    template: &ChatTemplate,
    system_prompt: &str,
) -> Result<String, PromptError> {
    match (mode, next_role) {
        (Mode::Pt, Role::Continuation) => {
            render_continuation_prompt(path, system_prompt, &template.turn_separator)
        }
        (Mode::Sft, Role::Question) => render_question_prompt(path, template, system_prompt),
        (Mode::Sft, Role::Answer) => render_answer_prompt(path, template, system_prompt),
        _ => Err(PromptError::Mode),
    }
}

/// Cut a raw completion at the first stop marker or role-marker piece and
/// trim surrounding whitespace.
pub fn strip_completion(raw: &str, layer: &LayerSpec, template: &ChatTemplate) -> Result<String, PromptError> {
    let cut = layer
        .stop_markers
        .iter()
        .map(String::as_str)
        .filter(|m| !m.is_empty())
        .chain(template.marker_pieces())
        .filter_map(|m| raw.find(m))
        .min()
        .unwrap_or(raw.len());
    let cleaned = raw[..cut].trim();
    if cleaned.is_empty() {
        Err(PromptError::EmptyCompletion)
    } else {
        Ok(cleaned.to_string())
    }
}
