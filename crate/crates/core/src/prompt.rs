//! Zero-shot and retrieval-augmented few-shot prompt assembly.
//!
//! The few-shot layout is
//!
//! ```text
//! {instruction_header}
//! ## Context: {C_1}
//! ## Decision: {D_1}
//! ...
//! {closing_instruction}
//! ## Context: {query}
//! ```
//!
//! with one example block per retrieved pair, most similar first, and no
//! trailing newline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{count_tokens, ContextDecisionPair, TokenizerProfile};
use crate::vstore::RetrievalHit;

pub const FEWSHOT_HEADER: &str = "You are an expert software architect who is tasked with making decisions for Architectural Decision Records (ADRs). You will be given a context and you need to provide a decision. Here are some examples:";
pub const FEWSHOT_EXAMPLE: &str = "## Context: {context}\n## Decision: {decision}\n";
pub const FEWSHOT_CLOSING: &str = "Make sure to give decisions that are similar to the ones above. Now provide a decision according to the context given below:";
pub const FEWSHOT_QUERY: &str = "## Context: {context}";

pub const FLAN_HEADER: &str =
    "This is an Architectural Decision Record. Provide a Decision for the Context given below.";
pub const FLAN_QUERY: &str = "## Context \n{context}\n## Decision\n";

pub const CHAT_SYSTEM: &str = "This is an Architectural Decision Record for a software. Give a ## Decision corresponding to the ## Context provided by the User.";

/// Shots for retrieval-augmented modes.
pub const DEFAULT_RAG_K: usize = 5;

/// Default prompt token budget.
pub const DEFAULT_BUDGET: usize = 4096;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("query context is empty")]
    EmptyContext,
    #[error("prompt needs {needed} tokens without any shots; budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("template {0} cannot build this kind of prompt")]
    WrongTemplate(TemplateId),
    #[error("invalid template {id}: {reason}")]
    InvalidTemplate { id: TemplateId, reason: String },
    #[error("template config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    FewshotV1,
    ZeroshotFlan,
    ZeroshotChat,
}

impl TemplateId {
    pub fn is_zero_shot(self) -> bool {
        !matches!(self, TemplateId::FewshotV1)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateId::FewshotV1 => "fewshot_v1",
            TemplateId::ZeroshotFlan => "zeroshot_flan",
            TemplateId::ZeroshotChat => "zeroshot_chat",
        })
    }
}

/// Instruction text plus placeholder formats. For `zeroshot_chat` the
/// header is sent as the system message and the rendered query as the user
/// message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub instruction_header: String,
    pub example_format: String,
    pub closing_instruction: String,
    pub query_format: String,
}

impl PromptTemplate {
    pub fn fewshot_v1() -> Self {
        PromptTemplate {
            template_id: TemplateId::FewshotV1,
            instruction_header: FEWSHOT_HEADER.into(),
            example_format: FEWSHOT_EXAMPLE.into(),
            closing_instruction: FEWSHOT_CLOSING.into(),
            query_format: FEWSHOT_QUERY.into(),
        }
    }

    pub fn zeroshot_flan() -> Self {
        PromptTemplate {
            template_id: TemplateId::ZeroshotFlan,
            instruction_header: FLAN_HEADER.into(),
            example_format: FEWSHOT_EXAMPLE.into(),
            closing_instruction: String::new(),
            query_format: FLAN_QUERY.into(),
        }
    }

    pub fn zeroshot_chat() -> Self {
        PromptTemplate {
            template_id: TemplateId::ZeroshotChat,
            instruction_header: CHAT_SYSTEM.into(),
            example_format: FEWSHOT_EXAMPLE.into(),
            closing_instruction: String::new(),
            query_format: "{context}".into(),
        }
    }

    pub fn builtin(id: TemplateId) -> Self {
        match id {
            TemplateId::FewshotV1 => PromptTemplate::fewshot_v1(),
            TemplateId::ZeroshotFlan => PromptTemplate::zeroshot_flan(),
            TemplateId::ZeroshotChat => PromptTemplate::zeroshot_chat(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |reason: String| PromptError::InvalidTemplate {
            id: self.template_id,
            reason,
        };
        for name in ["context", "decision"] {
            let n = count_placeholder(&self.example_format, name);
            if n != 1 {
                return Err(invalid(format!("example_format has {n} {{{name}}} placeholders")));
            }
        }
        let n = count_placeholder(&self.query_format, "context");
        if n != 1 {
            return Err(invalid(format!("query_format has {n} {{context}} placeholders")));
        }
        Ok(())
    }
}

fn count_placeholder(format: &str, name: &str) -> usize {
    format.matches(&format!("{{{name}}}")).count()
}

/// Single-pass substitution, so placeholder-like text inside values is left alone.
fn fill(format: &str, context: &str, decision: &str) -> String {
    let mut out = String::with_capacity(format.len() + context.len() + decision.len());
    let mut rest = format;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        if let Some(t) = tail.strip_prefix("{context}") {
            out.push_str(context);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{decision}") {
            out.push_str(decision);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Templates keyed by id. Loaded from JSON as an object whose keys are
/// template ids and whose values override any subset of the built-in fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateSet {
    templates: HashMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = [
            TemplateId::FewshotV1,
            TemplateId::ZeroshotFlan,
            TemplateId::ZeroshotChat,
        ]
        .into_iter()
        .map(|id| (id, PromptTemplate::builtin(id)))
        .collect();
        TemplateSet { templates }
    }
}

impl TemplateSet {
    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let overrides: HashMap<TemplateId, serde_json::Map<String, serde_json::Value>> =
            serde_json::from_str(text).map_err(|e| PromptError::Config(e.to_string()))?;
        let mut set = TemplateSet::default();
        for (id, fields) in overrides {
            let mut base =
                serde_json::to_value(PromptTemplate::builtin(id)).map_err(|e| PromptError::Config(e.to_string()))?;
            let obj = base.as_object_mut().expect("template serializes to an object");
            for (k, v) in fields {
                if k == "template_id" {
                    continue;
                }
                obj.insert(k, v);
            }
            let t: PromptTemplate = serde_json::from_value(base).map_err(|e| PromptError::Config(e.to_string()))?;
            t.validate()?;
            set.templates.insert(id, t);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PromptError::Config(format!("{}: {e}", path.display())))?;
        TemplateSet::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// The prompt, or for chat templates the user message.
    pub text: String,
    /// System message, for chat templates only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub shots: Vec<ContextDecisionPair>,
    pub shot_ids: Vec<String>,
    pub query_context: String,
    pub token_count: usize,
    pub template_id: TemplateId,
}

impl PromptBundle {
    /// Re-renders the prompt text from the bundle's own fields.
    pub fn render_text(&self, template: &PromptTemplate) -> String {
        if template.template_id.is_zero_shot() {
            render_zero_shot(template, &self.query_context).1
        } else {
            render_fewshot(template, &self.shots, &self.query_context)
        }
    }

    /// System message and prompt concatenated, as accounted for in token counts.
    pub fn full_text(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n{}", self.text),
            None => self.text.clone(),
        }
    }
}

pub fn render_fewshot(template: &PromptTemplate, shots: &[ContextDecisionPair], query_context: &str) -> String {
    let mut text = String::new();
    text.push_str(&template.instruction_header);
    text.push('\n');
    for shot in shots {
        text.push_str(&fill(&template.example_format, &shot.context, &shot.decision));
    }
    text.push_str(&template.closing_instruction);
    text.push('\n');
    text.push_str(&fill(&template.query_format, query_context, ""));
    text
}

fn render_zero_shot(template: &PromptTemplate, query_context: &str) -> (Option<String>, String) {
    let query = fill(&template.query_format, query_context, "");
    match template.template_id {
        TemplateId::ZeroshotChat => (Some(template.instruction_header.clone()), query),
        _ => (None, format!("{}\n{query}", template.instruction_header)),
    }
}

/// Builds a few-shot prompt from hits in retrieval order. When the prompt
/// exceeds `budget` tokens, whole shots are dropped from the end.
pub fn build_fewshot_prompt(
    hits: &[RetrievalHit],
    query_context: &str,
    template: &PromptTemplate,
    budget: usize,
) -> Result<PromptBundle, PromptError> {
    if template.template_id.is_zero_shot() {
        return Err(PromptError::WrongTemplate(template.template_id));
    }
    if query_context.trim().is_empty() {
        return Err(PromptError::EmptyContext);
    }
    let mut shots: Vec<ContextDecisionPair> = hits.iter().map(|h| h.pair.clone()).collect();
    let mut ids: Vec<String> = hits.iter().map(|h| h.record_id.clone()).collect();
    loop {
        let text = render_fewshot(template, &shots, query_context);
        let token_count = count_tokens(&text, TokenizerProfile::WordPunct);
        if token_count <= budget {
            return Ok(PromptBundle {
                text,
                system: None,
                shots,
                shot_ids: ids,
                query_context: query_context.to_string(),
                token_count,
                template_id: template.template_id,
            });
        }
        if shots.pop().is_none() {
            return Err(PromptError::BudgetTooSmall {
                needed: token_count,
                budget,
            });
        }
        ids.pop();
    }
}

pub fn build_zero_shot_prompt(query_context: &str, template: &PromptTemplate) -> Result<PromptBundle, PromptError> {
    if !template.template_id.is_zero_shot() {
        return Err(PromptError::WrongTemplate(template.template_id));
    }
    if query_context.trim().is_empty() {
        return Err(PromptError::EmptyContext);
    }
    let (system, text) = render_zero_shot(template, query_context);
    let mut bundle = PromptBundle {
        text,
        system,
        shots: Vec::new(),
        shot_ids: Vec::new(),
        query_context: query_context.to_string(),
        token_count: 0,
        template_id: template.template_id,
    };
    bundle.token_count = count_tokens(&bundle.full_text(), TokenizerProfile::WordPunct);
    Ok(bundle)
}
