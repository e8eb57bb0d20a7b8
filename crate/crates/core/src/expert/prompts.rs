//! Per-role prompt templates.
//!
//! A template file holds the system text, a line containing only `---`, then
//! the user text. `{{label}}` slots are filled with the request block of that
//! label: strings verbatim, structured payloads as pretty JSON, absent blocks
//! as the empty string.

use serde_json::Value;

use super::{labels, ExpertRequest, Role};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template has no `---` separator")]
    MissingSeparator,
    #[error("unterminated slot starting at byte {0}")]
    Unterminated(usize),
    #[error("unknown slot `{{{{{0}}}}}`")]
    UnknownSlot(String),
}

const KNOWN_LABELS: [&str; 15] = [
    labels::SUMMARY,
    labels::RECORD,
    labels::FEEDBACK,
    labels::BASE,
    labels::EXAM,
    labels::ENTITIES,
    labels::CANDIDATES,
    labels::ABNORMAL,
    labels::GRAPH_CONTEXT,
    labels::PATIENT,
    labels::EXCLUSION_PATHS,
    labels::CONFUSION_EVIDENCE,
    labels::CONFIDENCE,
    labels::O_EXC,
    labels::O_CONF,
];

/// Built-in template text for a role.
pub fn builtin_source(role: Role) -> &'static str {
    match role {
        Role::Primary => include_str!("../../prompts/primary.txt"),
        Role::Laboratory => include_str!("../../prompts/laboratory.txt"),
        Role::SingleDisease => include_str!("../../prompts/single_disease.txt"),
        Role::Exclusion => include_str!("../../prompts/exclusion.txt"),
        Role::Confusion => include_str!("../../prompts/confusion.txt"),
        Role::Adjustment => include_str!("../../prompts/adjustment.txt"),
    }
}

/// Slot labels in order of appearance.
pub fn slots(text: &str) -> Result<Vec<&str>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(TemplateError::Unterminated(offset + start))?;
        out.push(after[..end].trim());
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen = false;
        for line in source.lines() {
            if !seen && line.trim() == "---" {
                seen = true;
            } else if seen {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen {
            return Err(TemplateError::MissingSeparator);
        }
        let t = Self {
            system: system.join("\n").trim().to_string(),
            user: user.join("\n").trim().to_string(),
        };
        for slot in slots(&t.system)?.into_iter().chain(slots(&t.user)?) {
            if !KNOWN_LABELS.contains(&slot) {
                return Err(TemplateError::UnknownSlot(slot.to_string()));
            }
        }
        Ok(t)
    }

    pub fn builtin(role: Role) -> Self {
        Self::parse(builtin_source(role)).expect("built-in templates are valid")
    }

    fn fill(text: &str, request: &ExpertRequest) -> String {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                return out;
            };
            match request.get(after[..end].trim()) {
                None => {}
                Some(Value::String(s)) => out.push_str(s),
                Some(v) => out.push_str(&serde_json::to_string_pretty(v).unwrap_or_default()),
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        out
    }

    /// `(system, user)` message texts for `request`.
    pub fn render(&self, request: &ExpertRequest) -> (String, String) {
        (Self::fill(&self.system, request), Self::fill(&self.user, request))
    }
}
