use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// One linearized dialogue tree as it appears in the input JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub messages: Vec<Message>,
}

impl RawRecord {
    pub fn new(messages: Vec<Message>) -> Self {
        Self { id: None, messages }
    }

    /// Parses one JSONL line. Unknown roles and missing fields are rejected.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let record: RawRecord = serde_json::from_str(line.trim_end_matches(['\r', '\n']))?;
        Ok(record)
    }

    /// True when at least one user and one assistant turn are present.
    pub fn is_trainable(&self) -> bool {
        self.messages.iter().any(|m| m.role == Role::User)
            && self.messages.iter().any(|m| m.role == Role::Assistant)
    }
}

/// Role scaffolding wrapped around every retained turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTemplate {
    /// Emitted before a turn; `{role}` is replaced with the role name.
    pub turn_prefix: String,
    pub turn_suffix: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        Self {
            turn_prefix: "<|im_start|>{role}\n".to_string(),
            turn_suffix: "<|im_end|>\n".to_string(),
        }
    }
}

impl ChatTemplate {
    pub fn scaffold(&self, role: Role, content: &str) -> String {
        let mut out = self.turn_prefix.replace("{role}", role.as_str());
        out.push_str(content);
        out.push_str(&self.turn_suffix);
        out
    }
}

/// Drops system turns and concatenates the remaining turns in order, each
/// wrapped in the template's role scaffolding.
pub fn linearize(record: &RawRecord, template: &ChatTemplate) -> Result<String> {
    if !record.is_trainable() {
        return Err(Error::EmptyDialogue);
    }
    Ok(record
        .messages
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| template.scaffold(m.role, &m.content))
        .collect())
}

pub const BEGIN_OF_THOUGHT: &str = "<begin_of_thought>";
pub const END_OF_THOUGHT: &str = "<end_of_thought>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

/// Rewrites the legacy reasoning annotations to `<think>` / `</think>`.
pub fn normalize_tags(text: &str) -> String {
    text.replace(BEGIN_OF_THOUGHT, THINK_OPEN)
        .replace(END_OF_THOUGHT, THINK_CLOSE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(role: Role, content: &str) -> Message {
        Message {
            role,
            content: content.to_string(),
        }
    }

    #[test]
    fn system_turns_are_dropped() {
        let t = ChatTemplate::default();
        let with_system = RawRecord::new(vec![
            msg(Role::System, "x"),
            msg(Role::User, "Q"),
            msg(Role::Assistant, "R"),
        ]);
        let without = RawRecord::new(vec![msg(Role::User, "Q"), msg(Role::Assistant, "R")]);
        let a = linearize(&with_system, &t).unwrap();
        let b = linearize(&without, &t).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, t.scaffold(Role::User, "Q") + &t.scaffold(Role::Assistant, "R"));
        assert!(!a.contains('x'));
    }

    #[test]
    fn system_only_is_empty_dialogue() {
        let r = RawRecord::new(vec![msg(Role::System, "x")]);
        assert!(matches!(
            linearize(&r, &ChatTemplate::default()),
            Err(Error::EmptyDialogue)
        ));
        let r = RawRecord::new(vec![msg(Role::User, "only a question")]);
        assert!(matches!(
            linearize(&r, &ChatTemplate::default()),
            Err(Error::EmptyDialogue)
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_tags("<begin_of_thought>x<end_of_thought>"),
            "<think>x</think>"
        );
        assert_eq!(normalize_tags("<think>x</think>"), "<think>x</think>");
        assert_eq!(normalize_tags("no tags here"), "no tags here");
    }

    #[test]
    fn parse_rejects_unknown_role() {
        let line = r#"{"messages":[{"role":"tool","content":"x"}]}"#;
        assert!(RawRecord::from_json_line(line).is_err());
        let line = r#"{"messages":[{"role":"user","content":"Q"},{"role":"assistant","content":"A"}]}"#;
        let r = RawRecord::from_json_line(line).unwrap();
        assert!(r.is_trainable());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "(<begin_of_thought>|<end_of_thought>|<think>|</think>|[a-z <>/_]){0,40}") {
            let once = normalize_tags(&s);
            prop_assert_eq!(normalize_tags(&once), once);
        }
    }
}
