use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Message, Prompts, Role};
use crate::error::{Error, Result};

/// Produces the next assistant reply for a conversation.
pub trait Policy: Send + Sync {
    fn respond(&self, messages: &[Message]) -> Result<String>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn respond(&self, messages: &[Message]) -> Result<String> {
        (**self).respond(messages)
    }
}

/// Binds `{character}` to the first `<character_k>` seen in a retrieved entry
/// that also mentions `name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerRule {
    /// Regex with one capture group, matched against retrieved entries from
    /// newest to oldest. `{character}` is replaced by the bound character.
    Pattern(String),
    /// First entry of the top clip of the latest non-empty search.
    TopEntry,
}

/// A fixed search sequence followed by an answer drawn from what was retrieved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub searches: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<Binding>,
    pub answer: AnswerRule,
}

impl Plan {
    /// Searches the question verbatim and answers with the top entry.
    pub fn generic(question: &str) -> Self {
        Plan { searches: vec![question.to_string()], binding: None, answer: AnswerRule::TopEntry }
    }
}

/// Deterministic policy that follows a [`Plan`]. It reads all state from the
/// conversation, so one instance can serve any number of sessions.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    plan: Plan,
    last_round_marker: String,
    fallback_answer: String,
}

impl ScriptedPolicy {
    pub fn new(plan: Plan) -> Self {
        ScriptedPolicy { plan, last_round_marker: Prompts::default().last_round, fallback_answer: "unknown".into() }
    }

    /// Text whose presence in the latest user turn forces an answer.
    pub fn with_last_round_marker(mut self, marker: impl Into<String>) -> Self {
        self.last_round_marker = marker.into();
        self
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    fn bound_character(&self, entries: &[String]) -> Option<String> {
        let name = &self.plan.binding.as_ref()?.name;
        let name_re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(name))).ok()?;
        entries
            .iter()
            .filter(|e| name_re.is_match(e))
            .find_map(|e| character_token().find(e).map(|m| m.as_str().to_string()))
    }

    fn answer(&self, messages: &[Message], entries: &[String], character: Option<&str>) -> Option<String> {
        match &self.plan.answer {
            AnswerRule::TopEntry => messages
                .iter()
                .rev()
                .filter(|m| m.role == Role::User)
                .find_map(|m| parse_results(&m.content).into_iter().next())
                .and_then(|(_, entries)| entries.into_iter().next()),
            AnswerRule::Pattern(p) => {
                let pattern = if p.contains("{character}") {
                    p.replace("{character}", &regex::escape(character?))
                } else {
                    p.clone()
                };
                let re = Regex::new(&pattern).ok()?;
                entries
                    .iter()
                    .rev()
                    .find_map(|e| re.captures(e).and_then(|c| c.get(1)).map(|m| m.as_str().trim().to_string()))
                    .filter(|a| !a.is_empty())
            }
        }
    }
}

impl Policy for ScriptedPolicy {
    fn respond(&self, messages: &[Message]) -> Result<String> {
        if messages.is_empty() {
            return Err(Error::Policy("empty conversation".into()));
        }
        let round = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let forced =
            messages.last().is_some_and(|m| m.role == Role::User && m.content.contains(&self.last_round_marker));
        let entries = retrieved_entries(messages);
        let character = self.bound_character(&entries);
        if round < self.plan.searches.len() && !forced {
            let fill =
                character.clone().or_else(|| self.plan.binding.as_ref().map(|b| b.name.clone())).unwrap_or_default();
            let query = self.plan.searches[round].replace("{character}", &fill);
            return Ok(format!("Action: [Search]\nContent: {query}"));
        }
        let answer =
            self.answer(messages, &entries, character.as_deref()).unwrap_or_else(|| self.fallback_answer.clone());
        Ok(format!("Action: [Answer]\nContent: {answer}"))
    }
}

fn character_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<character_\d+>").unwrap())
}

fn result_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^"CLIP_(\d+)": (\[.*\])$"#).unwrap())
}

/// Parses `"CLIP_n": [...]` lines back into (clip index, entries).
pub fn parse_results(text: &str) -> Vec<(u64, Vec<String>)> {
    text.lines()
        .filter_map(|line| {
            let caps = result_line().captures(line.trim_end())?;
            let index = caps[1].parse().ok()?;
            let entries: Vec<String> = serde_json::from_str(&caps[2]).ok()?;
            Some((index, entries))
        })
        .collect()
}

/// Every retrieved entry in the user turns, oldest first.
pub fn retrieved_entries(messages: &[Message]) -> Vec<String> {
    messages
        .iter()
        .filter(|m| m.role == Role::User)
        .flat_map(|m| parse_results(&m.content))
        .flat_map(|(_, e)| e)
        .collect()
}
