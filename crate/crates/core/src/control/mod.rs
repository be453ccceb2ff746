//! The search/answer control loop.
//!
//! A policy sees the conversation so far and replies with either
//! `[Search] query` or `[Answer] text`. Searches run against the memory graph
//! and their results are fed back as the next user turn, for at most
//! `max_rounds` policy turns.

mod judge;
mod policy;
mod prompts;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::graph::MemoryGraph;
use crate::retrieval::{format_results, search_clip, search_text_nodes_as_clips, ClipSearchResult, RetrievalConfig};

pub use judge::{judge_answer, normalize, parse_judge_reply, Judge, MockJudge};
pub use policy::{parse_results, retrieved_entries, AnswerRule, Binding, Plan, Policy, ScriptedPolicy};
pub use prompts::Prompts;

/// Search content with this prefix runs a text-node search instead of a clip search.
pub const NODE_QUERY_PREFIX: &str = "node:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    RoundLimit,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub query: String,
    /// Returned clip indices in rank order.
    pub clips: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub messages: Vec<Message>,
    pub final_answer: Option<String>,
    pub rounds_used: usize,
    pub terminated_by: Termination,
    pub searches: Vec<SearchRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Search(String),
    Answer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no [Search] or [Answer] token")]
    NoActionToken,
    #[error("action has empty content")]
    EmptyContent,
}

fn think_block() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<think>.*?</think>").unwrap())
}

fn action_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\[(search|answer)\]").unwrap())
}

fn content_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*content\s*:").unwrap())
}

fn content_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\s*content\s*:").unwrap())
}

/// Drops reasoning spans: closed `<think>` blocks, anything before a stray
/// `</think>`, and anything after an unclosed `<think>`.
fn strip_reasoning(text: &str) -> String {
    let mut s = think_block().replace_all(text, " ").into_owned();
    let lower = s.to_ascii_lowercase();
    if let Some(p) = lower.rfind("</think>") {
        s = s[p + "</think>".len()..].to_string();
    }
    let lower = s.to_ascii_lowercase();
    if let Some(p) = lower.find("<think>") {
        s.truncate(p);
    }
    s
}

/// Parses a policy reply. The last action token outside reasoning spans wins.
/// Accepts `Action: [Search]\nContent: q` and inline `[Answer] text`.
pub fn parse_action(text: &str) -> std::result::Result<Action, ParseFailure> {
    let visible = strip_reasoning(text);
    let m = action_token().find_iter(&visible).last().ok_or(ParseFailure::NoActionToken)?;
    let after = &visible[m.end()..];
    let mut content = content_label().replace(after, "").trim().to_string();
    if content.is_empty() {
        // `Content:` written before the action line.
        if let Some(c) = content_line().find_iter(&visible[..m.start()]).last() {
            let line = &visible[c.end()..m.start()];
            let line = line.lines().next().unwrap_or_default();
            content = line.trim().to_string();
        }
    }
    if content.is_empty() {
        return Err(ParseFailure::EmptyContent);
    }
    if m.as_str().eq_ignore_ascii_case("[search]") {
        Ok(Action::Search(content))
    } else {
        Ok(Action::Answer(content))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Maximum policy turns (H).
    pub max_rounds: usize,
    pub retrieval: RetrievalConfig,
    pub prompts: Prompts,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { max_rounds: 5, retrieval: RetrievalConfig::default(), prompts: Prompts::default() }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        self.prompts.validate()
    }
}

/// A failed session, with the trajectory up to the failure.
#[derive(Debug, Error)]
#[error("control session failed after {} round(s): {error}", partial.rounds_used)]
pub struct SessionError {
    pub error: Error,
    pub partial: Trajectory,
}

/// Runs one search-by-query against the graph, routing `node:` queries to text-node search.
pub fn run_search(
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
    query: &str,
    config: &RetrievalConfig,
) -> Result<ClipSearchResult> {
    match query.strip_prefix(NODE_QUERY_PREFIX) {
        Some(rest) => search_text_nodes_as_clips(graph, embedder, rest.trim(), config.node_k, config.text_threshold),
        None => search_clip(graph, embedder, query, config.clip_k, config.clip_threshold),
    }
}

fn join(memory: &str, prompt: &str) -> String {
    format!("{memory}\n\n{prompt}")
}

/// Runs the control loop for one question.
///
/// Round structure: the policy replies; an answer or unparsable reply ends the
/// session; a search appends its results plus the instruction prompt. Entering
/// the final round also appends the results plus the last-round prompt. If the
/// policy still searches in the final round, that search's results are followed
/// by the last-round prompt alone and the session ends at the round limit.
#[allow(clippy::result_large_err)]
pub fn run_control(
    question: &str,
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
    policy: &dyn Policy,
    config: &ControlConfig,
) -> std::result::Result<Trajectory, SessionError> {
    let prompts = &config.prompts;
    let mut t = Trajectory {
        messages: vec![Message::system(prompts.format_system(question)), Message::user(prompts.instruction.clone())],
        final_answer: None,
        rounds_used: 0,
        terminated_by: Termination::RoundLimit,
        searches: Vec::new(),
    };
    if let Err(error) = config.validate() {
        return Err(SessionError { error, partial: t });
    }
    let h = config.max_rounds;
    let mut i = 0;
    while i < h {
        let reply = match policy.respond(&t.messages) {
            Ok(r) if r.trim().is_empty() => {
                return Err(SessionError { error: Error::Policy("empty response".into()), partial: t })
            }
            Ok(r) => r,
            Err(error) => return Err(SessionError { error, partial: t }),
        };
        t.messages.push(Message::assistant(reply.clone()));
        t.rounds_used = i + 1;
        match parse_action(&reply) {
            Err(e) => {
                log::debug!("round {}: {e}", i + 1);
                t.terminated_by = Termination::ParseFailure;
                return Ok(t);
            }
            Ok(Action::Answer(a)) => {
                t.final_answer = Some(a);
                t.terminated_by = Termination::Answer;
                return Ok(t);
            }
            Ok(Action::Search(q)) => {
                let result = match run_search(graph, embedder, &q, &config.retrieval) {
                    Ok(r) => r,
                    Err(error) => return Err(SessionError { error, partial: t }),
                };
                let memory = format_results(&result);
                t.searches.push(SearchRecord { query: q, clips: result.clips.iter().map(|c| c.clip_index).collect() });
                i += 1;
                if i == h {
                    t.messages.push(Message::user(join(&memory, &prompts.last_round)));
                } else {
                    t.messages.push(Message::user(join(&memory, &prompts.instruction)));
                    if i == h - 1 {
                        t.messages.push(Message::user(join(&memory, &prompts.last_round)));
                    }
                }
            }
        }
    }
    t.terminated_by = Termination::RoundLimit;
    Ok(t)
}

/// The final answer, if the session ended with one.
pub fn extract_answer(t: &Trajectory) -> Option<&str> {
    t.final_answer.as_deref()
}
