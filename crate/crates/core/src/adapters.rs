//! Blocking HTTP JSON adapters for an external policy, judge, embedder and
//! memory generator.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{parse_judge_reply, Judge, Message, Policy, Prompts};
use crate::embedding::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::EntityKind;
use crate::memorize::{ClipContext, MemoryEntry, MemoryGenerator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    60
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig { url: url.into(), api_key: None, model: None, timeout_s: default_timeout_s() }
    }
}

/// POSTs JSON and returns the decoded JSON reply.
#[derive(Debug, Clone)]
pub struct JsonClient {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { config, agent }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn post(&self, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Error::Transport(format!("{}: {e}", self.config.url)))?;
        let status = resp.status();
        let text =
            resp.body_mut().read_to_string().map_err(|e| Error::Transport(format!("{}: {e}", self.config.url)))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::Transport(format!("{} returned {status}: {snippet}", self.config.url)));
        }
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: bad JSON reply: {e}", self.config.url)))
    }
}

/// Chat-completion client. Request: `{"messages": [...], "model"?}`.
/// Reply: `{"content": "..."}` or `{"choices": [{"message": {"content": "..."}}]}`.
#[derive(Debug, Clone)]
pub struct ChatClient {
    client: JsonClient,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Self {
        ChatClient { client: JsonClient::new(config) }
    }

    pub fn complete(&self, messages: &[Message]) -> Result<String> {
        let mut body = json!({ "messages": messages });
        if let Some(model) = &self.client.config().model {
            body["model"] = json!(model);
        }
        let reply = self.client.post(&body)?;
        reply
            .get("content")
            .or_else(|| reply.pointer("/choices/0/message/content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Policy("reply has no content field".into()))
    }
}

#[derive(Debug, Clone)]
pub struct HttpPolicy {
    chat: ChatClient,
}

impl HttpPolicy {
    pub fn new(config: EndpointConfig) -> Self {
        HttpPolicy { chat: ChatClient::new(config) }
    }
}

impl Policy for HttpPolicy {
    fn respond(&self, messages: &[Message]) -> Result<String> {
        self.chat.complete(messages)
    }
}

/// Sends the judge prompt as a single user message and expects Yes or No.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    chat: ChatClient,
    prompts: Prompts,
}

impl HttpJudge {
    pub fn new(config: EndpointConfig, prompts: Prompts) -> Self {
        HttpJudge { chat: ChatClient::new(config), prompts }
    }
}

impl Judge for HttpJudge {
    fn judge(&self, question: &str, reference: &str, candidate: &str) -> Result<bool> {
        let prompt = self.prompts.format_judge(question, reference, candidate);
        let reply = self.chat.complete(&[Message::user(prompt)])?;
        parse_judge_reply(&reply)
    }
}

/// Request `{"input": text}`, reply `{"embedding": [f32...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(config: EndpointConfig, dim: usize) -> Self {
        HttpEmbedder { client: JsonClient::new(config), dim }
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let reply = self.client.post(&json!({ "input": text }))?;
        let v: Vec<f32> = reply
            .get("embedding")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Format("reply has no embedding field".into()))?;
        if v.len() != self.dim {
            return Err(Error::Format(format!("embedding has dimension {}, expected {}", v.len(), self.dim)));
        }
        Embedding::new(v)
    }
}

/// Request: `{"clip_index", "characters": [{"tag","id","modality","transcripts"}]}`.
/// Reply: `{"entries": [{"kind": "episodic"|"semantic", "text"}]}`.
#[derive(Debug, Clone)]
pub struct HttpMemoryGenerator {
    client: JsonClient,
}

impl HttpMemoryGenerator {
    pub fn new(config: EndpointConfig) -> Self {
        HttpMemoryGenerator { client: JsonClient::new(config) }
    }
}

#[derive(Deserialize)]
struct GeneratorReply {
    entries: Vec<MemoryEntry>,
}

impl MemoryGenerator for HttpMemoryGenerator {
    fn generate(&self, ctx: &ClipContext<'_>) -> Result<Vec<MemoryEntry>> {
        let characters: Vec<Value> = ctx
            .observations
            .iter()
            .filter_map(|o| {
                let id = ctx.ids.get(&o.tag)?;
                let transcripts: Vec<&str> = o.segments.iter().map(|s| s.transcript.as_str()).collect();
                Some(json!({
                    "tag": o.tag,
                    "id": id.to_string(),
                    "modality": match o.modality { EntityKind::Face => "face", EntityKind::Voice => "voice" },
                    "transcripts": transcripts,
                }))
            })
            .collect();
        let reply = self.client.post(&json!({ "clip_index": ctx.clip_index, "characters": characters }))?;
        let parsed: GeneratorReply = serde_json::from_value(reply)?;
        Ok(parsed.entries)
    }
}
