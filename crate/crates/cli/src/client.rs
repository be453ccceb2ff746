//! Evaluation backend that drives a running `mnemo serve` instance.

use std::time::Duration;

use mnemo_core::control::{Plan, Trajectory};
use mnemo_core::graph::NodeId;
use mnemo_core::harness::EvalBackend;
use mnemo_core::memorize::{ClipInput, IngestReport};
use mnemo_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::server::{error_from_parts, AskRequest, AskResponse, EquivalenceRequest, ErrorBody};

pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { base: base.into().trim_end_matches('/').to_string(), agent }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: &B) -> Result<T> {
        let url = format!("{}{route}", self.base);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(b) => error_from_parts(&b.kind, b.message),
                Err(_) => Error::Transport(format!("{url} returned {status}")),
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{url}: bad JSON reply: {e}")))
    }
}

impl EvalBackend for HttpBackend {
    fn ingest(&self, clip: &ClipInput) -> Result<IngestReport> {
        self.post("/clips", clip)
    }

    fn reinforce(&self, pairs: &[(NodeId, NodeId)]) -> Result<()> {
        let _: serde_json::Value = self.post("/equivalences", &EquivalenceRequest { pairs: pairs.to_vec() })?;
        Ok(())
    }

    fn ask(&self, question: &str, plan: &Plan, max_rounds: usize) -> Result<Trajectory> {
        let req = AskRequest { question: question.to_string(), max_rounds: Some(max_rounds), plan: Some(plan.clone()) };
        let resp: AskResponse = self.post("/ask", &req)?;
        Ok(resp.trajectory)
    }
}
