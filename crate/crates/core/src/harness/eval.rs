use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::world::SyntheticWorld;
use crate::control::{extract_answer, run_control, ControlConfig, Judge, MockJudge, Plan, ScriptedPolicy, Trajectory};
use crate::embedding::{Embedder, MockEmbedder};
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, MemoryGraph, NodeId, NodeKind};
use crate::identity::{
    annotate_equivalence, build_meta_dictionary, extract_meta_clips, Annotation, MetaDictionary, ShortClip,
};
use crate::memorize::{ClipInput, Clock, FixtureGenerator, IngestConfig, IngestReport, MemoryStore};

/// Where evaluation runs: in this process or against a running service.
pub trait EvalBackend {
    fn ingest(&self, clip: &ClipInput) -> Result<IngestReport>;
    /// Reinforces each (face, voice) pair once as an equivalence edge.
    fn reinforce(&self, pairs: &[(NodeId, NodeId)]) -> Result<()>;
    fn ask(&self, question: &str, plan: &Plan, max_rounds: usize) -> Result<Trajectory>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub ingest: IngestConfig,
    pub control: ControlConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ingest: IngestConfig { clock: Clock::Fixed(0), ..IngestConfig::default() },
            control: ControlConfig::default(),
        }
    }
}

/// Runs everything against a [`MemoryStore`] owned by the backend.
pub struct InProcessBackend {
    pub store: MemoryStore,
    pub embedder: Box<dyn Embedder>,
    pub config: EvalConfig,
}

impl InProcessBackend {
    pub fn new(graph: MemoryGraph, config: EvalConfig) -> Self {
        InProcessBackend { store: MemoryStore::new(graph), embedder: Box::new(MockEmbedder::default()), config }
    }
}

/// Reinforces equivalence edges for the given pairs, all or nothing.
pub fn reinforce_pairs(graph: &mut MemoryGraph, pairs: &[(NodeId, NodeId)]) -> Result<()> {
    let mut staged = graph.clone();
    for &(f, v) in pairs {
        staged.reinforce_edge(f, v, EdgeKind::Equivalence)?;
    }
    *graph = staged;
    Ok(())
}

impl EvalBackend for InProcessBackend {
    fn ingest(&self, clip: &ClipInput) -> Result<IngestReport> {
        self.store.ingest(clip, &FixtureGenerator, self.embedder.as_ref(), &self.config.ingest)
    }

    fn reinforce(&self, pairs: &[(NodeId, NodeId)]) -> Result<()> {
        self.store.write(|g| reinforce_pairs(g, pairs))
    }

    fn ask(&self, question: &str, plan: &Plan, max_rounds: usize) -> Result<Trajectory> {
        let graph = self.store.snapshot();
        let config = ControlConfig { max_rounds, ..self.config.control.clone() };
        let policy = ScriptedPolicy::new(plan.clone()).with_last_round_marker(config.prompts.last_round.clone());
        run_control(question, &graph, self.embedder.as_ref(), &policy, &config).map_err(|e| e.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: String,
    pub reference: String,
    pub answer: Option<String>,
    pub correct: bool,
    pub rounds_used: usize,
    pub evidence_top1: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub qa_accuracy: f64,
    /// Share of meta-dictionary entries pairing one identity's voice with the
    /// same identity's face. This is the mapping accuracy.
    pub identity_precision: f64,
    /// Share of identities whose voice is correctly mapped to their face.
    pub identity_recall: f64,
    pub identity_f1: f64,
    /// Share of questions where some search ranked the evidence clip first.
    pub retrieval_top1_rate: f64,
    pub mean_rounds: f64,
    pub dictionary_size: usize,
    pub rejected_clips: usize,
    pub failed_clips: usize,
    pub questions: Vec<QuestionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Labels every entity node with the identity most often matched to it.
/// Ties go to the lowest identity index.
pub fn label_nodes(world: &SyntheticWorld, reports: &[IngestReport]) -> BTreeMap<NodeId, usize> {
    let mut votes: BTreeMap<NodeId, BTreeMap<usize, usize>> = BTreeMap::new();
    for r in reports.iter().filter(|r| !r.is_rejected()) {
        let Some(truth) = world.clip_truth.get(r.clip_index as usize) else { continue };
        for (tag, id) in &r.matched {
            if let Some(&who) = truth.get(tag) {
                *votes.entry(*id).or_default().entry(who).or_default() += 1;
            }
        }
    }
    votes
        .into_iter()
        .map(|(id, v)| {
            let best = v.iter().fold((0usize, 0usize), |acc, (&who, &n)| if n > acc.1 { (who, n) } else { acc });
            (id, best.0)
        })
        .collect()
}

/// Scores a dictionary against node labels for `identities` identities.
pub fn score_dictionary(dict: &MetaDictionary, labels: &BTreeMap<NodeId, usize>, identities: usize) -> IdentityScores {
    let mut correct = 0usize;
    let mut covered = BTreeSet::new();
    for (v, f) in &dict.mapping {
        match (labels.get(v), labels.get(f)) {
            (Some(a), Some(b)) if a == b => {
                correct += 1;
                covered.insert(*a);
            }
            _ => {}
        }
    }
    let precision = if dict.is_empty() { 0.0 } else { correct as f64 / dict.len() as f64 };
    let recall = if identities == 0 { 0.0 } else { covered.len() as f64 / identities as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    IdentityScores { precision, recall, f1 }
}

/// Meta-dictionary from every short clip in the ingestion reports.
pub fn dictionary_from_reports(reports: &[IngestReport], vote_ratio: f64) -> Result<MetaDictionary> {
    let shorts: Vec<ShortClip> = reports
        .iter()
        .flat_map(|r| r.short_clips.iter().cloned())
        .enumerate()
        .map(|(i, mut s)| {
            s.index = i as u64;
            s
        })
        .collect();
    build_meta_dictionary(&extract_meta_clips(&shorts), vote_ratio)
}

/// Clip-level annotation: the faces and voices matched anywhere in each clip.
/// Returns the equivalence pairs and the number of rejected clips.
pub fn annotate_reports(reports: &[IngestReport], dict: &MetaDictionary) -> (Vec<(NodeId, NodeId)>, usize) {
    let mut pairs = Vec::new();
    let mut rejected = 0;
    for r in reports.iter().filter(|r| !r.is_rejected()) {
        let faces: BTreeSet<NodeId> = r.matched.values().copied().filter(|id| id.kind == NodeKind::Face).collect();
        let voices: BTreeSet<NodeId> = r.matched.values().copied().filter(|id| id.kind == NodeKind::Voice).collect();
        match annotate_equivalence(&faces, &voices, dict) {
            Annotation::Rejected { .. } => rejected += 1,
            Annotation::Accepted { .. } => {
                for v in &voices {
                    if let Some(f) = dict.get(*v).filter(|f| faces.contains(f)) {
                        pairs.push((f, *v));
                    }
                }
            }
        }
    }
    (pairs, rejected)
}

/// Ingests the world, builds and applies the meta-dictionary, asks every
/// question with its scripted plan and scores answers with the mock judge.
pub fn run_eval(world: &SyntheticWorld, backend: &dyn EvalBackend, config: &EvalConfig) -> Result<EvalReport> {
    let reports: Vec<IngestReport> = world
        .clips
        .iter()
        .map(|c| backend.ingest(c).unwrap_or_else(|e| IngestReport::failed(c.clip_index, e.to_string())))
        .collect();
    let dict = dictionary_from_reports(&reports, config.ingest.identity.vote_ratio)?;
    let labels = label_nodes(world, &reports);
    let scores = score_dictionary(&dict, &labels, world.identities.len());
    let (pairs, rejected_clips) = annotate_reports(&reports, &dict);
    backend.reinforce(&pairs)?;

    let judge = MockJudge;
    let mut questions = Vec::with_capacity(world.qa.len());
    for qa in &world.qa {
        let record = match backend.ask(&qa.question, &qa.plan, config.control.max_rounds) {
            Ok(t) => {
                let answer = extract_answer(&t).map(str::to_string);
                let correct = match &answer {
                    Some(a) => judge.judge(&qa.question, &qa.answer, a)?,
                    None => false,
                };
                let evidence_top1 =
                    qa.evidence_clip.is_some_and(|c| t.searches.iter().any(|s| s.clips.first() == Some(&c)));
                QuestionRecord {
                    question: qa.question.clone(),
                    reference: qa.answer.clone(),
                    answer,
                    correct,
                    rounds_used: t.rounds_used,
                    evidence_top1,
                    error: None,
                }
            }
            Err(e) => QuestionRecord {
                question: qa.question.clone(),
                reference: qa.answer.clone(),
                answer: None,
                correct: false,
                rounds_used: 0,
                evidence_top1: false,
                error: Some(e.to_string()),
            },
        };
        questions.push(record);
    }

    let n = questions.len().max(1) as f64;
    let rate = |f: &dyn Fn(&QuestionRecord) -> bool| questions.iter().filter(|q| f(q)).count() as f64 / n;
    Ok(EvalReport {
        qa_accuracy: rate(&|q| q.correct),
        identity_precision: scores.precision,
        identity_recall: scores.recall,
        identity_f1: scores.f1,
        retrieval_top1_rate: rate(&|q| q.evidence_top1),
        mean_rounds: questions.iter().map(|q| q.rounds_used as f64).sum::<f64>() / n,
        dictionary_size: dict.len(),
        rejected_clips,
        failed_clips: reports.iter().filter(|r| r.is_rejected()).count(),
        questions,
    })
}

/// Evaluates in-process on a fresh graph sized for the world.
pub fn run_eval_in_process(world: &SyntheticWorld, config: &EvalConfig) -> Result<EvalReport> {
    let graph = MemoryGraph::new(world.config.graph_config())?;
    let backend = InProcessBackend::new(graph, config.clone());
    run_eval(world, &backend, config)
}

impl From<crate::control::SessionError> for Error {
    fn from(e: crate::control::SessionError) -> Self {
        e.error
    }
}
