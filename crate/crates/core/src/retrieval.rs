//! Node- and clip-level memory search, plus character-ID rewriting.

use std::cmp::Ordering;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::embedding::{average_similarity, cosine, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::{CharacterId, CharacterMap, MemoryGraph, NodeId, NodeKind};

/// Literal block injected into the agent context when nothing qualifies.
pub const EMPTY_MARKER: &str = "[EMPTY]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub clip_k: usize,
    pub clip_threshold: f64,
    pub node_k: usize,
    pub text_threshold: f64,
    pub face_threshold: f64,
    pub voice_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            clip_k: 2,
            clip_threshold: 0.5,
            node_k: 2,
            text_threshold: 0.5,
            face_threshold: 0.3,
            voice_threshold: 0.6,
        }
    }
}

impl RetrievalConfig {
    pub fn node_threshold(&self, kind: NodeKind) -> f64 {
        match kind {
            NodeKind::Text => self.text_threshold,
            NodeKind::Face => self.face_threshold,
            NodeKind::Voice => self.voice_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryPayload {
    Text(String),
    Vector(Embedding),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchQuery {
    pub modality: NodeKind,
    pub payload: QueryPayload,
    pub k: usize,
    pub threshold: f64,
}

impl SearchQuery {
    pub fn text(text: impl Into<String>, k: usize, threshold: f64) -> Self {
        SearchQuery { modality: NodeKind::Text, payload: QueryPayload::Text(text.into()), k, threshold }
    }

    pub fn entity(modality: NodeKind, vector: Embedding, k: usize, threshold: f64) -> Self {
        SearchQuery { modality, payload: QueryPayload::Vector(vector), k, threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub score: f64,
}

fn by_score_then<K: Ord>(a: (f64, K), b: (f64, K)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Top-k same-modality nodes scoring at least `query.threshold`.
///
/// Text nodes are scored by cosine to the embedded query text; entity nodes by
/// average similarity to their snapshots.
pub fn search_node(graph: &MemoryGraph, query: &SearchQuery, embedder: &dyn Embedder) -> Result<Vec<ScoredNode>> {
    let probe = match (&query.payload, query.modality) {
        (QueryPayload::Text(t), NodeKind::Text) => embedder.embed(t)?,
        (QueryPayload::Vector(v), NodeKind::Face | NodeKind::Voice) => v.clone(),
        _ => return Err(Error::invalid("text queries carry text and entity queries carry a vector")),
    };
    let want = graph.config().dim_for(query.modality);
    if probe.dim() != want {
        return Err(Error::invalid(format!(
            "query has dimension {}, {:?} nodes use {want}",
            probe.dim(),
            query.modality
        )));
    }
    let mut scored = Vec::new();
    for node in graph.nodes_of(query.modality) {
        let score = match (node.text_embedding(), node.snapshots()) {
            (Some(e), _) => cosine(&probe, e)?,
            (None, Some(snaps)) => average_similarity(&probe, snaps)?,
            _ => continue,
        };
        if score >= query.threshold {
            scored.push(ScoredNode { id: node.id, score });
        }
    }
    scored.sort_by(|a, b| by_score_then((a.score, a.id.ordinal), (b.score, b.id.ordinal)));
    scored.truncate(query.k);
    Ok(scored)
}

/// Highest cosine among the clip's entries; `-inf` for a clip without entries.
pub fn score_clip(graph: &MemoryGraph, clip_index: u64, query: &Embedding) -> Result<f64> {
    let clip = graph.clip(clip_index).ok_or_else(|| Error::not_found(format!("CLIP_{clip_index}")))?;
    let mut best = f64::NEG_INFINITY;
    for id in clip.entries() {
        if let Some(e) = graph.node(id).and_then(|n| n.text_embedding()) {
            best = best.max(cosine(query, e)?);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipHit {
    pub clip_index: u64,
    pub score: f64,
    pub episodic: Vec<String>,
    pub semantic: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSearchResult {
    pub clips: Vec<ClipHit>,
    pub empty: bool,
}

impl ClipSearchResult {
    pub fn empty() -> Self {
        ClipSearchResult { clips: Vec::new(), empty: true }
    }

    pub fn top_clip(&self) -> Option<u64> {
        self.clips.first().map(|c| c.clip_index)
    }
}

/// Top-k clips whose best entry scores at least `threshold`, with every entry
/// of each returned clip rewritten to character IDs.
pub fn search_clip(
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
    threshold: f64,
) -> Result<ClipSearchResult> {
    let characters = graph.resolve_characters();
    let probe = embedder.embed(&expand_characters(query, &characters, graph))?;
    let mut scored = Vec::new();
    for clip in graph.clips() {
        let score = score_clip(graph, clip.clip_index, &probe)?;
        if score >= threshold {
            scored.push((score, clip.clip_index));
        }
    }
    scored.sort_by(|a, b| by_score_then(*a, *b));
    scored.truncate(k);
    if scored.is_empty() {
        return Ok(ClipSearchResult::empty());
    }
    let clips = scored.into_iter().map(|(score, clip_index)| clip_hit(graph, clip_index, score, &characters)).collect();
    Ok(ClipSearchResult { clips, empty: false })
}

pub(crate) fn clip_hit(graph: &MemoryGraph, clip_index: u64, score: f64, characters: &CharacterMap) -> ClipHit {
    let clip = graph.clip(clip_index).expect("clip exists");
    let render = |ids: &[NodeId]| {
        ids.iter()
            .filter_map(|id| graph.node(*id).and_then(|n| n.text()))
            .map(|t| rewrite_entities(t, characters))
            .collect()
    };
    ClipHit { clip_index, score, episodic: render(&clip.episodic), semantic: render(&clip.semantic) }
}

/// Text-node search grouped back into clip sections, for `node:` queries in
/// the control loop. Hits keep their individual rank order; each clip section
/// lists only the matching entries.
pub fn search_text_nodes_as_clips(
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
    threshold: f64,
) -> Result<ClipSearchResult> {
    let characters = graph.resolve_characters();
    let expanded = expand_characters(query, &characters, graph);
    let hits = search_node(graph, &SearchQuery::text(expanded, k, threshold), embedder)?;
    let mut clips: Vec<ClipHit> = Vec::new();
    for hit in hits {
        let Some(clip_index) = graph
            .node(hit.id)
            .and_then(|n| n.extra.get(crate::graph::EXTRA_CLIP_INDEX))
            .and_then(|c| c.parse::<u64>().ok())
        else {
            continue;
        };
        let Some(record) = graph.clip(clip_index) else { continue };
        let text = rewrite_entities(graph.node(hit.id).and_then(|n| n.text()).unwrap_or_default(), &characters);
        let pos = match clips.iter().position(|c| c.clip_index == clip_index) {
            Some(p) => p,
            None => {
                clips.push(ClipHit { clip_index, score: hit.score, episodic: Vec::new(), semantic: Vec::new() });
                clips.len() - 1
            }
        };
        if record.semantic.contains(&hit.id) {
            clips[pos].semantic.push(text);
        } else {
            clips[pos].episodic.push(text);
        }
    }
    let empty = clips.is_empty();
    Ok(ClipSearchResult { clips, empty })
}

fn entity_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(face|voice)_(\d+)>").unwrap())
}

fn character_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<character_(\d+)>").unwrap())
}

/// Replaces every mapped `<face_i>` / `<voice_j>` token with its `<character_k>`.
pub fn rewrite_entities(text: &str, characters: &CharacterMap) -> String {
    entity_regex()
        .replace_all(text, |caps: &Captures| {
            let whole = &caps[0];
            whole
                .parse::<NodeId>()
                .ok()
                .and_then(|id| characters.get(id))
                .map(|c| c.to_string())
                .unwrap_or_else(|| whole.to_string())
        })
        .into_owned()
}

/// Replaces `<character_k>` tokens in a query with the entity tokens of the
/// character's members, so a query phrased with character IDs scores against
/// entries stored with face and voice IDs.
pub fn expand_characters(query: &str, characters: &CharacterMap, graph: &MemoryGraph) -> String {
    character_regex()
        .replace_all(query, |caps: &Captures| {
            let members = caps[1].parse::<u64>().map(|k| characters.members(CharacterId(k))).unwrap_or_default();
            let members: Vec<String> =
                members.into_iter().filter(|id| graph.contains(*id)).map(|id| id.to_string()).collect();
            if members.is_empty() {
                caps[0].to_string()
            } else {
                members.join(" ")
            }
        })
        .into_owned()
}

/// Renders results as `"CLIP_n": [entry, ...]` lines in rank order, or `[EMPTY]`.
pub fn format_results(result: &ClipSearchResult) -> String {
    if result.clips.is_empty() {
        return EMPTY_MARKER.to_string();
    }
    result
        .clips
        .iter()
        .map(|hit| {
            let entries: Vec<String> = hit
                .episodic
                .iter()
                .chain(&hit.semantic)
                .map(|e| serde_json::to_string(e).expect("strings serialize"))
                .collect();
            format!("\"CLIP_{}\": [{}]", hit.clip_index, entries.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}
