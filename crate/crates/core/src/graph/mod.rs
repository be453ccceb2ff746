//! The multimodal memory graph.
//!
//! Text nodes hold episodic or semantic entries for one clip; face and voice
//! nodes are identity anchors holding a bounded FIFO of feature snapshots.
//! Edges are undirected, keyed by the unordered endpoint pair plus kind, and
//! carry an integer reinforcement count.

mod characters;
pub mod dump;
mod id;
mod snapshot;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub use characters::CharacterMap;
pub use id::{CharacterId, EntityKind, Modality, NodeId, NodeKind};
pub use snapshot::{load, load_from_path, save_to_path, snapshot, SnapshotError, SNAPSHOT_VERSION};

/// Metadata key holding the clip index of a text node.
pub const EXTRA_CLIP_INDEX: &str = "clip_index";
/// Metadata key holding the ingestion wall-clock time (ms since the Unix epoch).
pub const EXTRA_INGESTED_AT: &str = "ingested_at_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub text_dim: usize,
    pub face_dim: usize,
    pub voice_dim: usize,
    /// Maximum number of feature snapshots kept per entity node.
    pub snapshot_cap: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { text_dim: crate::embedding::DEFAULT_MOCK_DIM, face_dim: 64, voice_dim: 64, snapshot_cap: 10 }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text_dim == 0 || self.face_dim == 0 || self.voice_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if self.snapshot_cap == 0 {
            return Err(Error::Config("snapshot_cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dim_for(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Text => self.text_dim,
            NodeKind::Face => self.face_dim,
            NodeKind::Voice => self.voice_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Episodic,
    Semantic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodePayload {
    Text { text: String, embedding: Embedding },
    Entity { snapshots: VecDeque<Embedding> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryNode {
    pub id: NodeId,
    /// Confidence count, always >= 1.
    pub weight: u64,
    pub payload: NodePayload,
    pub extra: BTreeMap<String, String>,
}

impl MemoryNode {
    pub fn modality(&self) -> Modality {
        self.id.kind.modality()
    }

    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            NodePayload::Text { text, .. } => Some(text),
            NodePayload::Entity { .. } => None,
        }
    }

    pub fn text_embedding(&self) -> Option<&Embedding> {
        match &self.payload {
            NodePayload::Text { embedding, .. } => Some(embedding),
            NodePayload::Entity { .. } => None,
        }
    }

    pub fn snapshots(&self) -> Option<&VecDeque<Embedding>> {
        match &self.payload {
            NodePayload::Entity { snapshots } => Some(snapshots),
            NodePayload::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Equivalence,
    Generic,
}

/// Unordered endpoint pair plus kind; `a <= b` always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
}

impl EdgeKey {
    pub fn new(x: NodeId, y: NodeId, kind: EdgeKind) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        EdgeKey { a, b, kind }
    }

    pub fn other(&self, id: NodeId) -> Option<NodeId> {
        if self.a == id {
            Some(self.b)
        } else if self.b == id {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_index: u64,
    pub episodic: Vec<NodeId>,
    pub semantic: Vec<NodeId>,
}

impl ClipRecord {
    fn new(clip_index: u64) -> Self {
        ClipRecord { clip_index, episodic: Vec::new(), semantic: Vec::new() }
    }

    /// Episodic entries followed by semantic entries, in stored order.
    pub fn entries(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.episodic.iter().chain(&self.semantic).copied()
    }

    pub fn render_name(&self) -> String {
        format!("CLIP_{}", self.clip_index)
    }
}

/// Requested modification of an existing node.
#[derive(Debug, Clone, Default)]
pub struct NodeUpdate {
    /// Replacement text; text nodes only.
    pub content: Option<String>,
    /// Replacement embedding to accompany new content; text nodes only.
    pub embedding: Option<Embedding>,
    pub weight_delta: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryGraph {
    config: GraphConfig,
    nodes: BTreeMap<NodeId, MemoryNode>,
    edges: BTreeMap<EdgeKey, u64>,
    clips: BTreeMap<u64, ClipRecord>,
    next_ordinal: [u64; 3],
}

impl Default for MemoryGraph {
    fn default() -> Self {
        MemoryGraph::new(GraphConfig::default()).expect("default config is valid")
    }
}

impl MemoryGraph {
    pub fn new(config: GraphConfig) -> Result<Self> {
        config.validate()?;
        Ok(MemoryGraph {
            config,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            clips: BTreeMap::new(),
            next_ordinal: [0; 3],
        })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn node(&self, id: NodeId) -> Option<&MemoryNode> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes of one kind, in ordinal order.
    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &MemoryNode> {
        let lo = NodeId { kind, ordinal: 0 };
        let hi = NodeId { kind, ordinal: u64::MAX };
        self.nodes.range(lo..=hi).map(|(_, n)| n)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, u64)> {
        self.edges.iter().map(|(k, w)| (k, *w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_weight(&self, a: NodeId, b: NodeId, kind: EdgeKind) -> Option<u64> {
        self.edges.get(&EdgeKey::new(a, b, kind)).copied()
    }

    pub fn clip(&self, clip_index: u64) -> Option<&ClipRecord> {
        self.clips.get(&clip_index)
    }

    pub fn clips(&self) -> impl Iterator<Item = &ClipRecord> {
        self.clips.values()
    }

    pub fn clip_count(&self) -> usize {
        self.clips.len()
    }

    /// Next ordinal that will be handed out for `kind`.
    pub fn next_ordinal(&self, kind: NodeKind) -> u64 {
        self.next_ordinal[kind.index()]
    }

    fn allocate(&mut self, kind: NodeKind) -> NodeId {
        let slot = &mut self.next_ordinal[kind.index()];
        let id = NodeId { kind, ordinal: *slot };
        *slot += 1;
        id
    }

    fn check_dim(&self, kind: NodeKind, embedding: &Embedding) -> Result<()> {
        let want = self.config.dim_for(kind);
        if embedding.dim() != want {
            return Err(Error::Config(format!(
                "{kind:?} embedding has dimension {}, graph expects {want}",
                embedding.dim()
            )));
        }
        Ok(())
    }

    /// Stores a text entry under `clip_index`, creating the clip record on first use.
    pub fn add_text_entry(
        &mut self,
        clip_index: u64,
        kind: EntryKind,
        text: impl Into<String>,
        embedding: Embedding,
    ) -> Result<NodeId> {
        self.add_text_entry_with_extra(clip_index, kind, text, embedding, BTreeMap::new())
    }

    pub fn add_text_entry_with_extra(
        &mut self,
        clip_index: u64,
        kind: EntryKind,
        text: impl Into<String>,
        embedding: Embedding,
        mut extra: BTreeMap<String, String>,
    ) -> Result<NodeId> {
        self.check_dim(NodeKind::Text, &embedding)?;
        let id = self.allocate(NodeKind::Text);
        extra.insert(EXTRA_CLIP_INDEX.to_string(), clip_index.to_string());
        self.nodes.insert(
            id,
            MemoryNode { id, weight: 1, payload: NodePayload::Text { text: text.into(), embedding }, extra },
        );
        let record = self.clips.entry(clip_index).or_insert_with(|| ClipRecord::new(clip_index));
        match kind {
            EntryKind::Episodic => record.episodic.push(id),
            EntryKind::Semantic => record.semantic.push(id),
        }
        Ok(id)
    }

    /// Registers an empty clip record, so a clip with no text entries is still known.
    pub fn ensure_clip(&mut self, clip_index: u64) {
        self.clips.entry(clip_index).or_insert_with(|| ClipRecord::new(clip_index));
    }

    pub fn add_entity_node(&mut self, kind: EntityKind, snapshots: Vec<Embedding>) -> Result<NodeId> {
        if snapshots.is_empty() {
            return Err(Error::invalid("entity node needs at least one snapshot"));
        }
        if snapshots.len() > self.config.snapshot_cap {
            return Err(Error::invalid(format!(
                "{} snapshots exceed snapshot_cap {}",
                snapshots.len(),
                self.config.snapshot_cap
            )));
        }
        let node_kind = NodeKind::from(kind);
        for s in &snapshots {
            self.check_dim(node_kind, s)?;
        }
        let id = self.allocate(node_kind);
        self.nodes.insert(
            id,
            MemoryNode {
                id,
                weight: 1,
                payload: NodePayload::Entity { snapshots: snapshots.into() },
                extra: BTreeMap::new(),
            },
        );
        Ok(id)
    }

    /// Appends a feature snapshot, evicting the oldest beyond `snapshot_cap`.
    pub fn append_snapshot(&mut self, id: NodeId, snapshot: Embedding) -> Result<()> {
        self.check_dim(id.kind, &snapshot)?;
        let cap = self.config.snapshot_cap;
        let node = self.nodes.get_mut(&id).ok_or_else(|| Error::not_found(format!("node {id}")))?;
        match &mut node.payload {
            NodePayload::Entity { snapshots } => {
                snapshots.push_back(snapshot);
                while snapshots.len() > cap {
                    snapshots.pop_front();
                }
                Ok(())
            }
            NodePayload::Text { .. } => Err(Error::invalid(format!("{id} is not an entity node"))),
        }
    }

    /// Increments the edge weight (creating it at 1) and returns the new weight.
    pub fn reinforce_edge(&mut self, a: NodeId, b: NodeId, kind: EdgeKind) -> Result<u64> {
        for id in [a, b] {
            if !self.contains(id) {
                return Err(Error::not_found(format!("node {id}")));
            }
        }
        if a == b {
            return Err(Error::invalid(format!("self-loop on {a}")));
        }
        if kind == EdgeKind::Equivalence {
            let kinds = [a.kind, b.kind];
            let ok = kinds.contains(&NodeKind::Face) && kinds.contains(&NodeKind::Voice);
            if !ok {
                return Err(Error::invalid(format!("equivalence must join one face and one voice, got {a} and {b}")));
            }
        }
        let w = self.edges.entry(EdgeKey::new(a, b, kind)).or_insert(0);
        *w += 1;
        Ok(*w)
    }

    /// Applies `update` atomically: either every requested field changes or none does.
    pub fn update_node(&mut self, id: NodeId, update: NodeUpdate) -> Result<()> {
        let text_dim = self.config.text_dim;
        let node = self.nodes.get_mut(&id).ok_or_else(|| Error::not_found(format!("node {id}")))?;
        let new_weight = match update.weight_delta {
            Some(delta) => {
                let w = node.weight as i128 + delta as i128;
                if w < 1 || w > u64::MAX as i128 {
                    return Err(Error::invalid(format!("weight {} {delta:+} leaves the valid range", node.weight)));
                }
                w as u64
            }
            None => node.weight,
        };
        if update.content.is_some() || update.embedding.is_some() {
            let NodePayload::Text { text, embedding } = &mut node.payload else {
                return Err(Error::invalid(format!("{id} has no text content")));
            };
            if let Some(e) = &update.embedding {
                if e.dim() != text_dim {
                    return Err(Error::Config(format!(
                        "text embedding has dimension {}, graph expects {text_dim}",
                        e.dim()
                    )));
                }
            }
            if let Some(c) = update.content {
                *text = c;
            }
            if let Some(e) = update.embedding {
                *embedding = e;
            }
        }
        node.weight = new_weight;
        Ok(())
    }

    pub fn set_extra(&mut self, id: NodeId, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let node = self.nodes.get_mut(&id).ok_or_else(|| Error::not_found(format!("node {id}")))?;
        node.extra.insert(key.into(), value.into());
        Ok(())
    }

    /// Resolves face/voice nodes into characters by weight voting.
    pub fn resolve_characters(&self) -> CharacterMap {
        characters::resolve(self)
    }

    // Raw constructors for snapshot loading; validation happens in the loader.
    pub(crate) fn from_parts(
        config: GraphConfig,
        nodes: BTreeMap<NodeId, MemoryNode>,
        edges: BTreeMap<EdgeKey, u64>,
        clips: BTreeMap<u64, ClipRecord>,
        next_ordinal: [u64; 3],
    ) -> Self {
        MemoryGraph { config, nodes, edges, clips, next_ordinal }
    }
}
