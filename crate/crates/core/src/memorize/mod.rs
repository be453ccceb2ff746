//! Clip-by-clip ingestion into the memory graph.
//!
//! Each clip carries feature observations under clip-local tags. Observations
//! are matched to global face/voice nodes, a [`MemoryGenerator`] produces
//! entries that reference the global IDs, equivalence entries become edge
//! reinforcements, and everything else is embedded and stored as text.
//! A clip's writes are staged on a copy of the graph and committed together.

mod generator;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, EntityKind, EntryKind, MemoryGraph, NodeId, EXTRA_CLIP_INDEX, EXTRA_INGESTED_AT};
use crate::identity::{
    annotate_equivalence, filter_voice_segments, match_or_create, Annotation, FeatureObservation, IdentityConfig,
    MetaDictionary, ShortClip, VoiceSegment,
};

pub use generator::{rewrite_local_tags, ClipContext, FixtureGenerator, MemoryGenerator};
pub use store::MemoryStore;

/// One observation inside a clip, addressed by a clip-local tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedObservation {
    pub tag: String,
    pub modality: EntityKind,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<VoiceSegment>,
}

/// A short clip inside a clip, listing the local tags seen in it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalShortClip {
    #[serde(default)]
    pub faces: Vec<String>,
    #[serde(default)]
    pub voices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub kind: EntryKind,
    pub text: String,
}

impl MemoryEntry {
    pub fn episodic(text: impl Into<String>) -> Self {
        MemoryEntry { kind: EntryKind::Episodic, text: text.into() }
    }

    pub fn semantic(text: impl Into<String>) -> Self {
        MemoryEntry { kind: EntryKind::Semantic, text: text.into() }
    }
}

/// One line of the clip input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipInput {
    pub clip_index: u64,
    #[serde(default)]
    pub observations: Vec<TaggedObservation>,
    #[serde(default)]
    pub short_clips: Vec<LocalShortClip>,
    /// Pre-written entries using `{tag}` placeholders, consumed by [`FixtureGenerator`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<Vec<MemoryEntry>>,
}

impl ClipInput {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for obs in &self.observations {
            if !generator::is_tag(&obs.tag) {
                return Err(Error::invalid(format!("bad local tag {:?}", obs.tag)));
            }
            if !seen.insert(obs.tag.as_str()) {
                return Err(Error::invalid(format!("duplicate local tag {:?} in clip {}", obs.tag, self.clip_index)));
            }
        }
        for sc in &self.short_clips {
            for tag in sc.faces.iter().chain(&sc.voices) {
                if !seen.contains(tag.as_str()) {
                    return Err(Error::invalid(format!("short clip references unknown tag {tag:?}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Semantic {
    Equivalence { face: NodeId, voice: NodeId },
    Plain,
}

fn equivalence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*Equivalence\s*:\s*(<\w+_\d+>)\s*,\s*(<\w+_\d+>)\s*$").unwrap())
}

/// Recognizes `Equivalence: <face_x>, <voice_y>` in either ID order.
pub fn parse_semantic_entry(text: &str) -> Result<Semantic> {
    let Some(caps) = equivalence_regex().captures(text) else {
        return Ok(Semantic::Plain);
    };
    let parse = |s: &str| {
        s.parse::<NodeId>()
            .ok()
            .filter(|id| id.is_entity())
            .ok_or_else(|| Error::Format(format!("{s} is not a face or voice ID")))
    };
    let (a, b) = (parse(&caps[1])?, parse(&caps[2])?);
    match (a.entity_kind(), b.entity_kind()) {
        (Some(EntityKind::Face), Some(EntityKind::Voice)) => Ok(Semantic::Equivalence { face: a, voice: b }),
        (Some(EntityKind::Voice), Some(EntityKind::Face)) => Ok(Semantic::Equivalence { face: b, voice: a }),
        _ => Err(Error::Format(format!("equivalence needs one face and one voice: {}", text.trim()))),
    }
}

fn entity_token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(?:face|voice)_\d+>").unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    /// Every timestamp reads this many milliseconds since the Unix epoch.
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
            Clock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub identity: IdentityConfig,
    pub clock: Clock,
    /// When set, each short clip is annotated from this dictionary and the
    /// resulting equivalences are reinforced alongside generator output.
    pub dictionary: Option<MetaDictionary>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { identity: IdentityConfig::default(), clock: Clock::System, dictionary: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedEntry {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub clip_index: u64,
    pub matched: BTreeMap<String, NodeId>,
    pub created_nodes: Vec<NodeId>,
    /// Voice observations dropped because no segment was long enough.
    pub skipped_observations: Vec<String>,
    pub stored_entries: Vec<NodeId>,
    pub reinforced_edges: Vec<(NodeId, NodeId)>,
    pub rejected_entries: Vec<RejectedEntry>,
    /// Short clips resolved to global IDs.
    pub short_clips: Vec<ShortClip>,
    pub annotations: Vec<Annotation>,
    /// Set when the whole clip was rejected; the graph is then unchanged.
    pub error: Option<String>,
}

impl IngestReport {
    pub fn failed(clip_index: u64, reason: impl Into<String>) -> Self {
        IngestReport { clip_index, error: Some(reason.into()), ..Default::default() }
    }

    pub fn is_rejected(&self) -> bool {
        self.error.is_some()
    }
}

/// Ingests one clip. On error the graph is left untouched.
pub fn ingest_clip(
    graph: &mut MemoryGraph,
    input: &ClipInput,
    generator: &dyn MemoryGenerator,
    embedder: &dyn Embedder,
    config: &IngestConfig,
) -> Result<IngestReport> {
    let mut staged = graph.clone();
    let report = ingest_into(&mut staged, input, generator, embedder, config)?;
    *graph = staged;
    Ok(report)
}

/// Ingests clips in order. A failing clip is reported and skipped; the rest continue.
pub fn ingest_stream(
    graph: &mut MemoryGraph,
    inputs: &[ClipInput],
    generator: &dyn MemoryGenerator,
    embedder: &dyn Embedder,
    config: &IngestConfig,
) -> Vec<IngestReport> {
    inputs
        .iter()
        .map(|input| {
            ingest_clip(graph, input, generator, embedder, config).unwrap_or_else(|e| {
                log::warn!("clip {} rejected: {e}", input.clip_index);
                IngestReport::failed(input.clip_index, e.to_string())
            })
        })
        .collect()
}

/// Writes a clip into `graph` directly. May leave partial state on error;
/// callers stage on a copy.
pub(crate) fn ingest_into(
    graph: &mut MemoryGraph,
    input: &ClipInput,
    generator: &dyn MemoryGenerator,
    embedder: &dyn Embedder,
    config: &IngestConfig,
) -> Result<IngestReport> {
    if graph.clip(input.clip_index).is_some() {
        return Err(Error::Conflict(format!("clip {} already ingested", input.clip_index)));
    }
    input.validate()?;
    let now = config.clock.now_ms().to_string();
    let mut report = IngestReport { clip_index: input.clip_index, ..Default::default() };

    for obs in &input.observations {
        let mut feature = FeatureObservation {
            modality: obs.modality,
            embedding: obs.embedding.clone(),
            clip_index: input.clip_index,
            segments: obs.segments.clone(),
        };
        feature.validate()?;
        if obs.modality == EntityKind::Voice {
            feature.segments = filter_voice_segments(&feature.segments, config.identity.min_segment_s);
            if feature.segments.is_empty() {
                report.skipped_observations.push(obs.tag.clone());
                continue;
            }
        }
        let (id, created) = match_or_create(graph, &feature, &config.identity)?;
        if created {
            graph.set_extra(id, EXTRA_CLIP_INDEX, input.clip_index.to_string())?;
            graph.set_extra(id, EXTRA_INGESTED_AT, now.clone())?;
            report.created_nodes.push(id);
        }
        report.matched.insert(obs.tag.clone(), id);
    }

    for sc in &input.short_clips {
        let resolve = |tags: &[String]| -> BTreeSet<NodeId> {
            tags.iter().filter_map(|t| report.matched.get(t).copied()).collect()
        };
        report.short_clips.push(ShortClip {
            index: report.short_clips.len() as u64,
            faces: resolve(&sc.faces),
            voices: resolve(&sc.voices),
        });
    }

    let ctx = ClipContext {
        clip_index: input.clip_index,
        observations: &input.observations,
        ids: &report.matched,
        generated: input.generated.as_deref(),
    };
    let entries = generator.generate(&ctx)?;
    graph.ensure_clip(input.clip_index);

    for entry in entries {
        if let Some(reason) = unresolved_reference(graph, &entry.text) {
            log::debug!("clip {}: dropping entry {:?}: {reason}", input.clip_index, entry.text);
            report.rejected_entries.push(RejectedEntry { text: entry.text, reason });
            continue;
        }
        match parse_semantic_entry(&entry.text) {
            Ok(Semantic::Equivalence { face, voice }) => {
                graph.reinforce_edge(face, voice, EdgeKind::Equivalence)?;
                report.reinforced_edges.push((face, voice));
            }
            Ok(Semantic::Plain) => {
                let embedding = embedder.embed(&entry.text)?;
                let extra = BTreeMap::from([(EXTRA_INGESTED_AT.to_string(), now.clone())]);
                let id = graph.add_text_entry_with_extra(input.clip_index, entry.kind, entry.text, embedding, extra)?;
                report.stored_entries.push(id);
            }
            Err(e) => report.rejected_entries.push(RejectedEntry { text: entry.text, reason: e.to_string() }),
        }
    }

    if let Some(dict) = &config.dictionary {
        for sc in &report.short_clips {
            let annotation = annotate_equivalence(&sc.faces, &sc.voices, dict);
            if let Annotation::Accepted { entries } = &annotation {
                for text in entries {
                    if let Semantic::Equivalence { face, voice } = parse_semantic_entry(text)? {
                        graph.reinforce_edge(face, voice, EdgeKind::Equivalence)?;
                        report.reinforced_edges.push((face, voice));
                    }
                }
            }
            report.annotations.push(annotation);
        }
    }
    Ok(report)
}

/// Reason an entry cannot be stored, if it names an entity that does not
/// exist or still carries an unresolved local tag.
fn unresolved_reference(graph: &MemoryGraph, text: &str) -> Option<String> {
    for m in entity_token_regex().find_iter(text) {
        let known = m.as_str().parse::<NodeId>().map(|id| graph.contains(id)).unwrap_or(false);
        if !known {
            return Some(format!("unknown entity {}", m.as_str()));
        }
    }
    generator::find_local_tag(text).map(|tag| format!("unresolved local tag {{{tag}}}"))
}
