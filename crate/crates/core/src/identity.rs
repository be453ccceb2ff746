//! Face/voice identity: online matching against node snapshots, meta-clip
//! mining, meta-dictionary voting, and equivalence annotation of new clips.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{average_similarity, Embedding};
use crate::error::{Error, Result};
use crate::graph::{EntityKind, MemoryGraph, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityConfig {
    pub face_threshold: f64,
    pub voice_threshold: f64,
    /// Minimum share of a face's votes its top voice must hold.
    pub vote_ratio: f64,
    /// Voice segments shorter than this many seconds are discarded.
    pub min_segment_s: f64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig { face_threshold: 0.3, voice_threshold: 0.6, vote_ratio: 0.6, min_segment_s: 2.0 }
    }
}

impl IdentityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("face_threshold", self.face_threshold), ("voice_threshold", self.voice_threshold)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {t}")));
            }
        }
        check_ratio(self.vote_ratio)?;
        if self.min_segment_s.is_nan() || self.min_segment_s < 0.0 {
            return Err(Error::Config("min_segment_s must be non-negative".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, kind: EntityKind) -> f64 {
        match kind {
            EntityKind::Face => self.face_threshold,
            EntityKind::Voice => self.voice_threshold,
        }
    }
}

fn check_ratio(p: f64) -> Result<()> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(Error::Config(format!("vote ratio must lie in (0.5, 1], got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceSegment {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub transcript: String,
}

impl VoiceSegment {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub modality: EntityKind,
    pub embedding: Embedding,
    pub clip_index: u64,
    #[serde(default)]
    pub segments: Vec<VoiceSegment>,
}

impl FeatureObservation {
    pub fn validate(&self) -> Result<()> {
        if self.modality == EntityKind::Voice && self.segments.is_empty() {
            return Err(Error::invalid("voice observation without segments"));
        }
        if let Some(s) = self.segments.iter().find(|s| s.end_s.is_nan() || s.start_s.is_nan() || s.end_s <= s.start_s) {
            return Err(Error::invalid(format!("segment end {} must exceed start {}", s.end_s, s.start_s)));
        }
        Ok(())
    }
}

/// Keeps segments lasting at least `min_segment_s` seconds.
pub fn filter_voice_segments(segments: &[VoiceSegment], min_segment_s: f64) -> Vec<VoiceSegment> {
    segments.iter().filter(|s| s.duration() >= min_segment_s).cloned().collect()
}

/// Best same-modality node by average snapshot similarity, if it strictly
/// exceeds the modality threshold. Ties go to the lowest ordinal.
pub fn identify(
    graph: &MemoryGraph,
    kind: EntityKind,
    embedding: &Embedding,
    config: &IdentityConfig,
) -> Result<Option<(NodeId, f64)>> {
    let mut best: Option<(NodeId, f64)> = None;
    for node in graph.nodes_of(NodeKind::from(kind)) {
        let Some(snaps) = node.snapshots() else { continue };
        let score = average_similarity(embedding, snaps)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((node.id, score));
        }
    }
    Ok(best.filter(|(_, s)| *s > config.threshold(kind)))
}

/// Returns the matched node (appending the observation to its snapshots) or a
/// newly created node seeded with the observation. `created` is true for the latter.
pub fn match_or_create(
    graph: &mut MemoryGraph,
    obs: &FeatureObservation,
    config: &IdentityConfig,
) -> Result<(NodeId, bool)> {
    let dim = graph.config().dim_for(NodeKind::from(obs.modality));
    if obs.embedding.dim() != dim {
        return Err(Error::invalid(format!(
            "{:?} observation has dimension {}, graph expects {dim}",
            obs.modality,
            obs.embedding.dim()
        )));
    }
    match identify(graph, obs.modality, &obs.embedding, config)? {
        Some((id, _)) => {
            graph.append_snapshot(id, obs.embedding.clone())?;
            Ok((id, false))
        }
        None => Ok((graph.add_entity_node(obs.modality, vec![obs.embedding.clone()])?, true)),
    }
}

/// A short, visually stable segment of video with the global IDs seen in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortClip {
    pub index: u64,
    pub faces: BTreeSet<NodeId>,
    pub voices: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaClip {
    pub clip: u64,
    pub face: NodeId,
    pub voice: NodeId,
}

/// Short clips holding exactly one face and one voice, in input order.
pub fn extract_meta_clips(clips: &[ShortClip]) -> Vec<MetaClip> {
    clips
        .iter()
        .filter(|c| c.faces.len() == 1 && c.voices.len() == 1)
        .map(|c| MetaClip { clip: c.index, face: *c.faces.first().unwrap(), voice: *c.voices.first().unwrap() })
        .collect()
}

/// Global voice-to-face mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaDictionary {
    pub mapping: BTreeMap<NodeId, NodeId>,
}

impl MetaDictionary {
    pub fn get(&self, voice: NodeId) -> Option<NodeId> {
        self.mapping.get(&voice).copied()
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Bipartite co-occurrence voting over meta-clips.
///
/// 1. weight each (face, voice) pair by its meta-clip count;
/// 2. drop pairs seen only once;
/// 3. per face, keep its top voice if that voice holds at least `p` of the
///    face's remaining weight, otherwise drop the face entirely;
/// 4. per voice, keep only its heaviest surviving face;
/// 5. map each surviving voice to its face.
///
/// Argmax ties break to the lowest ordinal in both passes.
pub fn build_meta_dictionary(meta_clips: &[MetaClip], p: f64) -> Result<MetaDictionary> {
    check_ratio(p)?;
    let mut weights: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for m in meta_clips {
        *weights.entry((m.face, m.voice)).or_default() += 1;
    }
    weights.retain(|_, w| *w > 1);

    let mut by_face: BTreeMap<NodeId, Vec<(NodeId, u64)>> = BTreeMap::new();
    for (&(f, v), &w) in &weights {
        by_face.entry(f).or_default().push((v, w));
    }
    let mut face_choice: Vec<(NodeId, NodeId, u64)> = Vec::new();
    for (face, voices) in by_face {
        let total: u64 = voices.iter().map(|(_, w)| w).sum();
        // Voices are sorted by id, so the first maximum has the lowest ordinal.
        let (top, w) = voices
            .iter()
            .fold(None::<(NodeId, u64)>, |acc, &(v, w)| match acc {
                Some((_, bw)) if bw >= w => acc,
                _ => Some((v, w)),
            })
            .expect("face has at least one voice");
        if w as f64 / total as f64 >= p {
            face_choice.push((face, top, w));
        }
    }

    let mut by_voice: BTreeMap<NodeId, (NodeId, u64)> = BTreeMap::new();
    for (face, voice, w) in face_choice {
        match by_voice.get(&voice) {
            Some(&(f, bw)) if bw > w || (bw == w && f.ordinal <= face.ordinal) => {}
            _ => {
                by_voice.insert(voice, (face, w));
            }
        }
    }
    Ok(MetaDictionary { mapping: by_voice.into_iter().map(|(v, (f, _))| (v, f)).collect() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Annotation {
    Accepted { entries: Vec<String> },
    Rejected { voice: NodeId },
}

/// Renders the equivalence entry for a face/voice pair.
pub fn equivalence_entry(face: NodeId, voice: NodeId) -> String {
    format!("Equivalence: {face}, {voice}")
}

/// Annotates a clip from the meta-dictionary. Clips containing a voice the
/// dictionary does not know are rejected outright.
pub fn annotate_equivalence(
    clip_faces: &BTreeSet<NodeId>,
    clip_voices: &BTreeSet<NodeId>,
    dict: &MetaDictionary,
) -> Annotation {
    if let Some(v) = clip_voices.iter().find(|v| dict.get(**v).is_none()) {
        return Annotation::Rejected { voice: *v };
    }
    let entries = clip_voices
        .iter()
        .filter_map(|v| {
            let f = dict.get(*v)?;
            clip_faces.contains(&f).then(|| equivalence_entry(f, *v))
        })
        .collect();
    Annotation::Accepted { entries }
}

/// Observation log line: the features detected in one short clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub clip_index: u64,
    pub short_index: u64,
    #[serde(default)]
    pub faces: Vec<LoggedFeature>,
    #[serde(default)]
    pub voices: Vec<LoggedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedFeature {
    pub embedding: Embedding,
    #[serde(default)]
    pub segments: Vec<VoiceSegment>,
}

/// Resolves logged features to existing global IDs without mutating the graph.
/// Features that match no node, and voices with no segment long enough, are skipped.
pub fn short_clips_from_log(
    graph: &MemoryGraph,
    records: &[ObservationRecord],
    config: &IdentityConfig,
) -> Result<Vec<ShortClip>> {
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let mut faces = BTreeSet::new();
        let mut voices = BTreeSet::new();
        for f in &rec.faces {
            if let Some((id, _)) = identify(graph, EntityKind::Face, &f.embedding, config)? {
                faces.insert(id);
            }
        }
        for v in &rec.voices {
            if filter_voice_segments(&v.segments, config.min_segment_s).is_empty() {
                continue;
            }
            if let Some((id, _)) = identify(graph, EntityKind::Voice, &v.embedding, config)? {
                voices.insert(id);
            }
        }
        out.push(ShortClip { index: i as u64, faces, voices });
    }
    Ok(out)
}
