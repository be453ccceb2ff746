use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};

use super::{MemoryEntry, TaggedObservation};
use crate::error::Result;
use crate::graph::NodeId;

/// What a generator sees for one clip.
#[derive(Debug, Clone, Copy)]
pub struct ClipContext<'a> {
    pub clip_index: u64,
    pub observations: &'a [TaggedObservation],
    /// Local tag to matched global ID.
    pub ids: &'a BTreeMap<String, NodeId>,
    pub generated: Option<&'a [MemoryEntry]>,
}

/// Produces episodic and semantic entries for a clip. Entries must reference
/// characters by global `<face_i>` / `<voice_j>` IDs.
pub trait MemoryGenerator: Send + Sync {
    fn generate(&self, ctx: &ClipContext<'_>) -> Result<Vec<MemoryEntry>>;
}

/// Replays the entries shipped inside the clip input, substituting `{tag}`
/// placeholders with the global IDs the tags matched.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureGenerator;

impl MemoryGenerator for FixtureGenerator {
    fn generate(&self, ctx: &ClipContext<'_>) -> Result<Vec<MemoryEntry>> {
        Ok(ctx
            .generated
            .unwrap_or_default()
            .iter()
            .map(|e| MemoryEntry { kind: e.kind, text: rewrite_local_tags(&e.text, ctx.ids) })
            .collect())
    }
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z][A-Za-z0-9_-]*)\}").unwrap())
}

pub(super) fn is_tag(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Replaces known `{tag}` placeholders; unknown ones are left in place.
pub fn rewrite_local_tags(text: &str, ids: &BTreeMap<String, NodeId>) -> String {
    tag_regex()
        .replace_all(text, |caps: &Captures| match ids.get(&caps[1]) {
            Some(id) => id.to_string(),
            None => caps[0].to_string(),
        })
        .into_owned()
}

pub(super) fn find_local_tag(text: &str) -> Option<String> {
    tag_regex().captures(text).map(|c| c[1].to_string())
}
