//! Line-delimited JSON records describing a graph, one record per line.

use serde::Serialize;
use serde_json::Value;

use super::{EdgeKind, MemoryGraph, Modality, NodeId, NodePayload};

#[derive(Debug, Serialize)]
struct NodeRecord<'a> {
    id: NodeId,
    modality: Modality,
    weight: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshots: Option<usize>,
    extra: &'a std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct EdgeRecord {
    a: NodeId,
    b: NodeId,
    kind: EdgeKind,
    weight: u64,
}

#[derive(Debug, Serialize)]
struct ClipRecordLine<'a> {
    clip: String,
    episodic: Vec<&'a str>,
    semantic: Vec<&'a str>,
}

fn lines<T: Serialize>(items: impl Iterator<Item = T>) -> Vec<String> {
    items.map(|item| serde_json::to_string(&item).expect("records serialize")).collect()
}

pub fn node_lines(graph: &MemoryGraph) -> Vec<String> {
    lines(graph.nodes().map(|n| NodeRecord {
        id: n.id,
        modality: n.modality(),
        weight: n.weight,
        text: n.text(),
        snapshots: match &n.payload {
            NodePayload::Entity { snapshots } => Some(snapshots.len()),
            NodePayload::Text { .. } => None,
        },
        extra: &n.extra,
    }))
}

pub fn edge_lines(graph: &MemoryGraph) -> Vec<String> {
    lines(graph.edges().map(|(k, weight)| EdgeRecord { a: k.a, b: k.b, kind: k.kind, weight }))
}

pub fn clip_lines(graph: &MemoryGraph) -> Vec<String> {
    let text = |id: &NodeId| graph.node(*id).and_then(|n| n.text()).unwrap_or_default();
    lines(graph.clips().map(|c| ClipRecordLine {
        clip: c.render_name(),
        episodic: c.episodic.iter().map(text).collect(),
        semantic: c.semantic.iter().map(text).collect(),
    }))
}

pub fn character_lines(graph: &MemoryGraph) -> Vec<String> {
    lines(graph.resolve_characters().groups().into_iter())
}

/// Character groups as a JSON array, the payload served for character listings.
pub fn characters_json(graph: &MemoryGraph) -> Value {
    serde_json::to_value(graph.resolve_characters().groups()).expect("groups serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::mock_embed;
    use crate::graph::{EntityKind, EntryKind};

    #[test]
    fn dumps_are_one_json_object_per_line() {
        let mut g = MemoryGraph::default();
        let f = g.add_entity_node(EntityKind::Face, vec![mock_embed("a", 64).unwrap()]).unwrap();
        let v = g.add_entity_node(EntityKind::Voice, vec![mock_embed("b", 64).unwrap()]).unwrap();
        g.reinforce_edge(v, f, EdgeKind::Equivalence).unwrap();
        g.add_text_entry(0, EntryKind::Episodic, "<face_0> sits", mock_embed("s", 64).unwrap()).unwrap();

        assert_eq!(node_lines(&g).len(), 3);
        assert_eq!(edge_lines(&g), vec![r#"{"a":"<face_0>","b":"<voice_0>","kind":"equivalence","weight":1}"#]);
        assert_eq!(clip_lines(&g), vec![r#"{"clip":"CLIP_0","episodic":["<face_0> sits"],"semantic":[]}"#]);
        assert_eq!(character_lines(&g), vec![r#"{"character":"<character_0>","members":["<face_0>","<voice_0>"]}"#]);
    }
}
