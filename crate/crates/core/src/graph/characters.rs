use std::collections::BTreeMap;

use serde::Serialize;

use super::{CharacterId, EdgeKind, MemoryGraph, NodeId, NodeKind};

/// Assignment of every entity node to a character.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharacterMap {
    assignments: BTreeMap<NodeId, CharacterId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CharacterGroup {
    pub character: CharacterId,
    pub members: Vec<NodeId>,
}

impl CharacterMap {
    pub fn from_assignments(assignments: BTreeMap<NodeId, CharacterId>) -> Self {
        CharacterMap { assignments }
    }

    pub fn get(&self, id: NodeId) -> Option<CharacterId> {
        self.assignments.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignments(&self) -> &BTreeMap<NodeId, CharacterId> {
        &self.assignments
    }

    pub fn members(&self, character: CharacterId) -> Vec<NodeId> {
        self.assignments.iter().filter(|(_, c)| **c == character).map(|(id, _)| *id).collect()
    }

    /// Characters in ordinal order, each with its members in id order.
    pub fn groups(&self) -> Vec<CharacterGroup> {
        let mut by_char: BTreeMap<CharacterId, Vec<NodeId>> = BTreeMap::new();
        for (id, c) in &self.assignments {
            by_char.entry(*c).or_default().push(*id);
        }
        by_char.into_iter().map(|(character, members)| CharacterGroup { character, members }).collect()
    }
}

/// For each voice keep its heaviest equivalence edge (ties: lowest face
/// ordinal), take connected components over the kept edges, and number the
/// components by their smallest member.
pub(super) fn resolve(graph: &MemoryGraph) -> CharacterMap {
    let entities: Vec<NodeId> =
        graph.nodes_of(NodeKind::Face).chain(graph.nodes_of(NodeKind::Voice)).map(|n| n.id).collect();
    if entities.is_empty() {
        return CharacterMap::default();
    }
    let index: BTreeMap<NodeId, usize> = entities.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..entities.len()).collect();

    let mut best: BTreeMap<NodeId, (u64, NodeId)> = BTreeMap::new();
    for (key, weight) in graph.edges() {
        if key.kind != EdgeKind::Equivalence {
            continue;
        }
        let (face, voice) = if key.a.kind == NodeKind::Face { (key.a, key.b) } else { (key.b, key.a) };
        let better = match best.get(&voice) {
            None => true,
            Some(&(w, f)) => weight > w || (weight == w && face.ordinal < f.ordinal),
        };
        if better {
            best.insert(voice, (weight, face));
        }
    }
    for (voice, (_, face)) in &best {
        union(&mut parent, index[voice], index[face]);
    }

    let mut components: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, id) in entities.iter().enumerate() {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(*id);
    }
    let mut ordered: Vec<Vec<NodeId>> = components.into_values().collect();
    ordered.sort_by_key(|members| members.iter().map(member_rank).min());

    let mut assignments = BTreeMap::new();
    for (k, members) in ordered.into_iter().enumerate() {
        for id in members {
            assignments.insert(id, CharacterId(k as u64));
        }
    }
    CharacterMap { assignments }
}

/// Ordering key for character numbering: ordinal first, faces before voices.
fn member_rank(id: &NodeId) -> (u64, u8) {
    (id.ordinal, if id.kind == NodeKind::Face { 0 } else { 1 })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}
