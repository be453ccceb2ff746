//! Versioned binary snapshot of a [`MemoryGraph`].
//!
//! All integers and floats are little-endian. Strings are a `u32` byte length
//! followed by UTF-8 bytes. The full layout is documented in
//! `docs/snapshot-format.md`; in short:
//!
//! ```text
//! header  magic "MNEMOGRF" | u16 version | u32 text_dim | u32 face_dim
//!         | u32 voice_dim | u32 snapshot_cap | u64 next_text | u64 next_face
//!         | u64 next_voice
//! nodes   u64 count, then per node:
//!         u8 kind | u64 ordinal | u64 weight | u32 n_extra | n_extra x (str, str)
//!         kind 0 (text):        str text | text_dim x f32
//!         kind 1/2 (face/voice): u32 n_snap | n_snap x dim x f32
//! edges   u64 count, then per edge:
//!         u8 kind_a | u64 ord_a | u8 kind_b | u64 ord_b | u8 edge_kind | u64 weight
//! clips   u64 count, then per clip:
//!         u64 clip_index | u32 n_epi | n_epi x u64 | u32 n_sem | n_sem x u64
//! footer  magic "MNEMOEND"
//! ```
//!
//! Loading validates every structural invariant and either returns a whole
//! graph or an error naming the offending offset and field.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{ClipRecord, EdgeKey, EdgeKind, GraphConfig, MemoryGraph, MemoryNode, NodeId, NodeKind, NodePayload};
use crate::embedding::Embedding;

pub const SNAPSHOT_VERSION: u16 = 1;
const MAGIC: &[u8; 8] = b"MNEMOGRF";
const FOOTER: &[u8; 8] = b"MNEMOEND";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot does not start with the expected magic bytes")]
    BadMagic,
    #[error("unsupported snapshot version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },
    #[error("snapshot truncated at offset {offset} while reading {field}")]
    Truncated { offset: usize, field: String },
    #[error("invalid {field} at offset {offset}: {reason}")]
    Invalid { offset: usize, field: String, reason: String },
    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

fn kind_code(kind: NodeKind) -> u8 {
    match kind {
        NodeKind::Text => 0,
        NodeKind::Face => 1,
        NodeKind::Voice => 2,
    }
}

fn edge_code(kind: EdgeKind) -> u8 {
    match kind {
        EdgeKind::Equivalence => 0,
        EdgeKind::Generic => 1,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn vector(&mut self, e: &Embedding) {
        for c in e.as_slice() {
            self.0.extend_from_slice(&c.to_le_bytes());
        }
    }
    fn id(&mut self, id: NodeId) {
        self.u8(kind_code(id.kind));
        self.u64(id.ordinal);
    }
}

/// Serializes `graph` into the snapshot byte layout.
pub fn snapshot(graph: &MemoryGraph) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(SNAPSHOT_VERSION);
    let cfg = graph.config();
    w.len(cfg.text_dim);
    w.len(cfg.face_dim);
    w.len(cfg.voice_dim);
    w.len(cfg.snapshot_cap);
    for kind in [NodeKind::Text, NodeKind::Face, NodeKind::Voice] {
        w.u64(graph.next_ordinal(kind));
    }

    w.u64(graph.node_count() as u64);
    for node in graph.nodes() {
        w.id(node.id);
        w.u64(node.weight);
        w.len(node.extra.len());
        for (k, v) in &node.extra {
            w.str(k);
            w.str(v);
        }
        match &node.payload {
            NodePayload::Text { text, embedding } => {
                w.str(text);
                w.vector(embedding);
            }
            NodePayload::Entity { snapshots } => {
                w.len(snapshots.len());
                for s in snapshots {
                    w.vector(s);
                }
            }
        }
    }

    w.u64(graph.edge_count() as u64);
    for (key, weight) in graph.edges() {
        w.id(key.a);
        w.id(key.b);
        w.u8(edge_code(key.kind));
        w.u64(weight);
    }

    w.u64(graph.clip_count() as u64);
    for clip in graph.clips() {
        w.u64(clip.clip_index);
        for list in [&clip.episodic, &clip.semantic] {
            w.len(list.len());
            for id in list {
                w.u64(id.ordinal);
            }
        }
    }
    w.0.extend_from_slice(FOOTER);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], SnapshotError> {
        if self.buf.len() - self.pos < n {
            return Err(SnapshotError::Truncated { offset: self.pos, field: field.to_string() });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, field: &str) -> Result<u8, SnapshotError> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Reads a count and rejects it early if even `min_item` bytes per item
    /// cannot fit in the rest of the buffer.
    fn count(&mut self, wide: bool, min_item: usize, field: &str) -> Result<usize, SnapshotError> {
        let at = self.pos;
        let n = if wide { self.u64(field)? } else { self.u32(field)? as u64 };
        if n.saturating_mul(min_item as u64) > self.remaining() as u64 {
            return Err(SnapshotError::Truncated { offset: at, field: field.to_string() });
        }
        Ok(n as usize)
    }

    fn str(&mut self, field: &str) -> Result<String, SnapshotError> {
        let n = self.count(false, 1, field)?;
        let at = self.pos;
        let bytes = self.take(n, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| invalid(at, field, e.to_string()))
    }

    fn vector(&mut self, dim: usize, field: &str) -> Result<Embedding, SnapshotError> {
        let bytes = self.take(dim * 4, field)?;
        Ok(Embedding::from_raw(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
    }

    fn node_kind(&mut self, field: &str) -> Result<NodeKind, SnapshotError> {
        let at = self.pos;
        match self.u8(field)? {
            0 => Ok(NodeKind::Text),
            1 => Ok(NodeKind::Face),
            2 => Ok(NodeKind::Voice),
            other => Err(invalid(at, field, format!("unknown node kind {other}"))),
        }
    }

    fn id(&mut self, field: &str) -> Result<NodeId, SnapshotError> {
        let kind = self.node_kind(&format!("{field}.kind"))?;
        let ordinal = self.u64(&format!("{field}.ordinal"))?;
        Ok(NodeId { kind, ordinal })
    }
}

fn invalid(offset: usize, field: &str, reason: impl Into<String>) -> SnapshotError {
    SnapshotError::Invalid { offset, field: field.to_string(), reason: reason.into() }
}

/// Parses a snapshot. Never returns a partially built graph.
pub fn load(bytes: &[u8]) -> Result<MemoryGraph, SnapshotError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            SnapshotError::Truncated { offset: 0, field: "magic".into() }
        } else {
            SnapshotError::BadMagic
        });
    }
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::UnsupportedVersion { found: version, expected: SNAPSHOT_VERSION });
    }
    let cfg_at = r.pos;
    let config = GraphConfig {
        text_dim: r.u32("config.text_dim")? as usize,
        face_dim: r.u32("config.face_dim")? as usize,
        voice_dim: r.u32("config.voice_dim")? as usize,
        snapshot_cap: r.u32("config.snapshot_cap")? as usize,
    };
    config.validate().map_err(|e| invalid(cfg_at, "config", e.to_string()))?;
    let mut next_ordinal = [0u64; 3];
    for (slot, name) in next_ordinal.iter_mut().zip(["text", "face", "voice"]) {
        *slot = r.u64(&format!("next_ordinal.{name}"))?;
    }

    let node_count = r.count(true, 21, "nodes.count")?;
    let mut nodes = BTreeMap::new();
    let mut last: Option<NodeId> = None;
    for i in 0..node_count {
        let field = format!("nodes[{i}]");
        let at = r.pos;
        let id = r.id(&format!("{field}.id"))?;
        if last.is_some_and(|prev| prev >= id) {
            return Err(invalid(at, &format!("{field}.id"), format!("{id} out of order or duplicated")));
        }
        if id.ordinal >= next_ordinal[id.kind.index()] {
            return Err(invalid(at, &format!("{field}.id"), format!("{id} beyond allocated ordinals")));
        }
        last = Some(id);
        let w_at = r.pos;
        let weight = r.u64(&format!("{field}.weight"))?;
        if weight == 0 {
            return Err(invalid(w_at, &format!("{field}.weight"), "weight must be >= 1"));
        }
        let n_extra = r.count(false, 8, &format!("{field}.extra.count"))?;
        let mut extra = BTreeMap::new();
        for j in 0..n_extra {
            let k = r.str(&format!("{field}.extra[{j}].key"))?;
            let v = r.str(&format!("{field}.extra[{j}].value"))?;
            extra.insert(k, v);
        }
        let payload = match id.kind {
            NodeKind::Text => {
                let text = r.str(&format!("{field}.text"))?;
                let embedding = r.vector(config.text_dim, &format!("{field}.embedding"))?;
                NodePayload::Text { text, embedding }
            }
            kind => {
                let dim = config.dim_for(kind);
                let n_at = r.pos;
                let n = r.count(false, dim * 4, &format!("{field}.snapshots.count"))?;
                if n == 0 || n > config.snapshot_cap {
                    return Err(invalid(
                        n_at,
                        &format!("{field}.snapshots.count"),
                        format!("{n} snapshots outside 1..={}", config.snapshot_cap),
                    ));
                }
                let mut snapshots = VecDeque::with_capacity(n);
                for j in 0..n {
                    snapshots.push_back(r.vector(dim, &format!("{field}.snapshots[{j}]"))?);
                }
                NodePayload::Entity { snapshots }
            }
        };
        nodes.insert(id, MemoryNode { id, weight, payload, extra });
    }

    let edge_count = r.count(true, 27, "edges.count")?;
    let mut edges = BTreeMap::new();
    for i in 0..edge_count {
        let field = format!("edges[{i}]");
        let at = r.pos;
        let a = r.id(&format!("{field}.a"))?;
        let b = r.id(&format!("{field}.b"))?;
        let k_at = r.pos;
        let kind = match r.u8(&format!("{field}.kind"))? {
            0 => EdgeKind::Equivalence,
            1 => EdgeKind::Generic,
            other => return Err(invalid(k_at, &format!("{field}.kind"), format!("unknown edge kind {other}"))),
        };
        let w_at = r.pos;
        let weight = r.u64(&format!("{field}.weight"))?;
        if a >= b {
            return Err(invalid(at, &field, "endpoints must be distinct and ordered"));
        }
        for id in [a, b] {
            if !nodes.contains_key(&id) {
                return Err(invalid(at, &field, format!("endpoint {id} does not exist")));
            }
        }
        if kind == EdgeKind::Equivalence && !(a.kind == NodeKind::Face && b.kind == NodeKind::Voice) {
            return Err(invalid(at, &field, "equivalence edge must join a face and a voice"));
        }
        if weight == 0 {
            return Err(invalid(w_at, &format!("{field}.weight"), "weight must be >= 1"));
        }
        if edges.insert(EdgeKey { a, b, kind }, weight).is_some() {
            return Err(invalid(at, &field, "duplicate edge"));
        }
    }

    let clip_count = r.count(true, 16, "clips.count")?;
    let mut clips = BTreeMap::new();
    let mut seen_entries = BTreeSet::new();
    for i in 0..clip_count {
        let field = format!("clips[{i}]");
        let at = r.pos;
        let clip_index = r.u64(&format!("{field}.clip_index"))?;
        let mut lists = [Vec::new(), Vec::new()];
        for (list, name) in lists.iter_mut().zip(["episodic", "semantic"]) {
            let n = r.count(false, 8, &format!("{field}.{name}.count"))?;
            for j in 0..n {
                let e_at = r.pos;
                let f = format!("{field}.{name}[{j}]");
                let id = NodeId::text(r.u64(&f)?);
                if !nodes.contains_key(&id) {
                    return Err(invalid(e_at, &f, format!("{id} does not exist")));
                }
                if !seen_entries.insert(id) {
                    return Err(invalid(e_at, &f, format!("{id} listed twice")));
                }
                list.push(id);
            }
        }
        let [episodic, semantic] = lists;
        if clips.insert(clip_index, ClipRecord { clip_index, episodic, semantic }).is_some() {
            return Err(invalid(at, &format!("{field}.clip_index"), "duplicate clip index"));
        }
    }

    if r.take(FOOTER.len(), "footer")? != FOOTER {
        return Err(invalid(r.pos - FOOTER.len(), "footer", "bad end marker"));
    }
    if r.remaining() > 0 {
        return Err(SnapshotError::TrailingBytes { offset: r.pos, count: r.remaining() });
    }
    Ok(MemoryGraph::from_parts(config, nodes, edges, clips, next_ordinal))
}

/// Writes the snapshot to a sibling temp file and renames it into place.
pub fn save_to_path(graph: &MemoryGraph, path: &Path) -> std::io::Result<()> {
    let bytes = snapshot(graph);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "graph".into());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn load_from_path(path: &Path) -> crate::error::Result<MemoryGraph> {
    let bytes = std::fs::read(path)?;
    Ok(load(&bytes)?)
}
