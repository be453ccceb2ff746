use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Modality prefix of a node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Text,
    Face,
    Voice,
}

impl NodeKind {
    pub(crate) fn index(self) -> usize {
        match self {
            NodeKind::Text => 0,
            NodeKind::Face => 1,
            NodeKind::Voice => 2,
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            NodeKind::Text => Modality::Text,
            NodeKind::Face => Modality::Image,
            NodeKind::Voice => Modality::Audio,
        }
    }
}

/// Kind of an entity (identity-anchor) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Face,
    Voice,
}

impl From<EntityKind> for NodeKind {
    fn from(kind: EntityKind) -> Self {
        match kind {
            EntityKind::Face => NodeKind::Face,
            EntityKind::Voice => NodeKind::Voice,
        }
    }
}

/// Storage modality of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
}

/// Graph-unique node identifier, rendered `TEXT_n`, `<face_n>` or `<voice_n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub kind: NodeKind,
    pub ordinal: u64,
}

impl NodeId {
    pub const fn text(ordinal: u64) -> Self {
        NodeId { kind: NodeKind::Text, ordinal }
    }

    pub const fn face(ordinal: u64) -> Self {
        NodeId { kind: NodeKind::Face, ordinal }
    }

    pub const fn voice(ordinal: u64) -> Self {
        NodeId { kind: NodeKind::Voice, ordinal }
    }

    pub fn entity_kind(&self) -> Option<EntityKind> {
        match self.kind {
            NodeKind::Text => None,
            NodeKind::Face => Some(EntityKind::Face),
            NodeKind::Voice => Some(EntityKind::Voice),
        }
    }

    pub fn is_entity(&self) -> bool {
        self.kind != NodeKind::Text
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Text => write!(f, "TEXT_{}", self.ordinal),
            NodeKind::Face => write!(f, "<face_{}>", self.ordinal),
            NodeKind::Voice => write!(f, "<voice_{}>", self.ordinal),
        }
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Format(format!("not a node id: {s:?}"));
        let parse_ord = |digits: &str| -> Result<u64, Error> {
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            // Reject leading zeros so rendering round-trips.
            if digits.len() > 1 && digits.starts_with('0') {
                return Err(bad());
            }
            digits.parse().map_err(|_| bad())
        };
        if let Some(rest) = s.strip_prefix("TEXT_") {
            return Ok(NodeId::text(parse_ord(rest)?));
        }
        let inner = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')).ok_or_else(bad)?;
        if let Some(rest) = inner.strip_prefix("face_") {
            Ok(NodeId::face(parse_ord(rest)?))
        } else if let Some(rest) = inner.strip_prefix("voice_") {
            Ok(NodeId::voice(parse_ord(rest)?))
        } else {
            Err(bad())
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Character ordinal assigned by identity resolution, rendered `<character_k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharacterId(pub u64);

impl fmt::Display for CharacterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<character_{}>", self.0)
    }
}

impl Serialize for CharacterId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}
