//! Relation vocabulary shared by all token graphs of a corpus.
//!
//! Layout is fixed: inverse partners are adjacent (forward at even offsets),
//! and the self-loop relation is always the last entry. Ids index the
//! per-relation weight matrices of the local encoder, so the layout must be
//! stable across save and load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SELF_LOOP: &str = "self";
pub const INV_SUFFIX: &str = "-inv";
pub const LEVI_SUBJECT: &str = "levi-subject";
pub const LEVI_OBJECT: &str = "levi-object";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    Canonical,
    Inverse,
    SelfLoop,
    LeviSubject,
    LeviObject,
    LeviSubjectInv,
    LeviObjectInv,
}

impl RelationKind {
    /// Forward kinds are the ones counted as "edges" in corpus statistics;
    /// inverses and self-loops are derived closure edges.
    pub fn is_forward(self) -> bool {
        matches!(
            self,
            RelationKind::Canonical | RelationKind::LeviSubject | RelationKind::LeviObject
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVocab {
    entries: Vec<(String, RelationKind)>,
}

impl RelationVocab {
    /// Builds the non-Levi vocabulary from canonical labels: each label is
    /// followed by its `-inv` partner, then one trailing self-loop entry.
    /// Labels must be sorted, unique, and free of reserved names.
    pub fn from_canonical<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = Vec::new();
        let mut prev: Option<String> = None;
        for l in labels {
            let l = l.as_ref();
            if l.is_empty() {
                return Err(Error::Graph("empty relation label".into()));
            }
            if l == SELF_LOOP || l.ends_with(INV_SUFFIX) || l.starts_with("levi-") {
                return Err(Error::Graph(format!("relation label {l:?} uses a reserved form")));
            }
            if let Some(p) = &prev {
                if p.as_str() >= l {
                    return Err(Error::Graph(format!(
                        "relation labels must be sorted and unique: {p:?} then {l:?}"
                    )));
                }
            }
            entries.push((l.to_string(), RelationKind::Canonical));
            entries.push((format!("{l}{INV_SUFFIX}"), RelationKind::Inverse));
            prev = Some(l.to_string());
        }
        entries.push((SELF_LOOP.to_string(), RelationKind::SelfLoop));
        Ok(RelationVocab { entries })
    }

    /// The fixed Levi-mode vocabulary: subject/object links, their inverses,
    /// and the self-loop. Entity relation labels become node tokens instead.
    pub fn levi() -> Self {
        RelationVocab {
            entries: vec![
                (LEVI_SUBJECT.to_string(), RelationKind::LeviSubject),
                (format!("{LEVI_SUBJECT}{INV_SUFFIX}"), RelationKind::LeviSubjectInv),
                (LEVI_OBJECT.to_string(), RelationKind::LeviObject),
                (format!("{LEVI_OBJECT}{INV_SUFFIX}"), RelationKind::LeviObjectInv),
                (SELF_LOOP.to_string(), RelationKind::SelfLoop),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].0
    }

    pub fn kind(&self, id: usize) -> RelationKind {
        self.entries[id].1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    /// Id of the self-loop relation (always the last entry).
    pub fn self_id(&self) -> usize {
        self.entries.len() - 1
    }

    /// Inverse partner id. Self-loop is its own inverse.
    pub fn inverse_of(&self, id: usize) -> usize {
        match self.entries[id].1 {
            RelationKind::SelfLoop => id,
            RelationKind::Canonical
            | RelationKind::LeviSubject
            | RelationKind::LeviObject => id + 1,
            RelationKind::Inverse
            | RelationKind::LeviSubjectInv
            | RelationKind::LeviObjectInv => id - 1,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}
