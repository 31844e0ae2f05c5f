//! Entity-level input graphs, before token expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An input instance's graph: tokenized entities, typed triples between
/// entity indices, and an optional tokenized title.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub entities: Vec<Vec<String>>,
    pub triples: Vec<(usize, String, usize)>,
    pub title: Option<Vec<String>>,
}

impl EntityGraph {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entities.iter().enumerate() {
            if e.is_empty() {
                return Err(Error::Graph(format!("entity {i} has no tokens")));
            }
            if e.iter().any(|t| t.is_empty()) {
                return Err(Error::Graph(format!("entity {i} has an empty token")));
            }
        }
        if let Some(t) = &self.title {
            if t.iter().any(|tok| tok.is_empty()) {
                return Err(Error::Graph("title has an empty token".into()));
            }
        }
        for (k, (h, r, t)) in self.triples.iter().enumerate() {
            if *h >= self.entities.len() || *t >= self.entities.len() {
                return Err(Error::Graph(format!(
                    "triple {k} references entity {} but only {} exist",
                    (*h).max(*t),
                    self.entities.len()
                )));
            }
            if r.is_empty() {
                return Err(Error::Graph(format!("triple {k} has an empty relation label")));
            }
        }
        Ok(())
    }

    /// Sorted unique canonical relation labels used by this graph.
    pub fn relation_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.triples.iter().map(|(_, r, _)| r.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}
