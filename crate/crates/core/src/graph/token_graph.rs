//! Token-level graph construction from entity graphs.
//!
//! Every entity token becomes a node; an entity-level triple expands to
//! all-pairs token edges (or, in Levi mode, routes through a fresh relation
//! node per triple occurrence). Inverse edges and self-loops are always
//! added; title tokens are isolated nodes reachable only by self-loop and by
//! the global encoder.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::entity::EntityGraph;
use super::relations::{RelationVocab, LEVI_OBJECT, LEVI_SUBJECT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOrigin {
    /// Token of the entity with this index.
    Entity(usize),
    /// Title token.
    Title,
    /// Levi relation node minted for the triple with this index.
    Relation(usize),
}

impl fmt::Display for NodeOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeOrigin::Entity(k) => write!(f, "entity:{k}"),
            NodeOrigin::Title => write!(f, "title"),
            NodeOrigin::Relation(k) => write!(f, "relation:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenNode {
    pub token: String,
    pub origin: NodeOrigin,
    /// Token position within its origin; restarts at 0 for every entity.
    pub position: usize,
}

/// Directed labeled edge (source, relation id, target).
pub type Edge = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGraph {
    pub nodes: Vec<TokenNode>,
    /// Sorted by (source, relation, target); free of duplicates.
    pub edges: Vec<Edge>,
    pub relations: RelationVocab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub use_levi: bool,
    pub include_title: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            use_levi: false,
            include_title: true,
        }
    }
}

pub fn build_token_graph(
    g: &EntityGraph,
    relations: &RelationVocab,
    opts: &GraphOptions,
) -> Result<TokenGraph> {
    g.validate()?;

    let mut nodes = Vec::new();
    let mut entity_range = Vec::with_capacity(g.entities.len());
    for (e_idx, tokens) in g.entities.iter().enumerate() {
        let start = nodes.len();
        for (position, token) in tokens.iter().enumerate() {
            nodes.push(TokenNode {
                token: token.clone(),
                origin: NodeOrigin::Entity(e_idx),
                position,
            });
        }
        entity_range.push(start..nodes.len());
    }
    if opts.include_title {
        if let Some(title) = &g.title {
            for (position, token) in title.iter().enumerate() {
                nodes.push(TokenNode {
                    token: token.clone(),
                    origin: NodeOrigin::Title,
                    position,
                });
            }
        }
    }

    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    if opts.use_levi {
        let subj = relations
            .id(LEVI_SUBJECT)
            .ok_or_else(|| Error::Graph("relation vocabulary is not in Levi form".into()))?;
        let subj_inv = relations.inverse_of(subj);
        let obj = relations
            .id(LEVI_OBJECT)
            .ok_or_else(|| Error::Graph("relation vocabulary is not in Levi form".into()))?;
        let obj_inv = relations.inverse_of(obj);
        for (t_idx, (h, label, t)) in g.triples.iter().enumerate() {
            let rn = nodes.len();
            nodes.push(TokenNode {
                token: label.clone(),
                origin: NodeOrigin::Relation(t_idx),
                position: 0,
            });
            for u in entity_range[*h].clone() {
                edges.insert((u, subj, rn));
                edges.insert((rn, subj_inv, u));
            }
            for v in entity_range[*t].clone() {
                edges.insert((rn, obj, v));
                edges.insert((v, obj_inv, rn));
            }
        }
    } else {
        for (h, label, t) in &g.triples {
            let rel = relations.id(label).ok_or_else(|| {
                Error::Graph(format!("relation {label:?} missing from the vocabulary"))
            })?;
            let inv = relations.inverse_of(rel);
            for u in entity_range[*h].clone() {
                for v in entity_range[*t].clone() {
                    edges.insert((u, rel, v));
                    edges.insert((v, inv, u));
                }
            }
        }
    }
    let self_id = relations.self_id();
    for i in 0..nodes.len() {
        edges.insert((i, self_id, i));
    }

    if nodes.is_empty() {
        return Err(Error::Graph("token graph has no nodes".into()));
    }
    Ok(TokenGraph {
        nodes,
        edges: edges.into_iter().collect(),
        relations: relations.clone(),
    })
}

impl TokenGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Count of forward edges (canonical or Levi subject/object); inverses
    /// and self-loops are closure artifacts and excluded.
    pub fn forward_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|(_, r, _)| self.relations.kind(*r).is_forward())
            .count()
    }

    /// Stable plain-text listing: nodes then edges, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            out.push_str(&format!("node\t{}\t{}\t{}\t{}\n", i, n.token, n.origin, n.position));
        }
        for (u, r, v) in &self.edges {
            out.push_str(&format!("edge\t{}\t{}\t{}\n", u, self.relations.name(*r), v));
        }
        out
    }

    /// Undirected adjacency lists, self-loops dropped, no duplicates.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes.len()];
        for (u, _, v) in &self.edges {
            if u != v {
                adj[*u].insert(*v);
                adj[*v].insert(*u);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}
