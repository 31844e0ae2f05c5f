//! CSR view of a token graph for the local encoder: incoming edges grouped
//! by target node, so attention support for node v is exactly N(v).

use super::token_graph::TokenGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    pub n: usize,
    /// Segment bounds into `src`/`rel`, length n + 1. Segment v holds the
    /// incoming edges of node v; self-loops guarantee every segment is
    /// nonempty.
    pub offsets: Vec<usize>,
    pub src: Vec<usize>,
    pub rel: Vec<usize>,
}

impl GraphIndex {
    pub fn new(g: &TokenGraph) -> Self {
        let n = g.node_count();
        let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (u, r, v) in &g.edges {
            incoming[*v].push((*r, *u));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut src = Vec::with_capacity(g.edges.len());
        let mut rel = Vec::with_capacity(g.edges.len());
        offsets.push(0);
        for list in &mut incoming {
            list.sort_unstable();
            for (r, u) in list.iter() {
                rel.push(*r);
                src.push(*u);
            }
            offsets.push(src.len());
        }
        GraphIndex { n, offsets, src, rel }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::entity::EntityGraph;
    use crate::graph::relations::RelationVocab;
    use crate::graph::token_graph::{build_token_graph, GraphOptions};

    #[test]
    fn segments_cover_incoming_edges() {
        let g = EntityGraph {
            entities: vec![vec!["a".into()], vec!["b".into(), "c".into()]],
            triples: vec![(0, "r".into(), 1)],
            title: None,
        };
        let rels = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &rels, &GraphOptions::default()).unwrap();
        let idx = GraphIndex::new(&tg);
        assert_eq!(idx.n, 3);
        assert_eq!(idx.edge_count(), tg.edges.len());
        // node 0 receives: self-loop + two inverse edges from b, c
        assert_eq!(idx.degree(0), 3);
        // nodes 1, 2 receive: self-loop + canonical edge from a
        assert_eq!(idx.degree(1), 2);
        assert_eq!(idx.degree(2), 2);
        for v in 0..idx.n {
            assert!(idx.degree(v) >= 1);
        }
    }
}
