//! Connectivity metrics over token graphs. All distances treat edges as
//! undirected and ignore self-loops.

use std::collections::VecDeque;

use super::token_graph::TokenGraph;
use crate::error::{Error, Result};

/// BFS distances from `src` over undirected adjacency lists; `None` marks
/// unreachable nodes.
pub fn bfs_distances(adj: &[Vec<usize>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Number of weakly connected components.
pub fn connected_components(g: &TokenGraph) -> usize {
    let adj = g.adjacency();
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
    }
    count
}

/// Largest eccentricity over all components: the longest shortest path
/// between any two mutually reachable nodes. A single isolated node has
/// diameter 0; the empty graph is an error.
pub fn diameter(g: &TokenGraph) -> Result<usize> {
    if g.nodes.is_empty() {
        return Err(Error::EmptySupport("diameter of an empty graph".into()));
    }
    let adj = g.adjacency();
    let mut best = 0;
    for src in 0..adj.len() {
        for d in bfs_distances(&adj, src).into_iter().flatten() {
            best = best.max(d);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::entity::EntityGraph;
    use crate::graph::relations::RelationVocab;
    use crate::graph::token_graph::{build_token_graph, GraphOptions};

    fn chain() -> TokenGraph {
        // a-b via r1, b-c via r2: a path of three single-token entities
        let g = EntityGraph {
            entities: vec![vec!["a".into()], vec!["b".into()], vec!["c".into()]],
            triples: vec![(0, "r1".into(), 1), (1, "r2".into(), 2)],
            title: None,
        };
        let rels = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        build_token_graph(&g, &rels, &GraphOptions::default()).unwrap()
    }

    #[test]
    fn chain_has_one_component_and_diameter_two() {
        let tg = chain();
        assert_eq!(connected_components(&tg), 1);
        assert_eq!(diameter(&tg).unwrap(), 2);
    }

    #[test]
    fn isolated_title_token_adds_a_component() {
        let g = EntityGraph {
            entities: vec![vec!["a".into()], vec!["b".into()]],
            triples: vec![(0, "r".into(), 1)],
            title: Some(vec!["t".into()]),
        };
        let rels = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &rels, &GraphOptions::default()).unwrap();
        assert_eq!(connected_components(&tg), 2);
        // diameter ignores the unreachable pair and the self-loops
        assert_eq!(diameter(&tg).unwrap(), 1);
    }
}
