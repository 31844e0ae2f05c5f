//! JSONL corpus ingestion, summary statistics, and synthetic corpora.
//!
//! Dataset schema, one JSON object per line, unknown fields rejected:
//! `{"title": ["tok", ...]?, "entities": [["tok", ...], ...],
//!   "triples": [[head_idx, "relation", tail_idx], ...], "text": ["tok", ...]}`

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::entity::EntityGraph;
use super::relations::RelationVocab;
use super::token_graph::{build_token_graph, GraphOptions, TokenGraph};
use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<Vec<String>>,
    pub entities: Vec<Vec<String>>,
    pub triples: Vec<(usize, String, usize)>,
    pub text: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: TokenGraph,
    pub target: Vec<String>,
    /// Number of entity-level triples the graph was built from. The token
    /// graph itself only keeps expanded token edges, so this is recorded
    /// separately for reporting.
    pub triple_count: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub relations: RelationVocab,
    /// Sorted unique tokens appearing on graph nodes.
    pub node_tokens: Vec<String>,
    /// Sorted unique tokens appearing in targets.
    pub target_tokens: Vec<String>,
    pub opts: GraphOptions,
}

pub fn load_dataset(path: &Path, opts: &GraphOptions) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut raws = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawInstance = serde_json::from_str(line).map_err(|e| Error::Ingest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        raws.push((i + 1, raw));
    }
    corpus_from_raw(raws, opts)
}

/// Shared corpus construction for loaded and synthesized instances. The
/// relation vocabulary covers the whole corpus so relation ids are stable
/// across instances.
pub fn corpus_from_raw(raws: Vec<(usize, RawInstance)>, opts: &GraphOptions) -> Result<Corpus> {
    let mut labels = BTreeSet::new();
    for (_, r) in &raws {
        for (_, l, _) in &r.triples {
            labels.insert(l.clone());
        }
    }
    let relations = if opts.use_levi {
        RelationVocab::levi()
    } else {
        RelationVocab::from_canonical(&labels)?
    };

    let mut instances = Vec::with_capacity(raws.len());
    let mut node_tokens = BTreeSet::new();
    let mut target_tokens = BTreeSet::new();
    for (line, raw) in raws {
        if raw.text.is_empty() || raw.text.iter().any(|t| t.is_empty()) {
            return Err(Error::Ingest {
                line,
                msg: "target text must be a nonempty list of nonempty tokens".into(),
            });
        }
        let triple_count = raw.triples.len();
        let eg = EntityGraph {
            entities: raw.entities,
            triples: raw.triples,
            title: raw.title,
        };
        let graph = build_token_graph(&eg, &relations, opts).map_err(|e| Error::Ingest {
            line,
            msg: e.to_string(),
        })?;
        for n in &graph.nodes {
            node_tokens.insert(n.token.clone());
        }
        for t in &raw.text {
            target_tokens.insert(t.clone());
        }
        instances.push(Instance {
            graph,
            target: raw.text,
            triple_count,
        });
    }
    Ok(Corpus {
        instances,
        relations,
        node_tokens: node_tokens.into_iter().collect(),
        target_tokens: target_tokens.into_iter().collect(),
        opts: *opts,
    })
}

pub fn write_jsonl(path: &Path, raws: &[RawInstance]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in raws {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

// ---- statistics ----

/// Corpus means in the style of a dataset summary table. Edge counts are
/// forward edges only (inverses and self-loops excluded).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub instances: usize,
    pub relation_count: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub avg_components: f64,
    pub avg_target_len: f64,
}

pub fn graph_stats(corpus: &Corpus) -> Result<StatsRow> {
    if corpus.instances.is_empty() {
        return Err(Error::EmptySupport("graph_stats over an empty corpus".into()));
    }
    let n = corpus.instances.len() as f64;
    let mut nodes = 0.0;
    let mut edges = 0.0;
    let mut comps = 0.0;
    let mut len = 0.0;
    for inst in &corpus.instances {
        nodes += inst.graph.node_count() as f64;
        edges += inst.graph.forward_edge_count() as f64;
        comps += super::metrics::connected_components(&inst.graph) as f64;
        len += inst.target.len() as f64;
    }
    Ok(StatsRow {
        instances: corpus.instances.len(),
        relation_count: corpus.relations.len(),
        avg_nodes: nodes / n,
        avg_edges: edges / n,
        avg_components: comps / n,
        avg_target_len: len / n,
    })
}

// ---- synthetic corpus ----

/// Size ranges for synthetic instances; all ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub entities: (usize, usize),
    pub tokens_per_entity: (usize, usize),
    pub triples: (usize, usize),
    pub relation_count: usize,
    pub word_pool: usize,
    pub with_title: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            entities: (2, 4),
            tokens_per_entity: (1, 2),
            triples: (1, 3),
            relation_count: 3,
            word_pool: 15,
            with_title: false,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let ok = self.entities.0 >= 2
            && self.entities.0 <= self.entities.1
            && self.tokens_per_entity.0 >= 1
            && self.tokens_per_entity.0 <= self.tokens_per_entity.1
            && self.triples.0 >= 1
            && self.triples.0 <= self.triples.1
            && self.relation_count >= 1
            && self.word_pool >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid synth parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Deterministic synthetic instances: random small entity graphs whose
/// target text is the template verbalization "head tokens, relation label,
/// tail tokens, period" per triple, in triple order. Instance `i` depends
/// only on `(seed, i)`, not on `n`.
pub fn synth_raw(seed: u64, n: usize, p: &SynthParams) -> Result<Vec<RawInstance>> {
    p.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, "synth", &[i as u64]);
        let n_e = r.gen_range(p.entities.0..=p.entities.1);
        let entities: Vec<Vec<String>> = (0..n_e)
            .map(|_| {
                let k = r.gen_range(p.tokens_per_entity.0..=p.tokens_per_entity.1);
                (0..k).map(|_| format!("w{:02}", r.gen_range(0..p.word_pool))).collect()
            })
            .collect();

        let want = r.gen_range(p.triples.0..=p.triples.1);
        let combos = n_e * (n_e - 1) * p.relation_count;
        let want = want.min(combos);
        let mut triples: Vec<(usize, String, usize)> = Vec::with_capacity(want);
        let mut seen = BTreeSet::new();
        while triples.len() < want {
            let h = r.gen_range(0..n_e);
            let mut t = r.gen_range(0..n_e - 1);
            if t >= h {
                t += 1;
            }
            let rel = r.gen_range(0..p.relation_count);
            if seen.insert((h, rel, t)) {
                triples.push((h, format!("r{rel}"), t));
            }
        }

        let mut text = Vec::new();
        for (h, label, t) in &triples {
            text.extend(entities[*h].iter().cloned());
            text.push(label.clone());
            text.extend(entities[*t].iter().cloned());
            text.push(".".to_string());
        }
        let title = p.with_title.then(|| vec![format!("t{}", i % 7)]);
        out.push(RawInstance {
            title,
            entities,
            triples,
            text,
        });
    }
    Ok(out)
}

pub fn synth_corpus(seed: u64, n: usize, p: &SynthParams, opts: &GraphOptions) -> Result<Corpus> {
    let raws = synth_raw(seed, n, p)?;
    corpus_from_raw(raws.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(), opts)
}
