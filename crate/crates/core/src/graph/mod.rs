//! Graph preparation: entity graphs in, token-level graphs out, plus corpus
//! ingestion, connectivity metrics, and synthetic data.

pub mod dataset;
pub mod entity;
pub mod index;
pub mod metrics;
pub mod relations;
pub mod token_graph;
pub mod vocab;

pub use dataset::{
    corpus_from_raw, graph_stats, load_dataset, synth_corpus, synth_raw, write_jsonl, Corpus,
    Instance, RawInstance, StatsRow, SynthParams,
};
pub use entity::EntityGraph;
pub use index::GraphIndex;
pub use metrics::{bfs_distances, connected_components, diameter};
pub use relations::{RelationKind, RelationVocab};
pub use token_graph::{build_token_graph, GraphOptions, NodeOrigin, TokenGraph, TokenNode};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};
