//! Python bindings: graph building and inspection, dataset synthesis and
//! statistics, training, generation, corpus scoring, and the verification
//! suites, all behind one `kg2text` extension module.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use kg2text_core::analysis;
use kg2text_core::config::TrainConfig;
use kg2text_core::graph::{
    build_token_graph, connected_components, diameter, graph_stats, load_dataset, synth_raw,
    write_jsonl, EntityGraph, GraphOptions, RelationVocab, SynthParams, TokenGraph,
};
use kg2text_core::training::{self, checkpoint, TrainedModel};
use kg2text_core::verify::{self, Suite};

fn py_err(e: kg2text_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A token-level graph built from entities and typed triples.
#[pyclass]
struct Graph {
    inner: TokenGraph,
    components: usize,
    diameter: usize,
}

#[pymethods]
impl Graph {
    #[new]
    #[pyo3(signature = (entities, triples, title=None, levi=false))]
    fn new(
        entities: Vec<Vec<String>>,
        triples: Vec<(usize, String, usize)>,
        title: Option<Vec<String>>,
        levi: bool,
    ) -> PyResult<Self> {
        let g = EntityGraph { entities, triples, title };
        let relations = if levi {
            RelationVocab::levi()
        } else {
            RelationVocab::from_canonical(g.relation_labels()).map_err(py_err)?
        };
        let opts = GraphOptions { use_levi: levi, include_title: true };
        let inner = build_token_graph(&g, &relations, &opts).map_err(py_err)?;
        let components = connected_components(&inner);
        let diameter = diameter(&inner).map_err(py_err)?;
        Ok(Graph { inner, components, diameter })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edges.len()
    }

    #[getter]
    fn component_count(&self) -> usize {
        self.components
    }

    #[getter]
    fn diameter(&self) -> usize {
        self.diameter
    }

    /// Nodes as (token, origin, position) tuples, in node-id order.
    fn nodes(&self) -> Vec<(String, String, usize)> {
        self.inner
            .nodes
            .iter()
            .map(|n| (n.token.clone(), n.origin.to_string(), n.position))
            .collect()
    }

    /// Directed labeled edges as (source, relation, target) tuples.
    fn edges(&self) -> Vec<(usize, String, usize)> {
        self.inner
            .edges
            .iter()
            .map(|&(s, r, t)| (s, self.inner.relations.name(r).to_string(), t))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={}, components={}, diameter={})",
            self.inner.nodes.len(),
            self.inner.edges.len(),
            self.components,
            self.diameter
        )
    }
}

/// A trained graph-to-text model.
#[pyclass]
struct Model {
    inner: TrainedModel,
}

impl Model {
    fn options(&self) -> GraphOptions {
        let cfg = &self.inner.model.cfg;
        GraphOptions { use_levi: cfg.use_levi, include_title: cfg.include_title }
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = checkpoint::load(Path::new(path)).map_err(py_err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(Path::new(path), &self.inner).map_err(py_err)
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn architecture(&self) -> String {
        serde_json::to_value(self.inner.model.cfg.model.architecture)
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .unwrap_or_default()
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.model.cfg)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Beam-decodes every instance in the dataset; one string per instance.
    fn generate(&self, data_path: &str) -> PyResult<Vec<String>> {
        let cfg = &self.inner.model.cfg;
        let corpus = load_dataset(Path::new(data_path), &self.options()).map_err(py_err)?;
        let mut out = Vec::with_capacity(corpus.instances.len());
        for inst in &corpus.instances {
            let prep = self.inner.model.prepare(inst).map_err(py_err)?;
            let tokens = self
                .inner
                .model
                .generate_text(
                    &self.inner.store,
                    &prep,
                    cfg.beam_size,
                    cfg.length_alpha,
                    cfg.max_decode_len,
                )
                .map_err(py_err)?;
            out.push(tokens.join(" "));
        }
        Ok(out)
    }

    /// Corpus score of this model's outputs against the dataset references.
    fn score(&self, data_path: &str) -> PyResult<f64> {
        let cfg = &self.inner.model.cfg;
        let corpus = load_dataset(Path::new(data_path), &self.options()).map_err(py_err)?;
        let report = training::evaluate(&self.inner, &corpus, cfg.beam_size, cfg.length_alpha)
            .map_err(py_err)?;
        Ok(report.bleu)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(architecture={:?}, step={}, params={})",
            self.architecture(),
            self.inner.step,
            self.inner.param_count()
        )
    }
}

/// Trains a model on a JSONL dataset. The config is the same strict JSON the
/// command-line `train` subcommand accepts; returns the trained model and
/// the per-step loss curve.
#[pyfunction]
fn train(config_json: &str, data_path: &str) -> PyResult<(Model, Vec<f64>)> {
    let cfg = TrainConfig::from_json(config_json).map_err(py_err)?;
    let opts = GraphOptions { use_levi: cfg.use_levi, include_title: cfg.include_title };
    let corpus = load_dataset(Path::new(data_path), &opts).map_err(py_err)?;
    let (trained, losses) = training::train(&cfg, &corpus).map_err(py_err)?;
    Ok((Model { inner: trained }, losses))
}

/// Writes a deterministic synthetic dataset (JSONL) of small entity graphs
/// with template verbalizations.
#[pyfunction]
#[pyo3(signature = (path, seed, instances))]
fn synth_dataset(path: &str, seed: u64, instances: usize) -> PyResult<()> {
    let raws = synth_raw(seed, instances, &SynthParams::default()).map_err(py_err)?;
    write_jsonl(Path::new(path), &raws).map_err(py_err)
}

/// Corpus statistics over a JSONL dataset, as a dict.
#[pyfunction]
#[pyo3(signature = (path, levi=false, include_title=true))]
fn dataset_stats<'py>(
    py: Python<'py>,
    path: &str,
    levi: bool,
    include_title: bool,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let opts = GraphOptions { use_levi: levi, include_title };
    let corpus = load_dataset(Path::new(path), &opts).map_err(py_err)?;
    let row = graph_stats(&corpus).map_err(py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("instances", row.instances)?;
    dict.set_item("relations", row.relation_count)?;
    dict.set_item("avg_nodes", row.avg_nodes)?;
    dict.set_item("avg_edges", row.avg_edges)?;
    dict.set_item("avg_components", row.avg_components)?;
    dict.set_item("avg_target_len", row.avg_target_len)?;
    Ok(dict)
}

/// Corpus-level n-gram overlap score in [0, 100], smoothing-free.
#[pyfunction]
#[pyo3(signature = (candidates, references, max_order=4))]
fn bleu(candidates: Vec<Vec<String>>, references: Vec<Vec<String>>, max_order: usize) -> PyResult<f64> {
    analysis::bleu(&candidates, &references, max_order).map_err(py_err)
}

/// Runs one verification suite ("grad", "invariants", or "oracle");
/// returns (name, passed, detail) per check.
#[pyfunction]
#[pyo3(signature = (suite, seed=1))]
fn run_suite(suite: &str, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let suite = Suite::parse(suite).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown suite {suite:?}; expected grad, invariants, or oracle"
        ))
    })?;
    let checks = verify::run_suite(suite, seed).map_err(py_err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn kg2text(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
