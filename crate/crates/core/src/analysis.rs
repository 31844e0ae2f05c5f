//! Corpus metrics and structural reports: corpus BLEU, attention-distance
//! profiling, score binning, and output-length histograms.
//!
//! Everything here is a pure function over finished outputs. Reports render
//! to TSV with one header line; `serde::Serialize` on the report types
//! covers JSON emission.

use std::collections::HashMap;

use serde::Serialize;

use crate::encoder::ForwardTrace;
use crate::error::{Error, Result};
use crate::graph::{bfs_distances, Instance, TokenGraph};

/// Standard BLEU order cap.
pub const BLEU_MAX_ORDER: usize = 4;

/// Histogram bin width for output/reference length distributions.
pub const LENGTH_BIN_WIDTH: usize = 10;

/// Corpus-level BLEU in [0, 100], smoothing off, uniform n-gram weights,
/// multiplicative brevity penalty.
///
/// Orders with zero candidate n-grams across the whole corpus (every
/// candidate shorter than n) are dropped and the uniform weights renormalize
/// over the remaining orders; an order with candidate n-grams but zero
/// matches sends the score to 0. Tokens compare verbatim, so this is
/// tokenized BLEU.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "bleu needs one reference per candidate; got {} candidates and {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::EmptySupport("bleu over an empty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::Invalid("bleu max_n must be at least 1".into()));
    }

    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let mut cand_len: u64 = 0;
    let mut ref_len: u64 = 0;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len() as u64;
        ref_len += reference.len() as u64;
        for n in 1..=max_n {
            if cand.len() < n {
                continue;
            }
            total[n - 1] += (cand.len() - n + 1) as u64;
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            for gram in reference.windows(n) {
                *ref_counts.entry(gram).or_insert(0) += 1;
            }
            let mut cand_counts: HashMap<&[String], u64> = HashMap::new();
            for gram in cand.windows(n) {
                *cand_counts.entry(gram).or_insert(0) += 1;
            }
            for (gram, count) in cand_counts {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }

    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut active = 0u32;
    for n in 0..max_n {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        active += 1;
    }
    // cand_len > 0 guarantees order 1 is active
    let mean_log_precision = log_sum / f64::from(active);
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * brevity * mean_log_precision.exp())
}

/// One (layer, head, query) observation: the key node receiving maximum
/// attention and the shortest-path edge count between the two. `None`
/// distance marks a pair in different components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistanceRecord {
    pub layer: usize,
    pub head: usize,
    pub query: usize,
    pub key: usize,
    pub distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDistanceSummary {
    pub layer: usize,
    /// Mean over finite distances only; `None` when every pair crosses
    /// components.
    pub mean_distance: Option<f64>,
    pub infinite_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttentionDistance {
    pub records: Vec<DistanceRecord>,
    pub per_layer: Vec<LayerDistanceSummary>,
}

/// For every global-attention row in `trace`, finds the key with maximum
/// weight (ties resolve to the lowest key index) and measures the undirected
/// BFS distance from query to key on `graph`. Self-loops never shorten a
/// path because adjacency drops them.
pub fn attention_distance(trace: &ForwardTrace, graph: &TokenGraph) -> Result<AttentionDistance> {
    if trace.global.is_empty() {
        return Err(Error::Invalid(
            "attention distance needs at least one global encoder layer".into(),
        ));
    }
    let n = graph.nodes.len();
    let adj = graph.adjacency();
    let mut dist_from: Vec<Option<Vec<Option<usize>>>> = vec![None; n];

    let mut records = Vec::new();
    for rec in &trace.global {
        if rec.weights.shape() != [n, n] {
            return Err(Error::shape(
                "attention_distance",
                format!(
                    "layer {} head {} has weight shape {:?} for a {}-node graph",
                    rec.layer,
                    rec.head,
                    rec.weights.shape(),
                    n
                ),
            ));
        }
        let w = rec.weights.data();
        for query in 0..n {
            let row = &w[query * n..(query + 1) * n];
            let mut key = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[key] {
                    key = j;
                }
            }
            let dists =
                dist_from[query].get_or_insert_with(|| bfs_distances(&adj, query));
            records.push(DistanceRecord {
                layer: rec.layer,
                head: rec.head,
                query,
                key,
                distance: dists[key],
            });
        }
    }

    let mut layers: Vec<usize> = records.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let per_layer = layers
        .into_iter()
        .map(|layer| {
            let mut finite_sum = 0.0;
            let mut finite = 0usize;
            let mut infinite = 0usize;
            let mut count = 0usize;
            for r in records.iter().filter(|r| r.layer == layer) {
                count += 1;
                match r.distance {
                    Some(d) => {
                        finite_sum += d as f64;
                        finite += 1;
                    }
                    None => infinite += 1,
                }
            }
            LayerDistanceSummary {
                layer,
                mean_distance: (finite > 0).then(|| finite_sum / finite as f64),
                infinite_fraction: infinite as f64 / count as f64,
            }
        })
        .collect();

    Ok(AttentionDistance { records, per_layer })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinBy {
    NodeCount,
    Diameter,
    TripleCount,
    SentenceCount,
}

impl BinBy {
    pub fn label(self) -> &'static str {
        match self {
            BinBy::NodeCount => "node_count",
            BinBy::Diameter => "diameter",
            BinBy::TripleCount => "triple_count",
            BinBy::SentenceCount => "sentence_count",
        }
    }
}

fn bin_value(inst: &Instance, by: BinBy) -> Result<usize> {
    Ok(match by {
        BinBy::NodeCount => inst.graph.node_count(),
        BinBy::Diameter => crate::graph::diameter(&inst.graph)?,
        BinBy::TripleCount => inst.triple_count,
        BinBy::SentenceCount => inst.target.iter().filter(|t| t.as_str() == ".").count(),
    })
}

/// One half-open score bin `[lo, hi)`; the last bin is unbounded
/// (`hi == None`). Empty bins carry `bleu == None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    pub bleu: Option<f64>,
}

/// Per-bin corpus BLEU. `boundaries` are strictly increasing upper edges:
/// `[a, b]` makes bins `[0,a)`, `[a,b)`, `[b,∞)`; an empty list makes one
/// all-covering bin. References come from each instance's target.
pub fn binned_scores(
    instances: &[Instance],
    candidates: &[Vec<String>],
    bin_by: BinBy,
    boundaries: &[usize],
) -> Result<Vec<BinRow>> {
    if instances.len() != candidates.len() {
        return Err(Error::Invalid(format!(
            "binned scores need one candidate per instance; got {} instances and {} candidates",
            instances.len(),
            candidates.len()
        )));
    }
    if instances.is_empty() {
        return Err(Error::EmptySupport("binned scores over an empty corpus".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!(
            "bin boundaries must be strictly increasing, got {boundaries:?}"
        )));
    }

    let n_bins = boundaries.len() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, inst) in instances.iter().enumerate() {
        let v = bin_value(inst, bin_by)?;
        members[boundaries.partition_point(|&edge| edge <= v)].push(i);
    }

    let mut rows = Vec::with_capacity(n_bins);
    for (b, idxs) in members.iter().enumerate() {
        let lo = if b == 0 { 0 } else { boundaries[b - 1] };
        let hi = boundaries.get(b).copied();
        let score = if idxs.is_empty() {
            None
        } else {
            let cands: Vec<Vec<String>> = idxs.iter().map(|&i| candidates[i].clone()).collect();
            let refs: Vec<Vec<String>> = idxs.iter().map(|&i| instances[i].target.clone()).collect();
            Some(bleu(&cands, &refs, BLEU_MAX_ORDER)?)
        };
        rows.push(BinRow {
            lo,
            hi,
            count: idxs.len(),
            bleu: score,
        });
    }
    Ok(rows)
}

/// Fixed-width token-count histogram; bin b counts sequences with length in
/// `[b*width, (b+1)*width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub bin_width: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(seqs: &[Vec<String>], bin_width: usize) -> Histogram {
        let mut counts: Vec<usize> = Vec::new();
        for s in seqs {
            let b = s.len() / bin_width;
            if counts.len() <= b {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Histogram { bin_width, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Output-length versus reference-length histograms at [`LENGTH_BIN_WIDTH`].
pub fn length_distribution(
    outputs: &[Vec<String>],
    references: &[Vec<String>],
) -> (Histogram, Histogram) {
    (
        Histogram::build(outputs, LENGTH_BIN_WIDTH),
        Histogram::build(references, LENGTH_BIN_WIDTH),
    )
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map_or_else(|| "inf".into(), |x| x.to_string())
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

pub fn bins_tsv(rows: &[BinRow]) -> String {
    let mut out = String::from("lo\thi\tcount\tbleu\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.lo,
            fmt_opt_usize(r.hi),
            r.count,
            fmt_opt_f64(r.bleu)
        ));
    }
    out
}

pub fn lengths_tsv(outputs: &Histogram, references: &Histogram) -> String {
    let width = outputs.bin_width;
    let mut out = String::from("lo\thi\toutputs\treferences\n");
    let n = outputs.counts.len().max(references.counts.len());
    for b in 0..n {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            b * width,
            (b + 1) * width,
            outputs.counts.get(b).copied().unwrap_or(0),
            references.counts.get(b).copied().unwrap_or(0)
        ));
    }
    out
}

pub fn attention_records_tsv(report: &AttentionDistance) -> String {
    let mut out = String::from("layer\thead\tquery\tkey\tdistance\n");
    for r in &report.records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.layer,
            r.head,
            r.query,
            r.key,
            fmt_opt_usize(r.distance)
        ));
    }
    out
}

pub fn attention_summary_tsv(report: &AttentionDistance) -> String {
    let mut out = String::from("layer\tmean_distance\tinfinite_fraction\n");
    for s in &report.per_layer {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            s.layer,
            fmt_opt_f64(s.mean_distance),
            s.infinite_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::AttentionRecord;
    use crate::graph::{
        build_token_graph, EntityGraph, GraphOptions, RelationVocab,
    };
    use crate::numerics::rng;
    use crate::numerics::Tensor;
    use rand::Rng;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn hand_case_short_candidate_scores_seventy_one_point_six_five() {
        // one pair, all precisions 1, order 4 empty, brevity exp(1 - 4/3)
        let score = bleu(
            &[toks(&["the", "cat", "sat"])],
            &[toks(&["the", "cat", "sat", "down"])],
            4,
        )
        .unwrap();
        assert!((score - 71.65313105737893).abs() < 1e-9, "got {score}");
    }

    #[test]
    fn perfect_match_is_exactly_one_hundred() {
        let refs = vec![toks(&["a", "b", "c"]), toks(&["d", "e"])];
        assert_eq!(bleu(&refs, &refs, 4).unwrap(), 100.0);
    }

    #[test]
    fn disjoint_unigrams_score_zero() {
        let score = bleu(&[toks(&["x", "y"])], &[toks(&["a", "b"])], 4).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let score = bleu(&[vec![]], &[toks(&["a"])], 4).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn dropped_orders_renormalize_the_weights() {
        // both candidates have length 2, so orders 3 and 4 carry no mass:
        // p1 = 3/4, p2 = 1/2, BP = 1, score = 100 * sqrt(3/8)
        let cands = vec![toks(&["a", "b"]), toks(&["x", "y"])];
        let refs = vec![toks(&["a", "b"]), toks(&["x", "z"])];
        let score = bleu(&cands, &refs, 4).unwrap();
        assert!((score - 61.23724356957945).abs() < 1e-9, "got {score}");
    }

    #[test]
    fn corpus_order_permutation_leaves_the_score_unchanged() {
        let cands = vec![
            toks(&["a", "b", "c"]),
            toks(&["d", "d"]),
            toks(&["e", "f", "g", "h"]),
        ];
        let refs = vec![
            toks(&["a", "b", "x"]),
            toks(&["d", "d", "d"]),
            toks(&["e", "f", "h", "g"]),
        ];
        let forward = bleu(&cands, &refs, 4).unwrap();
        let rc: Vec<_> = cands.iter().rev().cloned().collect();
        let rr: Vec<_> = refs.iter().rev().cloned().collect();
        assert_eq!(forward, bleu(&rc, &rr, 4).unwrap());
    }

    #[test]
    fn near_misses_stay_below_one_hundred() {
        for (c, r) in [
            (toks(&["a", "b"]), toks(&["b", "a"])),
            (toks(&["a"]), toks(&["a", "a"])),
            (toks(&["a", "a"]), toks(&["a"])),
        ] {
            let score = bleu(&[c.clone()], &[r.clone()], 4).unwrap();
            assert!(score < 100.0, "{c:?} vs {r:?} gave {score}");
        }
    }

    #[test]
    fn mismatched_or_empty_corpora_are_rejected() {
        assert!(bleu(&[toks(&["a"])], &[], 4).is_err());
        assert!(bleu(&[], &[], 4).is_err());
        assert!(bleu(&[toks(&["a"])], &[toks(&["a"])], 0).is_err());
    }

    fn single_token_chain(n: usize) -> TokenGraph {
        let entities: Vec<Vec<String>> = (0..n).map(|i| vec![format!("t{i}")]).collect();
        let triples = (0..n - 1).map(|i| (i, "r".to_string(), i + 1)).collect();
        let g = EntityGraph {
            entities,
            triples,
            title: None,
        };
        let rels = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        build_token_graph(&g, &rels, &GraphOptions::default()).unwrap()
    }

    fn record(layer: usize, head: usize, rows: Vec<Vec<f64>>) -> AttentionRecord {
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        AttentionRecord {
            layer,
            head,
            weights: Tensor::new(vec![n, n], flat).unwrap(),
        }
    }

    #[test]
    fn single_node_graph_has_distance_zero() {
        let g = single_token_chain(1);
        let trace = ForwardTrace {
            global: vec![record(0, 0, vec![vec![1.0]])],
            local: vec![],
        };
        let report = attention_distance(&trace, &g).unwrap();
        assert_eq!(
            report.records,
            vec![DistanceRecord {
                layer: 0,
                head: 0,
                query: 0,
                key: 0,
                distance: Some(0)
            }]
        );
        assert_eq!(report.per_layer[0].mean_distance, Some(0.0));
        assert_eq!(report.per_layer[0].infinite_fraction, 0.0);
    }

    #[test]
    fn cross_component_attention_is_recorded_as_infinite() {
        // nodes: a, b (connected by r), plus an isolated title token
        let g = EntityGraph {
            entities: vec![vec!["a".into()], vec!["b".into()]],
            triples: vec![(0, "r".into(), 1)],
            title: Some(vec!["t".into()]),
        };
        let rels = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &rels, &GraphOptions::default()).unwrap();
        assert_eq!(tg.node_count(), 3);

        // every query's max lands on the title node (index 2), itself excepted
        let trace = ForwardTrace {
            global: vec![record(0, 0, vec![
                vec![0.1, 0.2, 0.7],
                vec![0.3, 0.1, 0.6],
                vec![0.2, 0.7, 0.1],
            ])],
            local: vec![],
        };
        let report = attention_distance(&trace, &tg).unwrap();
        assert_eq!(report.records[0].distance, None);
        assert_eq!(report.records[1].distance, None);
        assert_eq!(report.records[2].distance, None);
        let s = &report.per_layer[0];
        assert_eq!(s.mean_distance, None);
        assert_eq!(s.infinite_fraction, 1.0);
    }

    #[test]
    fn path_graph_distances_match_the_index_gap() {
        // on a path graph the BFS distance between nodes i and j is |i - j|
        let n = 6;
        let g = single_token_chain(n);
        let mut r = rng::stream(7, "test.attention-distance", &[]);
        let mut global = Vec::new();
        for layer in 0..2 {
            for head in 0..2 {
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| r.gen::<f64>()).collect())
                    .collect();
                global.push(record(layer, head, rows));
            }
        }
        let trace = ForwardTrace { global, local: vec![] };
        let report = attention_distance(&trace, &g).unwrap();
        assert_eq!(report.records.len(), 2 * 2 * n);
        for rec in &report.records {
            let expected = rec.query.abs_diff(rec.key);
            assert_eq!(rec.distance, Some(expected), "record {rec:?}");
            let row = &trace.global[rec.layer * 2 + rec.head].weights.data()
                [rec.query * n..(rec.query + 1) * n];
            assert!(row.iter().all(|&x| x <= row[rec.key]));
        }
        for s in &report.per_layer {
            assert_eq!(s.infinite_fraction, 0.0);
            assert!(s.mean_distance.unwrap() <= (n - 1) as f64);
        }
    }

    #[test]
    fn attention_ties_resolve_to_the_lowest_key() {
        let g = single_token_chain(3);
        let trace = ForwardTrace {
            global: vec![record(0, 0, vec![
                vec![0.4, 0.4, 0.2],
                vec![0.2, 0.4, 0.4],
                vec![1.0 / 3.0; 3],
            ])],
            local: vec![],
        };
        let report = attention_distance(&trace, &g).unwrap();
        assert_eq!(report.records[0].key, 0);
        assert_eq!(report.records[1].key, 1);
        assert_eq!(report.records[2].key, 0);
    }

    #[test]
    fn trace_without_global_layers_is_rejected() {
        let g = single_token_chain(2);
        let trace = ForwardTrace::default();
        assert!(attention_distance(&trace, &g).is_err());
    }

    #[test]
    fn wrong_sized_weights_are_rejected() {
        let g = single_token_chain(3);
        let trace = ForwardTrace {
            global: vec![record(0, 0, vec![vec![1.0]])],
            local: vec![],
        };
        assert!(attention_distance(&trace, &g).is_err());
    }

    fn tiny_instances() -> Vec<Instance> {
        // node counts 2, 3, 4 via 1-token entities chained by "r"
        (2..5)
            .map(|k| {
                let graph = single_token_chain(k);
                Instance {
                    graph,
                    target: toks(&["a", "b", ".", "c", "."][..k]),
                    triple_count: k - 1,
                }
            })
            .collect()
    }

    #[test]
    fn one_unbounded_bin_reports_the_overall_score() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        let rows = binned_scores(&instances, &cands, BinBy::NodeCount, &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].lo, 0);
        assert_eq!(rows[0].hi, None);
        assert_eq!(rows[0].count, 3);
        let refs: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        assert_eq!(rows[0].bleu, Some(bleu(&cands, &refs, 4).unwrap()));
    }

    #[test]
    fn bins_partition_the_corpus_and_recompute_exactly() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances
            .iter()
            .map(|i| {
                let mut c = i.target.clone();
                c.pop();
                c
            })
            .collect();
        let rows = binned_scores(&instances, &cands, BinBy::NodeCount, &[4]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), instances.len());
        // node counts 2 and 3 fall in [0,4); node count 4 in [4,inf)
        assert_eq!(rows[0].count, 2);
        assert_eq!(rows[1].count, 1);

        let low_refs = vec![instances[0].target.clone(), instances[1].target.clone()];
        let low_cands = vec![cands[0].clone(), cands[1].clone()];
        assert_eq!(rows[0].bleu, Some(bleu(&low_cands, &low_refs, 4).unwrap()));
        let high = bleu(
            std::slice::from_ref(&cands[2]),
            std::slice::from_ref(&instances[2].target),
            4,
        )
        .unwrap();
        assert_eq!(rows[1].bleu, Some(high));
    }

    #[test]
    fn empty_bins_carry_no_score() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        let rows = binned_scores(&instances, &cands, BinBy::NodeCount, &[100]).unwrap();
        assert_eq!(rows[0].count, 3);
        assert_eq!(rows[1].count, 0);
        assert_eq!(rows[1].bleu, None);
    }

    #[test]
    fn sentence_count_bins_on_period_tokens() {
        let instances = tiny_instances();
        // targets: ["a","b"] -> 0 periods, ["a","b","."] -> 1, ["a","b",".","c"] -> 1
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        let rows = binned_scores(&instances, &cands, BinBy::SentenceCount, &[1]).unwrap();
        assert_eq!(rows[0].count, 1);
        assert_eq!(rows[1].count, 2);
    }

    #[test]
    fn triple_count_and_diameter_binning_use_graph_structure() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        // triple counts are 1, 2, 3
        let rows = binned_scores(&instances, &cands, BinBy::TripleCount, &[2, 3]).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![1, 1, 1]);
        // path diameters are 1, 2, 3
        let rows = binned_scores(&instances, &cands, BinBy::Diameter, &[2]).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn bad_boundaries_or_lengths_are_rejected() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        assert!(binned_scores(&instances, &cands, BinBy::NodeCount, &[3, 3]).is_err());
        assert!(binned_scores(&instances, &cands[..2], BinBy::NodeCount, &[]).is_err());
        assert!(binned_scores(&[], &[], BinBy::NodeCount, &[]).is_err());
    }

    #[test]
    fn empty_inputs_make_empty_histograms() {
        let (o, r) = length_distribution(&[], &[]);
        assert!(o.counts.is_empty());
        assert!(r.counts.is_empty());
        assert_eq!(o.total(), 0);
    }

    #[test]
    fn five_token_output_lands_in_the_first_bin() {
        let (o, _) = length_distribution(&[toks(&["a", "b", "c", "d", "e"])], &[]);
        assert_eq!(o.counts, vec![1]);
        assert_eq!(o.bin_width, 10);
    }

    #[test]
    fn histogram_totals_conserve_corpus_size() {
        let seqs: Vec<Vec<String>> = (0..25).map(|i| vec!["w".to_string(); i]).collect();
        let (o, r) = length_distribution(&seqs, &seqs);
        assert_eq!(o.total(), 25);
        assert_eq!(r, o);
        // lengths 0..=9, 10..=19, 20..=24
        assert_eq!(o.counts, vec![10, 10, 5]);
    }

    #[test]
    fn tsv_reports_have_one_header_and_matching_rows() {
        let instances = tiny_instances();
        let cands: Vec<Vec<String>> = instances.iter().map(|i| i.target.clone()).collect();
        let rows = binned_scores(&instances, &cands, BinBy::NodeCount, &[3, 100]).unwrap();
        let tsv = bins_tsv(&rows);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "lo\thi\tcount\tbleu");
        assert_eq!(lines.len(), 1 + rows.len());
        assert!(lines.iter().skip(1).all(|l| l.split('\t').count() == 4));
        assert!(lines.last().unwrap().ends_with("nan"));
        assert!(lines[3].starts_with("100\tinf"));

        let (o, r) = length_distribution(&cands, &cands);
        let tsv = lengths_tsv(&o, &r);
        assert_eq!(tsv.lines().next().unwrap(), "lo\thi\toutputs\treferences");
        assert_eq!(tsv.lines().count(), 2);

        let g = single_token_chain(2);
        let trace = ForwardTrace {
            global: vec![record(0, 0, vec![vec![0.5, 0.5], vec![0.9, 0.1]])],
            local: vec![],
        };
        let report = attention_distance(&trace, &g).unwrap();
        let records = attention_records_tsv(&report);
        assert_eq!(records.lines().count(), 3);
        let summary = attention_summary_tsv(&report);
        assert_eq!(summary.lines().next().unwrap(), "layer\tmean_distance\tinfinite_fraction");
        assert_eq!(summary.lines().count(), 2);
    }
}
