//! Randomized structural properties over the public API: graph expansion
//! counts, beam search against exhaustive enumeration, score conventions,
//! and checkpoint round trips.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use proptest::prelude::*;

use kg2text_core::analysis::{binned_scores, bleu, BinBy};
use kg2text_core::config::{Architecture, TrainConfig};
use kg2text_core::decoder::{beam_search, length_penalty, StepScorer};
use kg2text_core::graph::{
    build_token_graph, connected_components, load_dataset, synth_corpus, write_jsonl,
    EntityGraph, GraphOptions, RelationVocab, SynthParams, BOS, EOS,
};
use kg2text_core::numerics::log_softmax_row;
use kg2text_core::numerics::rng::stream;
use kg2text_core::training::{checkpoint, train};
use kg2text_core::Result;
use rand::Rng;

fn label_of(idx: usize) -> String {
    ["ra", "rb", "rc"][idx].to_string()
}

/// Random entity graphs: up to 4 entities of 1..=3 tokens, random triples
/// (possibly duplicated; loops dropped).
fn entity_graphs() -> impl Strategy<Value = EntityGraph> {
    (2..=4usize).prop_flat_map(|n_e| {
        let counts = proptest::collection::vec(1..=3usize, n_e);
        let triples = proptest::collection::vec((0..n_e, 0..3usize, 0..n_e), 0..=8);
        (counts, triples).prop_map(|(counts, raw)| {
            let entities: Vec<Vec<String>> = counts
                .iter()
                .enumerate()
                .map(|(e, &k)| (0..k).map(|j| format!("e{e}w{j}")).collect())
                .collect();
            let triples = raw
                .into_iter()
                .filter(|(h, _, t)| h != t)
                .map(|(h, l, t)| (h, label_of(l), t))
                .collect();
            EntityGraph { entities, triples, title: None }
        })
    })
}

fn token_count(g: &EntityGraph) -> usize {
    g.entities.iter().map(|e| e.len()).sum()
}

fn distinct_triples(g: &EntityGraph) -> BTreeSet<(usize, String, usize)> {
    g.triples.iter().cloned().collect()
}

proptest! {
    #[test]
    fn token_expansion_counts_match_the_formula(g in entity_graphs()) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let tokens = token_count(&g);
        let pair_sum: usize = distinct_triples(&g)
            .iter()
            .map(|(h, _, t)| g.entities[*h].len() * g.entities[*t].len())
            .sum();
        prop_assert_eq!(tg.node_count(), tokens);
        prop_assert_eq!(tg.edges.len(), 2 * pair_sum + tokens);
    }

    #[test]
    fn every_edge_has_its_inverse_and_every_node_a_self_loop(g in entity_graphs()) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let edge_set: BTreeSet<_> = tg.edges.iter().cloned().collect();
        for &(u, r, v) in &tg.edges {
            prop_assert!(edge_set.contains(&(v, tg.relations.inverse_of(r), u)));
        }
        let self_id = tg.relations.self_id();
        for v in 0..tg.node_count() {
            prop_assert!(edge_set.contains(&(v, self_id, v)));
        }
    }

    #[test]
    fn positions_restart_inside_every_entity(g in entity_graphs()) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let mut cursor = 0;
        for (e, tokens) in g.entities.iter().enumerate() {
            for (pos, token) in tokens.iter().enumerate() {
                let node = &tg.nodes[cursor];
                prop_assert_eq!(&node.token, token);
                prop_assert_eq!(node.position, pos);
                prop_assert_eq!(format!("{}", node.origin), format!("entity:{e}"));
                cursor += 1;
            }
        }
    }

    #[test]
    fn relation_form_counts_match_the_formula(g in entity_graphs()) {
        let tg = build_token_graph(
            &g,
            &RelationVocab::levi(),
            &GraphOptions { use_levi: true, include_title: true },
        )
        .unwrap();
        let tokens = token_count(&g);
        let nodes = tokens + g.triples.len();
        let touch: usize = g
            .triples
            .iter()
            .map(|(h, _, t)| g.entities[*h].len() + g.entities[*t].len())
            .sum();
        prop_assert_eq!(tg.node_count(), nodes);
        prop_assert_eq!(tg.edges.len(), 2 * touch + nodes);
    }

    #[test]
    fn triple_order_never_changes_the_graph(g in entity_graphs(), seed in 0u64..1000) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let base = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let mut shuffled = g.clone();
        let mut r = stream(seed, "prop.triple-order", &[]);
        for i in (1..shuffled.triples.len()).rev() {
            shuffled.triples.swap(i, r.gen_range(0..=i));
        }
        let again = build_token_graph(&shuffled, &vocab, &GraphOptions::default()).unwrap();
        prop_assert_eq!(base, again);
    }

    #[test]
    fn adjacency_is_symmetric_and_loop_free(g in entity_graphs()) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let adj = tg.adjacency();
        for (u, peers) in adj.iter().enumerate() {
            prop_assert!(!peers.contains(&u));
            for &v in peers {
                prop_assert!(adj[v].contains(&u));
            }
        }
    }

    #[test]
    fn components_match_union_find(g in entity_graphs()) {
        let vocab = RelationVocab::from_canonical(g.relation_labels()).unwrap();
        let tg = build_token_graph(&g, &vocab, &GraphOptions::default()).unwrap();
        let tokens = token_count(&g);
        let mut offsets = vec![0usize];
        for e in &g.entities {
            offsets.push(offsets.last().unwrap() + e.len());
        }
        let mut parent: Vec<usize> = (0..tokens).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (h, _, t) in &g.triples {
            for u in offsets[*h]..offsets[*h + 1] {
                for v in offsets[*t]..offsets[*t + 1] {
                    let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                    if ru != rv {
                        parent[ru] = rv;
                    }
                }
            }
        }
        let roots: BTreeSet<usize> = (0..tokens).map(|x| find(&mut parent, x)).collect();
        prop_assert_eq!(connected_components(&tg), roots.len());
    }
}

/// Context-dependent random distributions, keyed by the exact prefix.
struct TableScorer {
    vocab: usize,
    seed: u64,
}

impl StepScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let counters: Vec<u64> = prefix.iter().map(|&t| t as u64 + 1).collect();
        let mut r = stream(self.seed, "prop.scorer", &counters);
        let logits: Vec<f64> = (0..self.vocab).map(|_| r.gen::<f64>() * 6.0 - 3.0).collect();
        Ok(log_softmax_row(&logits))
    }
}

fn exhaustive_best(scorer: &mut dyn StepScorer, alpha: f64, max_len: usize) -> Vec<u32> {
    fn walk(
        scorer: &mut dyn StepScorer,
        prefix: &mut Vec<u32>,
        logp: f64,
        alpha: f64,
        max_len: usize,
        best: &mut Option<(f64, Vec<u32>)>,
    ) {
        let probs = scorer.next_log_probs(prefix).unwrap();
        for (tok, lp) in probs.iter().enumerate() {
            let tok = tok as u32;
            let total = logp + lp;
            let generated = prefix.len();
            if tok == EOS || generated == max_len {
                let mut emitted: Vec<u32> = prefix[1..].to_vec();
                if tok != EOS {
                    emitted.push(tok);
                }
                let score = total / length_penalty(generated, alpha);
                let take = match best {
                    None => true,
                    Some((s, e)) => match score.total_cmp(s) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => emitted < *e,
                    },
                };
                if take {
                    *best = Some((score, emitted));
                }
            } else {
                prefix.push(tok);
                walk(scorer, prefix, total, alpha, max_len, best);
                prefix.pop();
            }
        }
    }
    let mut best = None;
    walk(scorer, &mut vec![BOS], 0.0, alpha, max_len, &mut best);
    best.unwrap().1
}

proptest! {
    #[test]
    fn wide_beam_equals_exhaustive_search(
        seed in 0u64..10_000,
        vocab in 3usize..=4,
        max_len in 1usize..=4,
        alpha in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]),
    ) {
        let mut scorer = TableScorer { vocab, seed };
        let wide = beam_search(&mut scorer, 512, alpha, max_len).unwrap();
        let exact = exhaustive_best(&mut scorer, alpha, max_len);
        prop_assert_eq!(wide, exact);
    }

    #[test]
    fn emitted_tokens_never_include_a_terminal_marker(
        seed in 0u64..10_000,
        beam in 1usize..=4,
        max_len in 1usize..=5,
    ) {
        let mut scorer = TableScorer { vocab: 4, seed };
        let out = beam_search(&mut scorer, beam, 0.5, max_len).unwrap();
        prop_assert!(out.len() <= max_len);
        prop_assert!(out.last() != Some(&EOS));
    }
}

fn sentences() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = prop::sample::select(vec!["a", "b", "c"]);
    let sentence = proptest::collection::vec(word.prop_map(str::to_string), 1..=7);
    proptest::collection::vec(sentence, 1..=5)
}

proptest! {
    #[test]
    fn corpus_score_is_order_invariant_and_bounded(
        pairs in sentences().prop_flat_map(|refs| {
            let n = refs.len();
            (Just(refs), proptest::collection::vec(
                proptest::collection::vec(
                    prop::sample::select(vec!["a", "b", "c"]).prop_map(str::to_string),
                    0..=7,
                ),
                n,
            ))
        }),
        seed in 0u64..1000,
    ) {
        let (refs, cands) = pairs;
        let score = bleu(&cands, &refs, 4).unwrap();
        prop_assert!((0.0..=100.0).contains(&score));

        let mut order: Vec<usize> = (0..refs.len()).collect();
        let mut r = stream(seed, "prop.bleu-order", &[]);
        for i in (1..order.len()).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let cands2: Vec<_> = order.iter().map(|&i| cands[i].clone()).collect();
        let refs2: Vec<_> = order.iter().map(|&i| refs[i].clone()).collect();
        let shuffled = bleu(&cands2, &refs2, 4).unwrap();
        prop_assert_eq!(score, shuffled);
    }

    // sequences up to 7 tokens are pinned down by their 4-gram counts, so
    // equality is the only way to reach a perfect score
    #[test]
    fn perfect_score_exactly_characterizes_equality(
        refs in sentences(),
        tweak in (0usize..5, 0usize..7),
    ) {
        let score = bleu(&refs, &refs, 4).unwrap();
        prop_assert_eq!(score, 100.0);

        let mut cands = refs.clone();
        let (i, j) = tweak;
        let i = i % cands.len();
        let j = j % cands[i].len();
        let old = cands[i][j].clone();
        cands[i][j] = if old == "a" { "b".to_string() } else { "a".to_string() };
        let perturbed = bleu(&cands, &refs, 4).unwrap();
        prop_assert!(perturbed < 100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn score_bins_partition_the_corpus(
        seed in 0u64..1000,
        n in 2usize..=6,
        edges in proptest::collection::btree_set(1usize..12, 1..=4),
        by in prop::sample::select(vec![
            BinBy::NodeCount,
            BinBy::Diameter,
            BinBy::TripleCount,
            BinBy::SentenceCount,
        ]),
    ) {
        let params = SynthParams {
            entities: (2, 4),
            tokens_per_entity: (1, 2),
            triples: (1, 4),
            relation_count: 2,
            word_pool: 10,
            with_title: false,
        };
        let corpus = synth_corpus(seed, n, &params, &GraphOptions::default()).unwrap();
        let candidates: Vec<Vec<String>> =
            corpus.instances.iter().map(|i| i.target.clone()).collect();
        let boundaries: Vec<usize> = edges.into_iter().collect();
        let rows = binned_scores(&corpus.instances, &candidates, by, &boundaries).unwrap();
        prop_assert_eq!(rows.len(), boundaries.len() + 1);
        prop_assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), corpus.instances.len());
        for row in &rows {
            if row.count > 0 {
                // perfect candidates score 100 in every occupied bin
                prop_assert_eq!(row.bleu, Some(100.0));
            } else {
                prop_assert_eq!(row.bleu, None);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn checkpoints_round_trip_bitwise(
        seed in 0u64..1000,
        arch in prop::sample::select(vec![
            Architecture::GlobalOnly,
            Architecture::LocalOnly,
            Architecture::Pge,
            Architecture::Cge,
            Architecture::PgeLw,
            Architecture::CgeLw,
        ]),
        steps in 0usize..=2,
    ) {
        let mut cfg = TrainConfig::default();
        cfg.seed = seed;
        cfg.steps = steps;
        cfg.batch_size = 2;
        cfg.model.architecture = arch;
        cfg.model.d_v = 8;
        cfg.model.global_layers = 1;
        cfg.model.local_layers = 1;
        cfg.model.global_heads = 2;
        cfg.model.local_heads = 2;
        cfg.model.d_ff = 16;
        cfg.model.decoder_layers = 1;
        cfg.model.decoder_heads = 2;
        let params = SynthParams {
            entities: (2, 3),
            tokens_per_entity: (1, 2),
            triples: (1, 2),
            relation_count: 2,
            word_pool: 8,
            with_title: false,
        };
        let corpus = synth_corpus(seed, 2, &params, &GraphOptions::default()).unwrap();
        let (trained, _) = train(&cfg, &corpus).unwrap();
        let bytes = checkpoint::save_bytes(&trained).unwrap();
        let restored = checkpoint::load_bytes(&bytes).unwrap();
        prop_assert_eq!(restored.step, trained.step);
        for (id, p) in trained.store.iter() {
            let q = restored.store.get(restored.store.id(&p.name).unwrap());
            prop_assert_eq!(p.tensor.data(), q.tensor.data(), "{}", p.name);
            prop_assert_eq!(&p.adam_m, &q.adam_m, "{}", p.name);
            prop_assert_eq!(&p.adam_v, &q.adam_v, "{}", p.name);
            let _ = id;
        }
        // a second serialization of the restored state is byte-identical
        prop_assert_eq!(checkpoint::save_bytes(&restored).unwrap(), bytes);
    }
}

proptest! {
    #[test]
    fn log_softmax_rows_are_normalized_and_shift_invariant(
        logits in proptest::collection::vec(-5.0f64..5.0, 1..=8),
        shift in -3.0f64..3.0,
    ) {
        let row = log_softmax_row(&logits);
        let total: f64 = row.iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let row2 = log_softmax_row(&shifted);
        for (a, b) in row.iter().zip(&row2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn datasets_survive_a_disk_round_trip(seed in 0u64..1000, n in 1usize..=4) {
        let params = SynthParams {
            entities: (2, 3),
            tokens_per_entity: (1, 2),
            triples: (1, 3),
            relation_count: 2,
            word_pool: 8,
            with_title: true,
        };
        let raws = kg2text_core::graph::synth_raw(seed, n, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_jsonl(&path, &raws).unwrap();
        let opts = GraphOptions::default();
        let corpus = load_dataset(&path, &opts).unwrap();
        let direct = kg2text_core::graph::corpus_from_raw(
            raws.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(),
            &opts,
        )
        .unwrap();
        prop_assert_eq!(corpus.instances.len(), direct.instances.len());
        for (a, b) in corpus.instances.iter().zip(&direct.instances) {
            prop_assert_eq!(&a.graph, &b.graph);
            prop_assert_eq!(&a.target, &b.target);
        }
    }
}
