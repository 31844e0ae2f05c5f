//! Deterministic training loop with Adam, the inverse-sqrt warmup schedule,
//! node-count-bucketed batches, and the experiment harness (evaluation plus
//! the ablation grid). All randomness is drawn from counter-derived streams,
//! so resuming from a checkpoint replays the exact batch order.

pub mod checkpoint;

use rand::seq::SliceRandom;

use crate::analysis::{self, Histogram};
use crate::config::{Ablation, Architecture, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Corpus;
use crate::model::{Model, PreparedInstance};
use crate::numerics::{noam_lr, rng, Ctx, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-9;

/// A model plus its parameter values and the number of optimizer steps taken.
pub struct TrainedModel {
    pub model: Model,
    pub store: ParamStore,
    pub step: u64,
}

impl TrainedModel {
    pub fn param_count(&self) -> usize {
        self.store.total_elements()
    }
}

/// Instance indices grouped into batches of near-equal node count: sort by
/// (node count, index), then chunk. The batch list is fixed for the whole
/// run; only the visiting order is reshuffled each epoch.
fn bucket_batches(preps: &[PreparedInstance], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..preps.len()).collect();
    order.sort_by_key(|&i| (preps[i].index.n, i));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Batch-visiting order for one epoch, derived statelessly from the seed so
/// a resumed run sees the same order without storing RNG state.
fn epoch_order(seed: u64, epoch: u64, n_batches: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_batches).collect();
    order.shuffle(&mut rng::stream(seed, "batch-order", &[epoch]));
    order
}

/// Initializes a model from the corpus and optimizes for `cfg.steps` steps.
/// Returns the trained model and the per-step objective (mean nats per
/// predicted token over the batch).
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<(TrainedModel, Vec<f64>)> {
    cfg.validate()?;
    if corpus.instances.is_empty() {
        return Err(Error::EmptySupport("training on an empty corpus".into()));
    }
    let mut store = ParamStore::new();
    let model = Model::from_corpus(&mut store, cfg.clone(), corpus)?;
    let mut trained = TrainedModel {
        model,
        store,
        step: 0,
    };
    let losses = continue_training(&mut trained, corpus, cfg.steps as u64)?;
    Ok((trained, losses))
}

/// Runs up to `extra_steps` more optimizer steps. Resuming a loaded
/// checkpoint with the same corpus reproduces the uninterrupted run bit for
/// bit: step numbering continues, and every random draw is keyed by step or
/// epoch counters rather than by stored RNG state.
pub fn continue_training(
    trained: &mut TrainedModel,
    corpus: &Corpus,
    extra_steps: u64,
) -> Result<Vec<f64>> {
    let cfg = trained.model.cfg.clone();
    let preps: Vec<PreparedInstance> = corpus
        .instances
        .iter()
        .map(|inst| trained.model.prepare(inst))
        .collect::<Result<_>>()?;
    let batches = bucket_batches(&preps, cfg.batch_size);
    let n_batches = batches.len() as u64;

    let mut losses = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;
    for _ in 0..extra_steps {
        let step = trained.step + 1;
        let epoch = (step - 1) / n_batches;
        let pos = ((step - 1) % n_batches) as usize;
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, batches.len())));
        }
        let batch = &batches[order.as_ref().unwrap().1[pos]];

        let total_tokens: usize = batch.iter().map(|&i| preps[i].token_count()).sum();
        trained.store.zero_grads();
        let mut objective = 0.0;
        for &i in batch {
            let weight = preps[i].token_count() as f64 / total_tokens as f64;
            let mut ctx = Ctx::new(&trained.store);
            let loss = trained
                .model
                .loss(&mut ctx, &preps[i], cfg.label_smoothing)?;
            let value = ctx.tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            objective += value * weight;
            let grads = ctx.grads(loss, weight)?;
            trained.store.accumulate(&grads);
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }

        trained.store.clip_global_norm(cfg.grad_clip);
        let lr = cfg.lr_scale * noam_lr(step, cfg.model.d_v, cfg.warmup as u64)?;
        trained
            .store
            .adam_step(step, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)?;
        trained.step = step;
        losses.push(objective);

        if let Some(threshold) = cfg.early_stop_loss {
            if objective < threshold {
                break;
            }
        }
    }
    Ok(losses)
}

/// Decoding results over a corpus: corpus BLEU against the references plus
/// the output/reference length histograms.
pub struct EvalReport {
    pub bleu: f64,
    pub outputs: Vec<Vec<String>>,
    pub output_lengths: Histogram,
    pub reference_lengths: Histogram,
}

pub fn evaluate(
    trained: &TrainedModel,
    corpus: &Corpus,
    beam_size: usize,
    alpha: f64,
) -> Result<EvalReport> {
    if corpus.instances.is_empty() {
        return Err(Error::EmptySupport("evaluation on an empty corpus".into()));
    }
    let max_len = trained.model.cfg.max_decode_len;
    let mut outputs = Vec::with_capacity(corpus.instances.len());
    for inst in &corpus.instances {
        let prep = trained.model.prepare(inst)?;
        outputs.push(
            trained
                .model
                .generate_text(&trained.store, &prep, beam_size, alpha, max_len)?,
        );
    }
    let references: Vec<Vec<String>> = corpus.instances.iter().map(|i| i.target.clone()).collect();
    let bleu = analysis::bleu(&outputs, &references, analysis::BLEU_MAX_ORDER)?;
    let (output_lengths, reference_lengths) = analysis::length_distribution(&outputs, &references);
    Ok(EvalReport {
        bleu,
        outputs,
        output_lengths,
        reference_lengths,
    })
}

pub struct AblationRow {
    pub label: String,
    pub param_count: usize,
    pub final_loss: f64,
    pub bleu: f64,
}

/// The single-change experiment grid: the base run plus one row per removed
/// module (attention weights, FFN, either encoder stack, relation weights,
/// GRU, shared vocabulary, length penalty). Each row trains from scratch
/// with the base seed.
pub fn ablation_grid(base: &TrainConfig, corpus: &Corpus) -> Result<Vec<AblationRow>> {
    let mut variants: Vec<(String, TrainConfig, Option<f64>)> = Vec::new();
    variants.push(("base".into(), base.clone(), None));
    for ab in [
        Ablation::NoGlobalAttention,
        Ablation::NoFfn,
        Ablation::NoLocalAttention,
        Ablation::NoRelationWeights,
        Ablation::NoGru,
    ] {
        let mut cfg = base.clone();
        cfg.model.ablations.push(ab);
        variants.push((format!("-{}", ab.label()), cfg, None));
    }
    let mut cfg = base.clone();
    cfg.model.architecture = Architecture::LocalOnly;
    variants.push(("-global_encoder".into(), cfg, None));
    let mut cfg = base.clone();
    cfg.model.architecture = Architecture::GlobalOnly;
    variants.push(("-local_encoder".into(), cfg, None));
    let mut cfg = base.clone();
    cfg.share_vocab = false;
    variants.push(("-shared_vocab".into(), cfg, None));
    // trained like the base; scored with the penalty disabled
    variants.push(("-length_penalty".into(), base.clone(), Some(0.0)));

    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg, alpha_override) in variants {
        let (trained, losses) = train(&cfg, corpus)?;
        let alpha = alpha_override.unwrap_or(cfg.length_alpha);
        let report = evaluate(&trained, corpus, cfg.beam_size, alpha)?;
        rows.push(AblationRow {
            label,
            param_count: trained.param_count(),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            bleu: report.bleu,
        });
    }
    Ok(rows)
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("label\tparams\tfinal_loss\tbleu\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.label, r.param_count, r.final_loss, r.bleu
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{corpus_from_raw, GraphOptions, RawInstance};

    fn word_corpus(instances: &[(&[&str], &[&str])]) -> Corpus {
        // each pair is (entity tokens, target); graphs are two-entity chains
        let raws = instances
            .iter()
            .enumerate()
            .map(|(i, (ents, text))| {
                let entities: Vec<Vec<String>> =
                    ents.iter().map(|e| vec![e.to_string()]).collect();
                let triples = (1..entities.len())
                    .map(|k| (k - 1, "r".to_string(), k))
                    .collect();
                (
                    i + 1,
                    RawInstance {
                        title: None,
                        entities,
                        triples,
                        text: text.iter().map(|t| t.to_string()).collect(),
                    },
                )
            })
            .collect();
        corpus_from_raw(raws, &GraphOptions::default()).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model.d_v = 8;
        cfg.model.global_layers = 1;
        cfg.model.local_layers = 1;
        cfg.model.global_heads = 2;
        cfg.model.local_heads = 2;
        cfg.model.d_ff = 16;
        cfg.model.decoder_layers = 1;
        cfg.model.decoder_heads = 2;
        cfg.steps = 4;
        cfg.batch_size = 2;
        cfg.max_decode_len = 8;
        cfg
    }

    fn two_instance_corpus() -> Corpus {
        word_corpus(&[
            (&["a", "b"], &["a", "meets", "b"]),
            (&["c", "d"], &["c", "greets", "d"]),
        ])
    }

    #[test]
    fn batches_bucket_by_node_count() {
        let corpus = word_corpus(&[
            (&["a", "b", "c", "d"], &["x"]),
            (&["e", "f"], &["x"]),
            (&["g", "h", "i"], &["x"]),
            (&["j", "k"], &["x"]),
        ]);
        let mut store = ParamStore::new();
        let model = Model::from_corpus(&mut store, small_cfg(), &corpus).unwrap();
        let preps: Vec<_> = corpus
            .instances
            .iter()
            .map(|i| model.prepare(i).unwrap())
            .collect();
        let batches = bucket_batches(&preps, 2);
        // node counts are 4, 2, 3, 2: the two 2-node graphs pair up
        assert_eq!(batches, vec![vec![1, 3], vec![2, 0]]);
    }

    #[test]
    fn epoch_order_is_reproducible_and_epoch_dependent() {
        let a = epoch_order(9, 0, 6);
        assert_eq!(a, epoch_order(9, 0, 6));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        assert_ne!(a, epoch_order(9, 1, 6));
    }

    #[test]
    fn identical_seeds_give_identical_loss_traces() {
        let corpus = two_instance_corpus();
        let cfg = small_cfg();
        let (_, losses_a) = train(&cfg, &corpus).unwrap();
        let (_, losses_b) = train(&cfg, &corpus).unwrap();
        assert_eq!(losses_a.len(), 4);
        assert_eq!(losses_a, losses_b);
    }

    #[test]
    fn loss_strictly_decreases_on_a_fixed_batch() {
        let corpus = two_instance_corpus();
        let mut cfg = small_cfg();
        cfg.steps = 50;
        cfg.batch_size = 2;
        cfg.lr_scale = 0.5;
        let (_, losses) = train(&cfg, &corpus).unwrap();
        assert_eq!(losses.len(), 50);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss went {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_memorizes_a_single_instance() {
        let corpus = word_corpus(&[(&["a", "b"], &["a", "likes", "b", "."])]);
        let mut cfg = small_cfg();
        cfg.steps = 400;
        cfg.batch_size = 1;
        cfg.label_smoothing = 0.0;
        cfg.lr_scale = 2.0;
        cfg.warmup = 40;
        cfg.early_stop_loss = Some(0.02);
        let (trained, losses) = train(&cfg, &corpus).unwrap();
        assert!(
            *losses.last().unwrap() < 0.02,
            "failed to memorize: final loss {}",
            losses.last().unwrap()
        );
        let report = evaluate(&trained, &corpus, 1, 0.0).unwrap();
        assert_eq!(report.bleu, 100.0);
        assert_eq!(report.outputs[0], corpus.instances[0].target);
        assert_eq!(report.output_lengths.total(), 1);
    }

    #[test]
    fn poisoned_parameters_abort_with_the_step_number() {
        let corpus = two_instance_corpus();
        let mut store = ParamStore::new();
        let model = Model::from_corpus(&mut store, small_cfg(), &corpus).unwrap();
        let pid = store.id("decoder.out.b").unwrap();
        store.get_mut(pid).tensor.data_mut()[0] = f64::INFINITY;
        let mut trained = TrainedModel {
            model,
            store,
            step: 0,
        };
        let err = continue_training(&mut trained, &corpus, 1).unwrap_err();
        assert!(err.to_string().contains("step 1"), "got: {err}");
    }

    #[test]
    fn ablation_grid_emits_one_row_per_variant() {
        let corpus = two_instance_corpus();
        let mut cfg = small_cfg();
        cfg.steps = 2;
        let rows = ablation_grid(&cfg, &corpus).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "base",
                "-global_attention",
                "-ffn",
                "-local_attention",
                "-relation_weights",
                "-gru",
                "-global_encoder",
                "-local_encoder",
                "-shared_vocab",
                "-length_penalty",
            ]
        );
        let base = rows[0].param_count;
        let by_label = |l: &str| rows.iter().find(|r| r.label == l).unwrap();
        assert!(by_label("-ffn").param_count < base);
        assert!(by_label("-relation_weights").param_count < base);
        assert!(by_label("-global_encoder").param_count < base);
        assert!(by_label("-local_encoder").param_count < base);
        assert_eq!(by_label("-length_penalty").param_count, base);
        assert!(rows.iter().all(|r| r.final_loss.is_finite()));

        let tsv = ablation_tsv(&rows);
        assert_eq!(tsv.lines().count(), 11);
        assert_eq!(tsv.lines().next().unwrap(), "label\tparams\tfinal_loss\tbleu");
    }
}
