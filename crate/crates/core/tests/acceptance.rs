//! Acceptance gate: ten criteria, one printed pass/fail line each.
//!
//! Every tolerance and budget is pinned here or in `verify`; the overfit
//! gates were frozen from the first verified run and act as regression
//! bounds from then on.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use kg2text_core::config::{Architecture, TrainConfig};
use kg2text_core::graph::{synth_corpus, Corpus, GraphOptions, SynthParams};
use kg2text_core::numerics::Ctx;
use kg2text_core::training::{self, checkpoint, TrainedModel};
use kg2text_core::verify::{self, Check};

const SEED: u64 = 41;

const GRAD_TIME_LIMIT: Duration = Duration::from_secs(60);

const OVERFIT_INSTANCES: usize = 30;
const OVERFIT_MAX_STEPS: usize = 2000;
const OVERFIT_TIME_LIMIT: Duration = Duration::from_secs(300);
/// Frozen regression gates for the overfit run.
const OVERFIT_LOSS_GATE: f64 = 0.1;
const OVERFIT_BLEU_GATE: f64 = 90.0;

fn report(check: &Check) {
    println!("{}", check.line());
    assert!(check.passed, "{}", check.line());
}

#[test]
fn c01_gradients_match_finite_differences() {
    let started = Instant::now();
    let checks = verify::check_gradients(SEED).expect("gradient suite");
    let elapsed = started.elapsed();
    let detail: Vec<String> = checks.iter().map(|c| c.line()).collect();
    let check = Check {
        name: "1.gradient-suite".into(),
        passed: checks.iter().all(|c| c.passed) && elapsed < GRAD_TIME_LIMIT,
        detail: format!(
            "six architectures vs central differences, {:.1}s total: {}",
            elapsed.as_secs_f64(),
            detail.join("; ")
        ),
    };
    report(&check);
}

#[test]
fn c02_attention_rows_are_stochastic() {
    let mut check = verify::check_attention_rows(SEED, 100).expect("row sums");
    check.name = "2.row-normalization".into();
    report(&check);
}

#[test]
fn c03_encoders_are_permutation_equivariant() {
    let mut check = verify::check_permutation_equivariance(SEED, 50).expect("equivariance");
    check.name = "3.permutation-equivariance".into();
    report(&check);
}

#[test]
fn c04_receptive_fields_behave() {
    let local = verify::check_locality(SEED, 20).expect("locality");
    let global = verify::check_global_sensitivity(SEED, 20).expect("sensitivity");
    let check = Check {
        name: "4.receptive-field".into(),
        passed: local.passed && global.passed,
        detail: format!("local: {}; global: {}", local.detail, global.detail),
    };
    report(&check);
}

#[test]
fn c05_graph_counts_match_brute_force() {
    let mut check = verify::check_graph_oracle(SEED, 200).expect("graph oracle");
    check.name = "5.graph-oracle".into();
    report(&check);
}

#[test]
fn c06_beam_search_matches_exhaustive() {
    let mut check = verify::check_beam_oracle(SEED, 50).expect("beam oracle");
    check.name = "6.beam-vs-exhaustive".into();
    report(&check);
}

fn overfit_corpus() -> Corpus {
    let params = SynthParams {
        entities: (2, 4),
        tokens_per_entity: (1, 2),
        triples: (1, 3),
        relation_count: 3,
        word_pool: 12,
        with_title: false,
    };
    let opts = GraphOptions { use_levi: false, include_title: false };
    synth_corpus(SEED, OVERFIT_INSTANCES, &params, &opts).expect("overfit corpus")
}

fn overfit_config(arch: Architecture) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.architecture = arch;
    cfg.model.d_v = 64;
    cfg.model.global_layers = 2;
    cfg.model.local_layers = 2;
    cfg.model.global_heads = 4;
    cfg.model.local_heads = 4;
    cfg.model.d_ff = 256;
    cfg.model.decoder_layers = 2;
    cfg.model.decoder_heads = 4;
    cfg.seed = SEED;
    cfg.steps = OVERFIT_MAX_STEPS;
    cfg.batch_size = 6;
    cfg.warmup = 100;
    // five cycling batches oscillate under the default schedule scale;
    // a quarter of it memorizes the corpus in a few hundred steps
    cfg.lr_scale = 0.25;
    cfg.label_smoothing = 0.0;
    cfg.early_stop_loss = Some(0.005);
    cfg.beam_size = 4;
    cfg.max_decode_len = 24;
    cfg.include_title = false;
    cfg
}

/// Exact-label loss over the whole corpus at the current parameters,
/// token-weighted nats per predicted token.
fn corpus_loss(trained: &TrainedModel, corpus: &Corpus) -> f64 {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for inst in &corpus.instances {
        let prep = trained.model.prepare(inst).expect("prepare");
        let mut ctx = Ctx::inference(&trained.store);
        let node = trained.model.loss(&mut ctx, &prep, 0.0).expect("loss");
        total += ctx.tape.scalar_value(node) * prep.token_count() as f64;
        tokens += prep.token_count();
    }
    total / tokens as f64
}

struct OverfitRun {
    corpus: Corpus,
    bleu: f64,
    loss: f64,
    steps_used: usize,
    elapsed: Duration,
}

static OVERFIT: OnceLock<OverfitRun> = OnceLock::new();

fn overfit() -> &'static OverfitRun {
    OVERFIT.get_or_init(|| {
        let corpus = overfit_corpus();
        let cfg = overfit_config(Architecture::CgeLw);
        let started = Instant::now();
        let (trained, losses) = training::train(&cfg, &corpus).expect("overfit training");
        let elapsed = started.elapsed();
        let eval = training::evaluate(&trained, &corpus, cfg.beam_size, cfg.length_alpha)
            .expect("overfit evaluation");
        OverfitRun {
            loss: corpus_loss(&trained, &corpus),
            bleu: eval.bleu,
            steps_used: losses.len(),
            elapsed,
            corpus,
        }
    })
}

#[test]
fn c07_overfit_run_clears_the_frozen_gates() {
    let run = overfit();
    let check = Check {
        name: "7.overfit".into(),
        passed: run.loss < OVERFIT_LOSS_GATE
            && run.bleu >= OVERFIT_BLEU_GATE
            && run.steps_used <= OVERFIT_MAX_STEPS
            && run.elapsed < OVERFIT_TIME_LIMIT,
        detail: format!(
            "loss {:.4} nats/token (gate {OVERFIT_LOSS_GATE}), bleu {:.2} (gate {OVERFIT_BLEU_GATE}), {} steps in {:.1}s",
            run.loss,
            run.bleu,
            run.steps_used,
            run.elapsed.as_secs_f64()
        ),
    };
    report(&check);
}

#[test]
fn c08_combined_encoder_echoes_the_ordering() {
    let run = overfit();
    let mut baselines = Vec::new();
    for arch in [Architecture::GlobalOnly, Architecture::LocalOnly] {
        let cfg = overfit_config(arch);
        let (trained, _) = training::train(&cfg, &run.corpus).expect("baseline training");
        let eval = training::evaluate(&trained, &run.corpus, cfg.beam_size, cfg.length_alpha)
            .expect("baseline evaluation");
        baselines.push(eval.bleu);
    }
    let ordered = baselines.iter().all(|&b| run.bleu >= b);
    let check = Check {
        name: "8.ablation-echo".into(),
        passed: ordered,
        detail: format!(
            "train bleu cge-lw {:.2} vs global-only {:.2}, local-only {:.2}",
            run.bleu, baselines[0], baselines[1]
        ),
    };
    // soft gate: the comparison is reported but never fails the build
    println!("{}", check.line());
}

#[test]
fn c09_identical_seeds_reproduce_bytes() {
    let params = SynthParams {
        entities: (2, 3),
        tokens_per_entity: (1, 2),
        triples: (1, 2),
        relation_count: 2,
        word_pool: 8,
        with_title: false,
    };
    let opts = GraphOptions { use_levi: false, include_title: false };
    let corpus = synth_corpus(SEED + 9, 6, &params, &opts).expect("determinism corpus");
    let mut cfg = TrainConfig::default();
    cfg.model.d_v = 16;
    cfg.model.global_layers = 1;
    cfg.model.local_layers = 1;
    cfg.model.global_heads = 2;
    cfg.model.local_heads = 2;
    cfg.model.d_ff = 32;
    cfg.model.decoder_layers = 1;
    cfg.model.decoder_heads = 2;
    cfg.seed = SEED + 9;
    cfg.steps = 8;
    cfg.batch_size = 3;
    cfg.max_decode_len = 12;
    cfg.include_title = false;

    let mut runs = Vec::new();
    for _ in 0..2 {
        let (trained, losses) = training::train(&cfg, &corpus).expect("training");
        let bytes = checkpoint::save_bytes(&trained).expect("serialize");
        let eval = training::evaluate(&trained, &corpus, cfg.beam_size, cfg.length_alpha)
            .expect("evaluation");
        let loss_bits: Vec<u64> = losses.iter().map(|l| l.to_bits()).collect();
        runs.push((bytes, eval.outputs, loss_bits));
    }
    let same = runs[0] == runs[1];
    let check = Check {
        name: "9.determinism".into(),
        passed: same,
        detail: format!(
            "two runs, {} checkpoint bytes, {} generated outputs, {} step losses",
            runs[0].0.len(),
            runs[0].1.len(),
            runs[0].2.len()
        ),
    };
    report(&check);
}

#[test]
fn c10_bleu_hand_case() {
    let mut check = verify::check_bleu_hand_case().expect("hand case");
    check.name = "10.bleu-hand-case".into();
    report(&check);
}
