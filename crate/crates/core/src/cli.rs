//! Command-line surface: dataset stats, training, generation, verification,
//! and analysis as reproducible batch runs. Every command hashes its inputs
//! and writes a run manifest next to its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    attention_distance, attention_summary_tsv, binned_scores, bins_tsv, lengths_tsv,
    AttentionDistance, BinBy, LayerDistanceSummary,
};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{graph_stats, load_dataset, Corpus, GraphOptions, StatsRow};
use crate::training::{self, checkpoint};
use crate::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(
    name = "kg2text",
    about = "Graph-to-text toolkit: train, generate, verify, analyze",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a JSONL dataset as a one-row table
    Stats(StatsArgs),
    /// Train a model and write a checkpoint plus a loss log
    Train(TrainArgs),
    /// Decode a dataset with a trained checkpoint
    Generate(GenerateArgs),
    /// Run the verification suites and report pass/fail per check
    Verify(VerifyArgs),
    /// Produce TSV reports from a checkpoint and a dataset
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// JSONL dataset path
    #[arg(long)]
    data: PathBuf,
    /// Expand triples into relation nodes instead of direct token edges
    #[arg(long)]
    levi: bool,
    /// Output directory for stats.tsv and the manifest
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Strict JSON training configuration
    #[arg(long)]
    config: PathBuf,
    /// JSONL dataset path
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.kg2t, loss.tsv, and the manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Trained checkpoint path
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL dataset path
    #[arg(long)]
    data: PathBuf,
    /// Output directory for generated.txt and the manifest
    #[arg(long)]
    out: PathBuf,
    /// Beam width; defaults to the value stored in the checkpoint
    #[arg(long)]
    beam: Option<usize>,
    /// Length penalty exponent; defaults to the value in the checkpoint
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run: grad, invariants, or oracle; all three when omitted
    #[arg(long)]
    suite: Option<String>,
    /// Seed for the randomized checks
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for report.txt and the manifest
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trained checkpoint path
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL dataset path
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the TSV reports and the manifest
    #[arg(long)]
    out: PathBuf,
    /// Per-layer mean distance between each node and its strongest
    /// global-attention partner
    #[arg(long)]
    attention_distance: bool,
    /// Per-bin corpus score: node-count, diameter, triples, or sentences
    #[arg(long)]
    bins: Option<String>,
    /// Comma-separated upper bin edges, e.g. 10,20,30
    #[arg(long)]
    bin_edges: Option<String>,
    /// Output and reference length histograms
    #[arg(long)]
    lengths: bool,
}

/// Record of one command run: what ran, on which inputs (by content hash),
/// and what it wrote. The wall clock is the only field that varies between
/// identical runs.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: BTreeMap<String, String>,
    wall_clock_secs: f64,
    outputs: Vec<String>,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("bad arguments");
            eprintln!("ERROR: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    let outcome = match cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR: {e}");
            1
        }
    }
}

fn content_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    for p in paths {
        inputs.insert(p.display().to_string(), content_hash(p)?);
    }
    Ok(inputs)
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn load_nonempty(path: &Path, opts: &GraphOptions) -> Result<Corpus> {
    let corpus = load_dataset(path, opts)?;
    if corpus.instances.is_empty() {
        return Err(Error::Invalid(format!("no instances in {}", path.display())));
    }
    Ok(corpus)
}

fn graph_options(cfg: &TrainConfig) -> GraphOptions {
    GraphOptions { use_levi: cfg.use_levi, include_title: cfg.include_title }
}

fn stats_tsv(row: &StatsRow) -> String {
    format!(
        "instances\trelations\tavg_nodes\tavg_edges\tavg_components\tavg_target_len\n\
         {}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
        row.instances,
        row.relation_count,
        row.avg_nodes,
        row.avg_edges,
        row.avg_components,
        row.avg_target_len
    )
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let started = Instant::now();
    let inputs = hash_inputs(&[&a.data])?;
    let opts = GraphOptions { use_levi: a.levi, include_title: true };
    let corpus = load_nonempty(&a.data, &opts)?;
    let table = stats_tsv(&graph_stats(&corpus)?);
    print!("{table}");
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("stats.tsv"), &table)?;
    write_manifest(
        &a.out,
        &RunManifest {
            command: "stats".into(),
            config: serde_json::to_value(opts).unwrap_or_default(),
            seed: 0,
            inputs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs: vec!["stats.tsv".into()],
        },
    )
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let inputs = hash_inputs(&[&a.config, &a.data])?;
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", a.config.display())))?;
    let cfg = TrainConfig::from_json(&text)?;
    let corpus = load_nonempty(&a.data, &graph_options(&cfg))?;
    let (trained, losses) = training::train(&cfg, &corpus)?;

    std::fs::create_dir_all(&a.out)?;
    checkpoint::save(&a.out.join("model.kg2t"), &trained)?;
    let mut log = String::from("step\tloss\n");
    for (i, loss) in losses.iter().enumerate() {
        log.push_str(&format!("{}\t{loss}\n", i + 1));
    }
    std::fs::write(a.out.join("loss.tsv"), log)?;

    println!(
        "trained {} steps, final loss {}",
        trained.step,
        losses.last().map_or_else(|| "n/a".into(), |l| format!("{l:.6}"))
    );
    write_manifest(
        &a.out,
        &RunManifest {
            command: "train".into(),
            config: serde_json::to_value(&cfg)
                .map_err(|e| Error::Invalid(format!("config echo: {e}")))?,
            seed: cfg.seed,
            inputs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs: vec!["model.kg2t".into(), "loss.tsv".into()],
        },
    )
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let started = Instant::now();
    let inputs = hash_inputs(&[&a.checkpoint, &a.data])?;
    let trained = checkpoint::load(&a.checkpoint)?;
    let mut cfg = trained.model.cfg.clone();
    cfg.beam_size = a.beam.unwrap_or(cfg.beam_size);
    cfg.length_alpha = a.alpha.unwrap_or(cfg.length_alpha);
    let corpus = load_nonempty(&a.data, &graph_options(&cfg))?;

    let mut text = String::new();
    for inst in &corpus.instances {
        let prep = trained.model.prepare(inst)?;
        let words = trained.model.generate_text(
            &trained.store,
            &prep,
            cfg.beam_size,
            cfg.length_alpha,
            cfg.max_decode_len,
        )?;
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("generated.txt"), text)?;

    println!("generated {} lines", corpus.instances.len());
    write_manifest(
        &a.out,
        &RunManifest {
            command: "generate".into(),
            config: serde_json::to_value(&cfg)
                .map_err(|e| Error::Invalid(format!("config echo: {e}")))?,
            seed: cfg.seed,
            inputs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs: vec!["generated.txt".into()],
        },
    )
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let started = Instant::now();
    let suites: Vec<Suite> = match &a.suite {
        Some(name) => vec![Suite::parse(name).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown suite {name:?}; expected grad, invariants, or oracle"
            ))
        })?],
        None => Suite::ALL.to_vec(),
    };

    let mut report = String::new();
    let mut failed = 0usize;
    for suite in &suites {
        for check in run_suite(*suite, a.seed)? {
            if !check.passed {
                failed += 1;
            }
            let line = check.line();
            println!("{line}");
            report.push_str(&line);
            report.push('\n');
        }
    }
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.txt"), report)?;
    let suite_names: Vec<&str> = suites.iter().map(|s| s.name()).collect();
    write_manifest(
        &a.out,
        &RunManifest {
            command: "verify".into(),
            config: serde_json::json!({ "suites": suite_names, "seed": a.seed }),
            seed: a.seed,
            inputs: BTreeMap::new(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs: vec!["report.txt".into()],
        },
    )?;
    if failed > 0 {
        return Err(Error::Verify(format!("{failed} checks failed")));
    }
    Ok(())
}

fn parse_bin_by(name: &str) -> Result<BinBy> {
    match name {
        "node-count" => Ok(BinBy::NodeCount),
        "diameter" => Ok(BinBy::Diameter),
        "triples" => Ok(BinBy::TripleCount),
        "sentences" => Ok(BinBy::SentenceCount),
        other => Err(Error::Invalid(format!(
            "unknown bin key {other:?}; expected node-count, diameter, triples, or sentences"
        ))),
    }
}

fn default_edges(by: BinBy) -> Vec<usize> {
    match by {
        BinBy::NodeCount => vec![10, 20, 30, 40],
        BinBy::Diameter => vec![2, 4, 6, 8],
        BinBy::TripleCount => vec![2, 4, 6, 8],
        BinBy::SentenceCount => vec![1, 2, 3],
    }
}

fn parse_edges(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad bin edge {part:?}")))
        })
        .collect()
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    if !a.attention_distance && a.bins.is_none() && !a.lengths {
        return Err(Error::Invalid(
            "nothing to analyze: pass --attention-distance, --bins, or --lengths".into(),
        ));
    }
    let inputs = hash_inputs(&[&a.checkpoint, &a.data])?;
    let trained = checkpoint::load(&a.checkpoint)?;
    let cfg = trained.model.cfg.clone();
    let corpus = load_nonempty(&a.data, &graph_options(&cfg))?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();

    if a.attention_distance {
        // merge per-instance reports into one per-layer summary
        struct Acc {
            sum: f64,
            finite: usize,
            infinite: usize,
        }
        let mut by_layer: BTreeMap<usize, Acc> = BTreeMap::new();
        for inst in &corpus.instances {
            let prep = trained.model.prepare(inst)?;
            let trace = trained.model.traced_encode(&trained.store, &prep)?;
            let report = attention_distance(&trace, &inst.graph)?;
            for rec in &report.records {
                let acc = by_layer
                    .entry(rec.layer)
                    .or_insert(Acc { sum: 0.0, finite: 0, infinite: 0 });
                match rec.distance {
                    Some(d) => {
                        acc.sum += d as f64;
                        acc.finite += 1;
                    }
                    None => acc.infinite += 1,
                }
            }
        }
        let per_layer: Vec<LayerDistanceSummary> = by_layer
            .into_iter()
            .map(|(layer, acc)| LayerDistanceSummary {
                layer,
                mean_distance: (acc.finite > 0).then(|| acc.sum / acc.finite as f64),
                infinite_fraction: acc.infinite as f64 / (acc.finite + acc.infinite) as f64,
            })
            .collect();
        let merged = AttentionDistance { records: Vec::new(), per_layer };
        std::fs::write(a.out.join("attention_distance.tsv"), attention_summary_tsv(&merged))?;
        outputs.push("attention_distance.tsv".into());
    }

    if a.bins.is_some() || a.lengths {
        let report = training::evaluate(&trained, &corpus, cfg.beam_size, cfg.length_alpha)?;
        if let Some(kind) = &a.bins {
            let by = parse_bin_by(kind)?;
            let edges = match &a.bin_edges {
                Some(text) => parse_edges(text)?,
                None => default_edges(by),
            };
            let rows = binned_scores(&corpus.instances, &report.outputs, by, &edges)?;
            let name = format!("bins_{}.tsv", by.label());
            std::fs::write(a.out.join(&name), bins_tsv(&rows))?;
            outputs.push(name);
        }
        if a.lengths {
            std::fs::write(
                a.out.join("lengths.tsv"),
                lengths_tsv(&report.output_lengths, &report.reference_lengths),
            )?;
            outputs.push("lengths.tsv".into());
        }
    }

    println!("wrote {} reports", outputs.len());
    write_manifest(
        &a.out,
        &RunManifest {
            command: "analyze".into(),
            config: serde_json::to_value(&cfg)
                .map_err(|e| Error::Invalid(format!("config echo: {e}")))?,
            seed: cfg.seed,
            inputs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs,
        },
    )
}
