//! Run configuration: model hyperparameters, ablation toggles, and the
//! training/decoding knobs that surround them.
//!
//! Configs are strict JSON: unknown keys are rejected so typos in experiment
//! files fail loudly instead of silently training the wrong model. Every
//! field has a desk-scale default, so a config file only needs the fields it
//! wants to override. [`TrainConfig`] is serialized verbatim into
//! checkpoints; keep it plain data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the global and local encoder stacks are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Global attention stack only.
    GlobalOnly,
    /// Relational local attention stack only.
    LocalOnly,
    /// Parallel: run both stacks on the shared input, concatenate outputs
    /// (output width doubles).
    Pge,
    /// Cascaded: global stack first, local stack refines its output.
    Cge,
    /// Layer-wise parallel: each layer concatenates a global and a local
    /// sublayer output and projects back to model width.
    PgeLw,
    /// Layer-wise cascaded: each layer is a global sublayer followed by a
    /// local sublayer.
    CgeLw,
}

impl Architecture {
    pub fn uses_global(self) -> bool {
        !matches!(self, Architecture::LocalOnly)
    }

    pub fn uses_local(self) -> bool {
        !matches!(self, Architecture::GlobalOnly)
    }

    /// Layer-wise modes interleave the two stacks and need equal depths.
    pub fn is_layer_wise(self) -> bool {
        matches!(self, Architecture::PgeLw | Architecture::CgeLw)
    }

    /// Encoder output width as a multiple of `d_v`.
    pub fn output_width_factor(self) -> usize {
        if matches!(self, Architecture::Pge) {
            2
        } else {
            1
        }
    }
}

/// Divisor applied to global attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    /// Divide scores by the per-head width d_z.
    LinearDz,
    /// Divide scores by sqrt(d_z).
    SqrtDz,
}

impl Default for ScalingMode {
    fn default() -> Self {
        ScalingMode::LinearDz
    }
}

/// Single-component removals for ablation runs. Each flag strips one
/// mechanism while preserving the surrounding information flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Replace learned global attention with uniform averaging over all nodes.
    NoGlobalAttention,
    /// Drop the feed-forward sublayer of each global layer.
    NoFfn,
    /// Replace learned local attention with uniform averaging over neighbors.
    NoLocalAttention,
    /// Tie every relation transform to one shared matrix.
    NoRelationWeights,
    /// Replace the gated state update with a plain residual add.
    NoGru,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match self {
            Ablation::NoGlobalAttention => "global_attention",
            Ablation::NoFfn => "ffn",
            Ablation::NoLocalAttention => "local_attention",
            Ablation::NoRelationWeights => "relation_weights",
            Ablation::NoGru => "gru",
        }
    }
}

fn default_d_v() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_d_ff() -> usize {
    256
}
fn default_leaky_slope() -> f64 {
    0.2
}

/// Model shape: encoder architecture, stack depths, widths, and ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Node representation width; even (sinusoidal positions pair channels)
    /// and divisible by every head count in use.
    pub d_v: usize,
    pub global_layers: usize,
    pub local_layers: usize,
    pub global_heads: usize,
    pub local_heads: usize,
    /// Hidden width of feed-forward sublayers (encoder and decoder).
    pub d_ff: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub scaling: ScalingMode,
    /// Apply a learned (identity-initialized) projection after the global
    /// multi-head concat. Off means the concat is used as-is.
    pub output_projection: bool,
    /// Negative-side slope of the local attention activation.
    pub leaky_slope: f64,
    /// When set, relation transforms are blended from this many shared basis
    /// matrices instead of stored per relation.
    pub basis_count: Option<usize>,
    /// Reserved knob; only 0.0 is accepted so every run stays deterministic.
    pub dropout: f64,
    pub ablations: Vec<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::CgeLw,
            d_v: default_d_v(),
            global_layers: default_layers(),
            local_layers: default_layers(),
            global_heads: default_heads(),
            local_heads: default_heads(),
            d_ff: default_d_ff(),
            decoder_layers: default_layers(),
            decoder_heads: default_heads(),
            scaling: ScalingMode::default(),
            output_projection: true,
            leaky_slope: default_leaky_slope(),
            basis_count: None,
            dropout: 0.0,
            ablations: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn has_ablation(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Width of the encoder output rows fed to the decoder bridge.
    pub fn encoder_output_width(&self) -> usize {
        self.d_v * self.architecture.output_width_factor()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.d_v % 2 != 0 {
            return Err(Error::Config(format!(
                "d_v must be a positive even number, got {}",
                self.d_v
            )));
        }
        let head_uses = [
            ("global_heads", self.global_heads, self.architecture.uses_global()),
            ("local_heads", self.local_heads, self.architecture.uses_local()),
            ("decoder_heads", self.decoder_heads, true),
        ];
        for (name, heads, used) in head_uses {
            if !used {
                continue;
            }
            if heads == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            if self.d_v % heads != 0 {
                return Err(Error::Config(format!(
                    "{name} = {heads} must divide d_v = {}",
                    self.d_v
                )));
            }
        }
        if self.architecture.is_layer_wise() && self.global_layers != self.local_layers {
            return Err(Error::Config(format!(
                "layer-wise architectures need equal stack depths, got global_layers = {} and local_layers = {}",
                self.global_layers, self.local_layers
            )));
        }
        if self.decoder_layers == 0 {
            return Err(Error::Config("decoder_layers must be positive".into()));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.basis_count == Some(0) {
            return Err(Error::Config("basis_count must be positive when set".into()));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config(format!(
                "dropout {} is not supported; only 0.0 keeps runs deterministic",
                self.dropout
            )));
        }
        let mut seen = self.ablations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ablations.len() {
            return Err(Error::Config("ablations list contains duplicates".into()));
        }
        Ok(())
    }
}

fn default_seed() -> u64 {
    1
}
fn default_steps() -> usize {
    200
}
fn default_batch_size() -> usize {
    8
}
fn default_warmup() -> usize {
    400
}
fn default_lr_scale() -> f64 {
    1.0
}
fn default_label_smoothing() -> f64 {
    0.1
}
fn default_length_alpha() -> f64 {
    0.5
}
fn default_beam_size() -> usize {
    4
}
fn default_max_decode_len() -> usize {
    40
}
fn default_grad_clip() -> f64 {
    1.0
}

/// Everything a training or generation run needs beyond the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Master seed; every random draw in a run derives from it.
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Learning-rate warmup steps (small at desk scale).
    pub warmup: usize,
    /// Multiplier on the schedule's learning rate.
    pub lr_scale: f64,
    /// Label smoothing mass spread over non-target tokens.
    pub label_smoothing: f64,
    /// Length penalty exponent used when scoring beam hypotheses.
    pub length_alpha: f64,
    pub beam_size: usize,
    pub max_decode_len: usize,
    /// Build one vocabulary over node and target tokens. Off builds separate
    /// tables (the decoder then embeds targets with its own table).
    pub share_vocab: bool,
    /// Global-norm gradient clip threshold.
    pub grad_clip: f64,
    /// Stop early once the smoothed training loss per token drops below this.
    pub early_stop_loss: Option<f64>,
    /// Insert one relation node per triple instead of direct token edges.
    pub use_levi: bool,
    pub include_title: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            seed: default_seed(),
            steps: default_steps(),
            batch_size: default_batch_size(),
            warmup: default_warmup(),
            lr_scale: default_lr_scale(),
            label_smoothing: default_label_smoothing(),
            length_alpha: default_length_alpha(),
            beam_size: default_beam_size(),
            max_decode_len: default_max_decode_len(),
            share_vocab: true,
            grad_clip: default_grad_clip(),
            early_stop_loss: None,
            use_levi: false,
            include_title: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be positive".into()));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(Error::Config(format!(
                "lr_scale must be positive and finite, got {}",
                self.lr_scale
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if !self.length_alpha.is_finite() || self.length_alpha < 0.0 {
            return Err(Error::Config(format!(
                "length_alpha must be finite and nonnegative, got {}",
                self.length_alpha
            )));
        }
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be positive".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be positive".into()));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config(format!(
                "grad_clip must be positive and finite, got {}",
                self.grad_clip
            )));
        }
        if let Some(t) = self.early_stop_loss {
            if !t.is_finite() {
                return Err(Error::Config("early_stop_loss must be finite".into()));
            }
        }
        Ok(())
    }

    /// Parse a strict-JSON config; unknown keys are an error naming the key.
    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
