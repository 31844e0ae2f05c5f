//! Graph encoders: a global stack where every node sees every node, a local
//! stack driven by the edge structure, and the four ways of combining them
//! (parallel or cascaded, at stack level or layer by layer).

mod global;
mod local;

pub use global::GlobalLayer;
pub use local::LocalLayer;

use crate::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::GraphIndex;
use crate::numerics::param::register_glorot;
use crate::numerics::{Ctx, NodeId, ParamId, ParamStore, Tensor};

/// LayerNorm variance floor, shared by encoder and decoder norms.
pub const LN_EPS: f64 = 1e-6;

/// Dense attention weights for one (layer, head) of a global-style attention.
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    /// Row-stochastic matrix; queries index rows.
    pub weights: Tensor,
}

/// Segmented attention weights for one (layer, head) of the local encoder.
pub struct LocalAttentionRecord {
    pub layer: usize,
    pub head: usize,
    /// One weight per incoming edge, CSR order.
    pub weights: Vec<f64>,
    /// Segment bounds per target node, length n + 1.
    pub offsets: Vec<usize>,
}

/// Attention weights collected during a forward pass, for analysis and for
/// the normalization checks.
#[derive(Default)]
pub struct ForwardTrace {
    pub global: Vec<AttentionRecord>,
    pub local: Vec<LocalAttentionRecord>,
}

pub struct Encoder {
    pub cfg: ModelConfig,
    global: Vec<GlobalLayer>,
    local: Vec<LocalLayer>,
    /// Per-layer projection back to d_v after the layer-wise parallel concat.
    lw_proj: Vec<ParamId>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        cfg: &ModelConfig,
        n_relations: usize,
    ) -> Result<Encoder> {
        cfg.validate()?;
        let mut global = Vec::new();
        if cfg.architecture.uses_global() {
            for l in 0..cfg.global_layers {
                global.push(GlobalLayer::new(store, seed, &format!("encoder.global.{l}"), cfg)?);
            }
        }
        let mut local = Vec::new();
        if cfg.architecture.uses_local() {
            for l in 0..cfg.local_layers {
                local.push(LocalLayer::new(
                    store,
                    seed,
                    &format!("encoder.local.{l}"),
                    cfg,
                    n_relations,
                )?);
            }
        }
        let mut lw_proj = Vec::new();
        if cfg.architecture == Architecture::PgeLw {
            for l in 0..cfg.global_layers {
                lw_proj.push(register_glorot(
                    store,
                    seed,
                    &format!("encoder.lw.{l}.proj"),
                    2 * cfg.d_v,
                    cfg.d_v,
                )?);
            }
        }
        Ok(Encoder { cfg: cfg.clone(), global, local, lw_proj })
    }

    fn run_global(
        &self,
        ctx: &mut Ctx,
        mut h: NodeId,
        trace: &mut Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        for (l, layer) in self.global.iter().enumerate() {
            h = layer.forward(ctx, h, l, trace.as_deref_mut())?;
        }
        Ok(h)
    }

    fn run_local(
        &self,
        ctx: &mut Ctx,
        mut h: NodeId,
        index: &GraphIndex,
        trace: &mut Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        for (l, layer) in self.local.iter().enumerate() {
            h = layer.forward(ctx, h, index, l, trace.as_deref_mut())?;
        }
        Ok(h)
    }

    /// Encode `h0` [n x d_v] into node representations [n x d_out], where
    /// d_out is d_v except for the parallel concat architecture (2*d_v).
    pub fn encode(
        &self,
        ctx: &mut Ctx,
        h0: NodeId,
        index: &GraphIndex,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        let mut trace = trace;
        let n = ctx.tape.shape(h0)[0];
        if n == 0 {
            return Err(Error::EmptySupport("cannot encode an empty graph".into()));
        }
        if n != index.n {
            return Err(Error::shape(
                "encode",
                format!("{n} embedding rows vs {} graph nodes", index.n),
            ));
        }
        match self.cfg.architecture {
            Architecture::GlobalOnly => self.run_global(ctx, h0, &mut trace),
            Architecture::LocalOnly => self.run_local(ctx, h0, index, &mut trace),
            Architecture::Pge => {
                let hg = self.run_global(ctx, h0, &mut trace)?;
                let hl = self.run_local(ctx, h0, index, &mut trace)?;
                ctx.tape.concat_cols(&[hg, hl])
            }
            Architecture::Cge => {
                let hg = self.run_global(ctx, h0, &mut trace)?;
                self.run_local(ctx, hg, index, &mut trace)
            }
            Architecture::PgeLw => {
                let mut h = h0;
                for l in 0..self.global.len() {
                    let hg = self.global[l].forward(ctx, h, l, trace.as_deref_mut())?;
                    let hl = self.local[l].forward(ctx, h, index, l, trace.as_deref_mut())?;
                    let cat = ctx.tape.concat_cols(&[hg, hl])?;
                    let proj = ctx.param(self.lw_proj[l])?;
                    h = ctx.tape.matmul(cat, proj)?;
                }
                Ok(h)
            }
            Architecture::CgeLw => {
                let mut h = h0;
                for l in 0..self.global.len() {
                    let hg = self.global[l].forward(ctx, h, l, trace.as_deref_mut())?;
                    h = self.local[l].forward(ctx, hg, index, l, trace.as_deref_mut())?;
                }
                Ok(h)
            }
        }
    }
}
