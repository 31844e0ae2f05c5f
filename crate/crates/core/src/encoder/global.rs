//! Global attention layer: every node attends to every other node,
//! ignoring edge labels entirely.

use crate::config::{Ablation, ModelConfig, ScalingMode};
use crate::error::{Error, Result};
use crate::numerics::param::{register_glorot, register_identity, register_vector};
use crate::numerics::{ffn, Ctx, NodeId, ParamId, ParamStore, Tensor};

use super::{AttentionRecord, ForwardTrace, LN_EPS};

struct GlobalHead {
    /// Query/key projections; absent when attention is ablated to uniform.
    wq: Option<ParamId>,
    wk: Option<ParamId>,
    wg: ParamId,
}

struct FfnParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub struct GlobalLayer {
    heads: Vec<GlobalHead>,
    wo: Option<ParamId>,
    ln_gain: ParamId,
    ln_bias: ParamId,
    ffn: Option<FfnParams>,
    scaling: ScalingMode,
    uniform_attention: bool,
    d_z: usize,
}

impl GlobalLayer {
    /// Registers all parameters for one layer under `name.*`.
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<GlobalLayer> {
        let d_v = cfg.d_v;
        let heads_n = cfg.global_heads;
        let d_z = d_v / heads_n;
        let uniform = cfg.has_ablation(Ablation::NoGlobalAttention);
        let mut heads = Vec::with_capacity(heads_n);
        for k in 0..heads_n {
            let (wq, wk) = if uniform {
                (None, None)
            } else {
                (
                    Some(register_glorot(store, seed, &format!("{name}.head{k}.wq"), d_v, d_z)?),
                    Some(register_glorot(store, seed, &format!("{name}.head{k}.wk"), d_v, d_z)?),
                )
            };
            let wg = register_glorot(store, seed, &format!("{name}.head{k}.wg"), d_v, d_z)?;
            heads.push(GlobalHead { wq, wk, wg });
        }
        let wo = if cfg.output_projection {
            Some(register_identity(store, &format!("{name}.wo"), d_v)?)
        } else {
            None
        };
        let ln_gain = register_vector(store, &format!("{name}.ln.gain"), d_v, 1.0)?;
        let ln_bias = register_vector(store, &format!("{name}.ln.bias"), d_v, 0.0)?;
        let ffn = if cfg.has_ablation(Ablation::NoFfn) {
            None
        } else {
            Some(FfnParams {
                w1: register_glorot(store, seed, &format!("{name}.ffn.w1"), d_v, cfg.d_ff)?,
                b1: register_vector(store, &format!("{name}.ffn.b1"), cfg.d_ff, 0.0)?,
                w2: register_glorot(store, seed, &format!("{name}.ffn.w2"), cfg.d_ff, d_v)?,
                b2: register_vector(store, &format!("{name}.ffn.b2"), d_v, 0.0)?,
            })
        };
        Ok(GlobalLayer {
            heads,
            wo,
            ln_gain,
            ln_bias,
            ffn,
            scaling: cfg.scaling,
            uniform_attention: uniform,
            d_z,
        })
    }

    /// One layer over `h` [n x d_v]. Records per-head attention when traced.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        h: NodeId,
        layer: usize,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        let n = ctx.tape.shape(h)[0];
        if n == 0 {
            return Err(Error::EmptySupport("global layer on an empty graph".into()));
        }
        let divisor = match self.scaling {
            ScalingMode::LinearDz => self.d_z as f64,
            ScalingMode::SqrtDz => (self.d_z as f64).sqrt(),
        };
        let mut head_outs = Vec::with_capacity(self.heads.len());
        for (k, head) in self.heads.iter().enumerate() {
            let alpha = if self.uniform_attention {
                let uni = Tensor::new(vec![n, n], vec![1.0 / n as f64; n * n])?;
                ctx.constant(&uni)?
            } else {
                let wq = ctx.param(head.wq.expect("learned attention has wq"))?;
                let wk = ctx.param(head.wk.expect("learned attention has wk"))?;
                let q = ctx.tape.matmul(h, wq)?;
                let kk = ctx.tape.matmul(h, wk)?;
                let scores = ctx.tape.matmul_nt(q, kk)?;
                let scaled = ctx.tape.scale(scores, 1.0 / divisor)?;
                ctx.tape.softmax_rows(scaled, None)?
            };
            if let Some(t) = trace.as_deref_mut() {
                t.global.push(AttentionRecord {
                    layer,
                    head: k,
                    weights: Tensor::new(vec![n, n], ctx.tape.value(alpha).to_vec())?,
                });
            }
            let wg = ctx.param(head.wg)?;
            let g = ctx.tape.matmul(h, wg)?;
            head_outs.push(ctx.tape.matmul(alpha, g)?);
        }
        let cat = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            ctx.tape.concat_cols(&head_outs)?
        };
        let hn = match self.wo {
            Some(wo) => {
                let wo = ctx.param(wo)?;
                ctx.tape.matmul(cat, wo)?
            }
            None => cat,
        };
        let pre_norm = ctx.tape.add(hn, h)?;
        let gain = ctx.param(self.ln_gain)?;
        let bias = ctx.param(self.ln_bias)?;
        let hhat = ctx.tape.layer_norm(pre_norm, gain, bias, LN_EPS)?;
        match &self.ffn {
            Some(f) => {
                let w1 = ctx.param(f.w1)?;
                let b1 = ctx.param(f.b1)?;
                let w2 = ctx.param(f.w2)?;
                let b2 = ctx.param(f.b2)?;
                let fed = ffn(&mut ctx.tape, hhat, w1, b1, w2, b2)?;
                // both the attention output and the layer input ride through
                let res = ctx.tape.add(fed, hn)?;
                ctx.tape.add(res, h)
            }
            None => Ok(hhat),
        }
    }
}
