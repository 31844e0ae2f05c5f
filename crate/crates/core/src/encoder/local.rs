//! Local relational attention layer: each node attends over its incoming
//! edges only, with a transform per relation and a gated state update.

use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::GraphIndex;
use crate::numerics::param::{glorot, register_glorot, register_glorot_vector, register_vector};
use crate::numerics::rng::stream;
use crate::numerics::{gru_cell, Ctx, GruNodes, NodeId, ParamId, ParamStore, Tensor};

use super::{ForwardTrace, LocalAttentionRecord};

/// How a relation id maps to its d_v x d_z transform.
enum RelWeights {
    /// One stored matrix per relation.
    Full(Vec<ParamId>),
    /// Shared basis rows [B x (d_v*d_z)] blended by coefficients [R x B].
    Basis { bases: ParamId, coeff: ParamId },
    /// Every relation shares one matrix.
    Tied(ParamId),
}

struct LocalHead {
    /// Query-side transform; absent when attention is ablated to uniform.
    wv: Option<ParamId>,
    /// Attention vector [2*d_z]; first half scores the query, second the message.
    attn: Option<ParamId>,
    rel: RelWeights,
}

struct GruIds {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

pub struct LocalLayer {
    heads: Vec<LocalHead>,
    gru: Option<GruIds>,
    leaky_slope: f64,
    uniform_attention: bool,
    d_v: usize,
    d_z: usize,
    n_relations: usize,
}

impl LocalLayer {
    /// Registers all parameters for one layer under `name.*`.
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        cfg: &ModelConfig,
        n_relations: usize,
    ) -> Result<LocalLayer> {
        if n_relations == 0 {
            return Err(Error::Config("local layer needs at least one relation".into()));
        }
        let d_v = cfg.d_v;
        let heads_n = cfg.local_heads;
        let d_z = d_v / heads_n;
        let uniform = cfg.has_ablation(Ablation::NoLocalAttention);
        let tied = cfg.has_ablation(Ablation::NoRelationWeights);
        let mut heads = Vec::with_capacity(heads_n);
        for k in 0..heads_n {
            let (wv, attn) = if uniform {
                (None, None)
            } else {
                (
                    Some(register_glorot(store, seed, &format!("{name}.head{k}.wv"), d_v, d_z)?),
                    Some(register_glorot_vector(
                        store,
                        seed,
                        &format!("{name}.head{k}.attn"),
                        2 * d_z,
                    )?),
                )
            };
            let rel = if tied {
                RelWeights::Tied(register_glorot(
                    store,
                    seed,
                    &format!("{name}.head{k}.rel_shared"),
                    d_v,
                    d_z,
                )?)
            } else if let Some(b) = cfg.basis_count {
                let bases_name = format!("{name}.head{k}.bases");
                let mut rng = stream(seed, &format!("init.{bases_name}"), &[]);
                let mut data = Vec::with_capacity(b * d_v * d_z);
                for _ in 0..b {
                    data.extend_from_slice(glorot(&mut rng, d_v, d_z).data());
                }
                let bases = store.register(&bases_name, Tensor::new(vec![b, d_v * d_z], data)?)?;
                let coeff =
                    register_glorot(store, seed, &format!("{name}.head{k}.coeff"), n_relations, b)?;
                RelWeights::Basis { bases, coeff }
            } else {
                let mut mats = Vec::with_capacity(n_relations);
                for r in 0..n_relations {
                    mats.push(register_glorot(
                        store,
                        seed,
                        &format!("{name}.head{k}.rel{r}"),
                        d_v,
                        d_z,
                    )?);
                }
                RelWeights::Full(mats)
            };
            heads.push(LocalHead { wv, attn, rel });
        }
        let gru = if cfg.has_ablation(Ablation::NoGru) {
            None
        } else {
            Some(GruIds {
                wz: register_glorot(store, seed, &format!("{name}.gru.wz"), d_v, d_v)?,
                uz: register_glorot(store, seed, &format!("{name}.gru.uz"), d_v, d_v)?,
                bz: register_vector(store, &format!("{name}.gru.bz"), d_v, 0.0)?,
                wr: register_glorot(store, seed, &format!("{name}.gru.wr"), d_v, d_v)?,
                ur: register_glorot(store, seed, &format!("{name}.gru.ur"), d_v, d_v)?,
                br: register_vector(store, &format!("{name}.gru.br"), d_v, 0.0)?,
                wh: register_glorot(store, seed, &format!("{name}.gru.wh"), d_v, d_v)?,
                uh: register_glorot(store, seed, &format!("{name}.gru.uh"), d_v, d_v)?,
                bh: register_vector(store, &format!("{name}.gru.bh"), d_v, 0.0)?,
            })
        };
        Ok(LocalLayer {
            heads,
            gru,
            leaky_slope: cfg.leaky_slope,
            uniform_attention: uniform,
            d_v,
            d_z,
            n_relations,
        })
    }

    /// The transform applied to messages arriving over relation `r`.
    pub fn relation_weight(&self, store: &ParamStore, head: usize, r: usize) -> Result<Tensor> {
        if r >= self.n_relations {
            return Err(Error::Invalid(format!(
                "relation id {r} out of range; layer knows {} relations",
                self.n_relations
            )));
        }
        let tensor = |id: ParamId| store.get(id).tensor.clone();
        match &self.heads[head].rel {
            RelWeights::Full(mats) => Ok(tensor(mats[r])),
            RelWeights::Tied(shared) => Ok(tensor(*shared)),
            RelWeights::Basis { bases, coeff } => {
                let bases = &store.get(*bases).tensor;
                let coeff = &store.get(*coeff).tensor;
                let b_count = bases.rows();
                let flat = self.d_v * self.d_z;
                let mut out = vec![0.0; flat];
                for b in 0..b_count {
                    let c = coeff.at(r, b);
                    let row = &bases.data()[b * flat..(b + 1) * flat];
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += c * x;
                    }
                }
                Tensor::new(vec![self.d_v, self.d_z], out)
            }
        }
    }

    /// Per-relation transformed node matrices for the relations in `used`,
    /// as tape nodes [n x d_z] aligned with `used`'s order.
    fn transforms(&self, ctx: &mut Ctx, h: NodeId, head: usize, used: &[usize]) -> Result<Vec<NodeId>> {
        match &self.heads[head].rel {
            RelWeights::Full(mats) => used
                .iter()
                .map(|&r| {
                    let w = ctx.param(mats[r])?;
                    ctx.tape.matmul(h, w)
                })
                .collect(),
            RelWeights::Tied(shared) => {
                let w = ctx.param(*shared)?;
                let t = ctx.tape.matmul(h, w)?;
                Ok(vec![t; used.len()])
            }
            RelWeights::Basis { bases, coeff } => {
                let bases = ctx.param(*bases)?;
                let coeff = ctx.param(*coeff)?;
                // all relation transforms at once: [R x B][B x d_v*d_z]
                let all = ctx.tape.matmul(coeff, bases)?;
                let flat = self.d_v * self.d_z;
                used.iter()
                    .map(|&r| {
                        let w = ctx.tape.slice_flat(all, r * flat, vec![self.d_v, self.d_z])?;
                        ctx.tape.matmul(h, w)
                    })
                    .collect()
            }
        }
    }

    /// One layer over `h` [n x d_v] with neighborhoods from `index`.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        h: NodeId,
        index: &GraphIndex,
        layer: usize,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        let n = index.n;
        if n == 0 {
            return Err(Error::EmptySupport("local layer on an empty graph".into()));
        }
        if ctx.tape.shape(h)[0] != n {
            return Err(Error::shape(
                "local_layer",
                format!("{} rows vs {} graph nodes", ctx.tape.shape(h)[0], n),
            ));
        }
        if let Some(&bad) = index.rel.iter().find(|&&r| r >= self.n_relations) {
            return Err(Error::Config(format!(
                "edge references relation id {bad} but the layer knows {} relations",
                self.n_relations
            )));
        }
        let e_count = index.edge_count();
        // relations actually present, remapped to compact transform slots
        let mut used: Vec<usize> = index.rel.clone();
        used.sort_unstable();
        used.dedup();
        let mut slot = vec![usize::MAX; self.n_relations];
        for (i, &r) in used.iter().enumerate() {
            slot[r] = i;
        }
        let sel: Vec<(usize, usize)> = index
            .rel
            .iter()
            .zip(&index.src)
            .map(|(&r, &u)| (slot[r], u))
            .collect();
        let targets: Vec<usize> = (0..n)
            .flat_map(|v| std::iter::repeat(v).take(index.degree(v)))
            .collect();

        let mut head_outs = Vec::with_capacity(self.heads.len());
        for (k, head) in self.heads.iter().enumerate() {
            let transforms = self.transforms(ctx, h, k, &used)?;
            let msg = ctx.tape.gather_rel(&transforms, &sel)?;
            let alpha = if self.uniform_attention {
                let w: Vec<f64> = targets.iter().map(|&v| 1.0 / index.degree(v) as f64).collect();
                let t = Tensor::new(vec![e_count, 1], w)?;
                ctx.constant(&t)?
            } else {
                let wv = ctx.param(head.wv.expect("learned attention has wv"))?;
                let attn = ctx.param(head.attn.expect("learned attention has attn"))?;
                let hv = ctx.tape.matmul(h, wv)?;
                let q = ctx.tape.gather_rows(hv, &targets)?;
                let a_query = ctx.tape.slice_flat(attn, 0, vec![self.d_z, 1])?;
                let a_msg = ctx.tape.slice_flat(attn, self.d_z, vec![self.d_z, 1])?;
                let s_q = ctx.tape.matmul(q, a_query)?;
                let s_m = ctx.tape.matmul(msg, a_msg)?;
                let scores = ctx.tape.add(s_q, s_m)?;
                let scores = ctx.tape.leaky_relu(scores, self.leaky_slope)?;
                ctx.tape.segment_softmax(scores, &index.offsets)?
            };
            if let Some(t) = trace.as_deref_mut() {
                t.local.push(LocalAttentionRecord {
                    layer,
                    head: k,
                    weights: ctx.tape.value(alpha).to_vec(),
                    offsets: index.offsets.clone(),
                });
            }
            let weighted = ctx.tape.mul_col(msg, alpha)?;
            head_outs.push(ctx.tape.segment_sum(weighted, &index.offsets)?);
        }
        let cat = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            ctx.tape.concat_cols(&head_outs)?
        };
        debug_assert_eq!(ctx.tape.shape(cat), &[n, self.d_v]);
        match &self.gru {
            Some(g) => {
                let nodes = GruNodes {
                    wz: ctx.param(g.wz)?,
                    uz: ctx.param(g.uz)?,
                    bz: ctx.param(g.bz)?,
                    wr: ctx.param(g.wr)?,
                    ur: ctx.param(g.ur)?,
                    br: ctx.param(g.br)?,
                    wh: ctx.param(g.wh)?,
                    uh: ctx.param(g.uh)?,
                    bh: ctx.param(g.bh)?,
                };
                gru_cell(&mut ctx.tape, cat, h, &nodes)
            }
            None => ctx.tape.add(h, cat),
        }
    }
}
