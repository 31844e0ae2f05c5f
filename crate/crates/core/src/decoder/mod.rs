//! Autoregressive decoder: causal self-attention over the generated prefix,
//! cross-attention over encoder node embeddings, and the label-smoothed
//! training loss. Beam search lives in [`beam`].

pub mod beam;

pub use beam::{beam_search, length_penalty, Hypothesis, StepScorer};

use crate::config::ModelConfig;
use crate::encoder::{AttentionRecord, LN_EPS};
use crate::error::{Error, Result};
use crate::numerics::param::{register_glorot, register_vector};
use crate::numerics::{ffn, sinusoidal_matrix, Ctx, NodeId, ParamId, ParamStore};

/// Attention weights collected during one decoder forward.
#[derive(Default)]
pub struct DecoderTrace {
    /// Causal rows: masked-out keys hold exact zeros.
    pub self_attn: Vec<AttentionRecord>,
    /// Rows over all n node embeddings.
    pub cross_attn: Vec<AttentionRecord>,
}

struct AttnHead {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

struct AttnBlock {
    heads: Vec<AttnHead>,
    wo: ParamId,
}

struct NormParams {
    gain: ParamId,
    bias: ParamId,
}

struct DecoderLayer {
    self_attn: AttnBlock,
    ln1: NormParams,
    cross_attn: AttnBlock,
    ln2: NormParams,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln3: NormParams,
}

pub struct Decoder {
    layers: Vec<DecoderLayer>,
    /// Maps encoder output width to d_v when they differ.
    bridge: Option<ParamId>,
    out_w: ParamId,
    out_b: ParamId,
    /// Token embedding table [V x d_v]; owned by the model, leased here.
    embed: ParamId,
    d_v: usize,
    d_z: usize,
    vocab_size: usize,
}

fn attn_block(
    store: &mut ParamStore,
    seed: u64,
    name: &str,
    heads: usize,
    d_v: usize,
    d_z: usize,
) -> Result<AttnBlock> {
    let mut hs = Vec::with_capacity(heads);
    for k in 0..heads {
        hs.push(AttnHead {
            wq: register_glorot(store, seed, &format!("{name}.head{k}.wq"), d_v, d_z)?,
            wk: register_glorot(store, seed, &format!("{name}.head{k}.wk"), d_v, d_z)?,
            wv: register_glorot(store, seed, &format!("{name}.head{k}.wv"), d_v, d_z)?,
        });
    }
    let wo = register_glorot(store, seed, &format!("{name}.wo"), d_v, d_v)?;
    Ok(AttnBlock { heads: hs, wo })
}

fn norm(store: &mut ParamStore, name: &str, d: usize) -> Result<NormParams> {
    Ok(NormParams {
        gain: register_vector(store, &format!("{name}.gain"), d, 1.0)?,
        bias: register_vector(store, &format!("{name}.bias"), d, 0.0)?,
    })
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        cfg: &ModelConfig,
        vocab_size: usize,
        embed: ParamId,
    ) -> Result<Decoder> {
        if vocab_size == 0 {
            return Err(Error::Config("decoder needs a nonempty vocabulary".into()));
        }
        let d_v = cfg.d_v;
        let d_z = d_v / cfg.decoder_heads;
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            let base = format!("decoder.layer{l}");
            layers.push(DecoderLayer {
                self_attn: attn_block(store, seed, &format!("{base}.self"), cfg.decoder_heads, d_v, d_z)?,
                ln1: norm(store, &format!("{base}.ln1"), d_v)?,
                cross_attn: attn_block(store, seed, &format!("{base}.cross"), cfg.decoder_heads, d_v, d_z)?,
                ln2: norm(store, &format!("{base}.ln2"), d_v)?,
                ffn_w1: register_glorot(store, seed, &format!("{base}.ffn.w1"), d_v, cfg.d_ff)?,
                ffn_b1: register_vector(store, &format!("{base}.ffn.b1"), cfg.d_ff, 0.0)?,
                ffn_w2: register_glorot(store, seed, &format!("{base}.ffn.w2"), cfg.d_ff, d_v)?,
                ffn_b2: register_vector(store, &format!("{base}.ffn.b2"), d_v, 0.0)?,
                ln3: norm(store, &format!("{base}.ln3"), d_v)?,
            });
        }
        let d_out = cfg.encoder_output_width();
        let bridge = if d_out != d_v {
            Some(register_glorot(store, seed, "decoder.bridge", d_out, d_v)?)
        } else {
            None
        };
        let out_w = register_glorot(store, seed, "decoder.out.w", d_v, vocab_size)?;
        let out_b = register_vector(store, "decoder.out.b", vocab_size, 0.0)?;
        Ok(Decoder { layers, bridge, out_w, out_b, embed, d_v, d_z, vocab_size })
    }

    fn attention(
        &self,
        ctx: &mut Ctx,
        block: &AttnBlock,
        queries: NodeId,
        keys: NodeId,
        mask: Option<&[bool]>,
        record: Option<(&mut Vec<AttentionRecord>, usize)>,
    ) -> Result<NodeId> {
        let t = ctx.tape.shape(queries)[0];
        let n = ctx.tape.shape(keys)[0];
        let mut record = record;
        let mut outs = Vec::with_capacity(block.heads.len());
        for (k, head) in block.heads.iter().enumerate() {
            let wq = ctx.param(head.wq)?;
            let wk = ctx.param(head.wk)?;
            let wv = ctx.param(head.wv)?;
            let q = ctx.tape.matmul(queries, wq)?;
            let kk = ctx.tape.matmul(keys, wk)?;
            let v = ctx.tape.matmul(keys, wv)?;
            let scores = ctx.tape.matmul_nt(q, kk)?;
            let scaled = ctx.tape.scale(scores, 1.0 / (self.d_z as f64).sqrt())?;
            let alpha = ctx.tape.softmax_rows(scaled, mask)?;
            if let Some((records, layer)) = record.as_mut() {
                records.push(AttentionRecord {
                    layer: *layer,
                    head: k,
                    weights: crate::numerics::Tensor::new(
                        vec![t, n],
                        ctx.tape.value(alpha).to_vec(),
                    )?,
                });
            }
            outs.push(ctx.tape.matmul(alpha, v)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { ctx.tape.concat_cols(&outs)? };
        let wo = ctx.param(block.wo)?;
        ctx.tape.matmul(cat, wo)
    }

    /// Logits [t x V] for every prefix position. Position i sees prefix[..=i]
    /// and all node embeddings.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        node_embs: NodeId,
        prefix: &[u32],
        mut trace: Option<&mut DecoderTrace>,
    ) -> Result<NodeId> {
        if prefix.is_empty() {
            return Err(Error::Invalid("decoder prefix must start with BOS".into()));
        }
        if let Some(&bad) = prefix.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Invalid(format!(
                "token id {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        let t = prefix.len();
        let mem = match self.bridge {
            Some(b) => {
                let b = ctx.param(b)?;
                ctx.tape.matmul(node_embs, b)?
            }
            None => node_embs,
        };
        let embed = ctx.param(self.embed)?;
        let rows: Vec<usize> = prefix.iter().map(|&id| id as usize).collect();
        let tok = ctx.tape.gather_rows(embed, &rows)?;
        let positions: Vec<usize> = (0..t).collect();
        let pos = sinusoidal_matrix(&positions, self.d_v)?;
        let pos = ctx.constant(&pos)?;
        let mut x = ctx.tape.add(tok, pos)?;

        // causal mask: query row i keeps keys 0..=i
        let mut causal = vec![false; t * t];
        for i in 0..t {
            for j in 0..=i {
                causal[i * t + j] = true;
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let sa = self.attention(
                ctx,
                &layer.self_attn,
                x,
                x,
                Some(&causal),
                trace.as_deref_mut().map(|tr| (&mut tr.self_attn, l)),
            )?;
            let res = ctx.tape.add(x, sa)?;
            let g = ctx.param(layer.ln1.gain)?;
            let b = ctx.param(layer.ln1.bias)?;
            let a = ctx.tape.layer_norm(res, g, b, LN_EPS)?;

            let ca = self.attention(
                ctx,
                &layer.cross_attn,
                a,
                mem,
                None,
                trace.as_deref_mut().map(|tr| (&mut tr.cross_attn, l)),
            )?;
            let res = ctx.tape.add(a, ca)?;
            let g = ctx.param(layer.ln2.gain)?;
            let b = ctx.param(layer.ln2.bias)?;
            let bnorm = ctx.tape.layer_norm(res, g, b, LN_EPS)?;

            let w1 = ctx.param(layer.ffn_w1)?;
            let b1 = ctx.param(layer.ffn_b1)?;
            let w2 = ctx.param(layer.ffn_w2)?;
            let b2 = ctx.param(layer.ffn_b2)?;
            let fed = ffn(&mut ctx.tape, bnorm, w1, b1, w2, b2)?;
            let res = ctx.tape.add(bnorm, fed)?;
            let g = ctx.param(layer.ln3.gain)?;
            let b = ctx.param(layer.ln3.bias)?;
            x = ctx.tape.layer_norm(res, g, b, LN_EPS)?;
        }
        let w = ctx.param(self.out_w)?;
        let b = ctx.param(self.out_b)?;
        let logits = ctx.tape.matmul(x, w)?;
        ctx.tape.add_bias(logits, b)
    }

    /// Mean label-smoothed negative log-likelihood of `targets` under the
    /// logits for `prefix` (teacher forcing: prefix[i] predicts targets[i]).
    pub fn loss(
        &self,
        ctx: &mut Ctx,
        node_embs: NodeId,
        prefix: &[u32],
        targets: &[u32],
        eps: f64,
    ) -> Result<NodeId> {
        if prefix.len() != targets.len() {
            return Err(Error::shape(
                "decoder_loss",
                format!("{} prefix positions vs {} targets", prefix.len(), targets.len()),
            ));
        }
        let logits = self.forward(ctx, node_embs, prefix, None)?;
        let t: Vec<usize> = targets.iter().map(|&id| id as usize).collect();
        ctx.tape.label_smoothed_nll(logits, &t, eps)
    }
}
