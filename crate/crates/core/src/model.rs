//! Model assembly: vocabularies, embedding tables, encoder, decoder, and
//! beam-search generation for one instance at a time.

use crate::config::TrainConfig;
use crate::decoder::{beam_search, Decoder, StepScorer};
use crate::encoder::{Encoder, ForwardTrace};
use crate::error::{Error, Result};
use crate::graph::{Corpus, GraphIndex, Instance, RelationVocab, Vocab, BOS, EOS};
use crate::numerics::{
    log_softmax_row, register_embed, sinusoidal_matrix, Ctx, NodeId, ParamId, ParamStore, Tensor,
};

/// A graph instance lowered to model inputs: vocabulary ids, node positions,
/// and the edge index the local encoder consumes.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub index: GraphIndex,
    /// Node-vocabulary id per token node; rows into the embedding table.
    pub node_ids: Vec<usize>,
    /// Token position within its entity (or title), restarting per entity.
    pub positions: Vec<usize>,
    /// Target-vocabulary ids of the reference text, no BOS/EOS.
    pub target_ids: Vec<u32>,
}

impl PreparedInstance {
    /// Decoder input: BOS followed by the reference tokens.
    pub fn prefix(&self) -> Vec<u32> {
        let mut p = Vec::with_capacity(self.target_ids.len() + 1);
        p.push(BOS);
        p.extend_from_slice(&self.target_ids);
        p
    }

    /// Teacher-forcing targets: the reference tokens followed by EOS.
    pub fn targets(&self) -> Vec<u32> {
        let mut t = self.target_ids.clone();
        t.push(EOS);
        t
    }

    /// Number of predicted positions (reference length + EOS).
    pub fn token_count(&self) -> usize {
        self.target_ids.len() + 1
    }
}

pub struct Model {
    pub cfg: TrainConfig,
    pub relations: RelationVocab,
    node_vocab: Vocab,
    /// `None` when the node vocabulary doubles as the target vocabulary.
    target_vocab: Option<Vocab>,
    embed_node: ParamId,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// Registers every parameter into `store` in a stable order (embeddings,
    /// encoder, decoder) so checkpoints can rebuild the exact same layout.
    pub fn new(
        store: &mut ParamStore,
        cfg: TrainConfig,
        node_vocab: Vocab,
        target_vocab: Option<Vocab>,
        relations: RelationVocab,
    ) -> Result<Model> {
        cfg.validate()?;
        let d_v = cfg.model.d_v;
        let seed = cfg.seed;
        let embed_node = register_embed(store, seed, "embed.node", node_vocab.len(), d_v)?;
        let embed_target = match &target_vocab {
            Some(v) => Some(register_embed(store, seed, "embed.target", v.len(), d_v)?),
            None => None,
        };
        let encoder = Encoder::new(store, seed, &cfg.model, relations.len())?;
        let decoder_vocab = target_vocab.as_ref().unwrap_or(&node_vocab).len();
        let decoder = Decoder::new(
            store,
            seed,
            &cfg.model,
            decoder_vocab,
            embed_target.unwrap_or(embed_node),
        )?;
        Ok(Model {
            cfg,
            relations,
            node_vocab,
            target_vocab,
            embed_node,
            encoder,
            decoder,
        })
    }

    /// Builds vocabularies from the corpus (one shared table, or separate
    /// node/target tables when `share_vocab` is off) and assembles the model.
    pub fn from_corpus(store: &mut ParamStore, cfg: TrainConfig, corpus: &Corpus) -> Result<Model> {
        let (node_vocab, target_vocab) = if cfg.share_vocab {
            let merged = Vocab::build(
                corpus
                    .node_tokens
                    .iter()
                    .chain(corpus.target_tokens.iter())
                    .map(String::as_str),
            )?;
            (merged, None)
        } else {
            (
                Vocab::build(corpus.node_tokens.iter().map(String::as_str))?,
                Some(Vocab::build(corpus.target_tokens.iter().map(String::as_str))?),
            )
        };
        Model::new(store, cfg, node_vocab, target_vocab, corpus.relations.clone())
    }

    pub fn node_vocab(&self) -> &Vocab {
        &self.node_vocab
    }

    pub fn target_vocab(&self) -> &Vocab {
        self.target_vocab.as_ref().unwrap_or(&self.node_vocab)
    }

    pub fn shares_vocab(&self) -> bool {
        self.target_vocab.is_none()
    }

    pub fn prepare(&self, inst: &Instance) -> Result<PreparedInstance> {
        if inst.graph.relations != self.relations {
            return Err(Error::Graph(
                "instance relation vocabulary differs from the model's".into(),
            ));
        }
        let node_ids = inst
            .graph
            .nodes
            .iter()
            .map(|n| self.node_vocab.id(&n.token) as usize)
            .collect();
        let positions = inst.graph.nodes.iter().map(|n| n.position).collect();
        let target_ids = self.target_vocab().ids(&inst.target);
        Ok(PreparedInstance {
            index: GraphIndex::new(&inst.graph),
            node_ids,
            positions,
            target_ids,
        })
    }

    /// Layer-0 node states: token embedding plus sinusoidal position.
    fn h0(&self, ctx: &mut Ctx, prep: &PreparedInstance) -> Result<NodeId> {
        let embed = ctx.param(self.embed_node)?;
        let tok = ctx.tape.gather_rows(embed, &prep.node_ids)?;
        let pos = sinusoidal_matrix(&prep.positions, self.cfg.model.d_v)?;
        let pos = ctx.constant(&pos)?;
        ctx.tape.add(tok, pos)
    }

    pub fn encode(
        &self,
        ctx: &mut Ctx,
        prep: &PreparedInstance,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<NodeId> {
        let h0 = self.h0(ctx, prep)?;
        self.encoder.encode(ctx, h0, &prep.index, trace)
    }

    /// Label-smoothed teacher-forcing loss, mean nats per predicted token.
    pub fn loss(&self, ctx: &mut Ctx, prep: &PreparedInstance, eps: f64) -> Result<NodeId> {
        let mem = self.encode(ctx, prep, None)?;
        self.decoder
            .loss(ctx, mem, &prep.prefix(), &prep.targets(), eps)
    }

    /// Runs the encoder once and captures every attention distribution.
    pub fn traced_encode(&self, store: &ParamStore, prep: &PreparedInstance) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::default();
        let mut ctx = Ctx::inference(store);
        self.encode(&mut ctx, prep, Some(&mut trace))?;
        Ok(trace)
    }

    /// Encodes once and returns a step scorer for beam search over this
    /// instance.
    pub fn scorer<'a>(
        &'a self,
        store: &'a ParamStore,
        prep: &PreparedInstance,
    ) -> Result<ModelScorer<'a>> {
        let mut ctx = Ctx::inference(store);
        let mem = self.encode(&mut ctx, prep, None)?;
        let mem = Tensor::new(ctx.tape.shape(mem).to_vec(), ctx.tape.value(mem).to_vec())?;
        Ok(ModelScorer {
            model: self,
            store,
            mem,
        })
    }

    /// Beam-search generation; returns emitted target-vocabulary ids.
    pub fn generate(
        &self,
        store: &ParamStore,
        prep: &PreparedInstance,
        beam_size: usize,
        alpha: f64,
        max_len: usize,
    ) -> Result<Vec<u32>> {
        let mut scorer = self.scorer(store, prep)?;
        beam_search(&mut scorer, beam_size, alpha, max_len)
    }

    /// Beam-search generation mapped back to token strings.
    pub fn generate_text(
        &self,
        store: &ParamStore,
        prep: &PreparedInstance,
        beam_size: usize,
        alpha: f64,
        max_len: usize,
    ) -> Result<Vec<String>> {
        let ids = self.generate(store, prep, beam_size, alpha, max_len)?;
        let v = self.target_vocab();
        Ok(ids.iter().map(|&id| v.token(id).to_string()).collect())
    }
}

/// Caches the encoded node embeddings and re-runs the decoder per step.
pub struct ModelScorer<'a> {
    model: &'a Model,
    store: &'a ParamStore,
    mem: Tensor,
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.target_vocab().len()
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut ctx = Ctx::inference(self.store);
        let mem = ctx.constant(&self.mem)?;
        let logits = self.model.decoder.forward(&mut ctx, mem, prefix, None)?;
        let v = self.vocab_size();
        let flat = ctx.tape.value(logits);
        Ok(log_softmax_row(&flat[(prefix.len() - 1) * v..]))
    }
}
