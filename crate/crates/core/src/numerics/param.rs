//! Named trainable parameters and the forward-pass context.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type ParamId = usize;

/// One trainable tensor plus its Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

/// Registration-ordered parameter arena. Names are dotted paths, unique, and
/// stable across save/load; checkpoints serialize in registration order.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        tensor.set_requires_grad(true);
        let numel = tensor.numel();
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.clone(),
            tensor,
            adam_m: vec![0.0; numel],
            adam_v: vec![0.0; numel],
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate()
    }

    /// Total scalar parameter count: the sum of element counts.
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn accumulate(&mut self, grads: &[(ParamId, Vec<f64>)]) {
        for (id, g) in grads {
            let slot = self.params[*id].tensor.grad_mut();
            for (s, gv) in slot.iter_mut().zip(g) {
                *s += gv;
            }
        }
    }

    pub fn grad_global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for p in &self.params {
            if let Some(g) = p.tensor.grad() {
                for v in g {
                    sq += v * v;
                }
            }
        }
        sq.sqrt()
    }

    /// Scales all gradients so their global norm is at most `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                for v in p.tensor.grad_mut() {
                    *v *= s;
                }
            }
        }
        norm
    }

    /// Bias-corrected Adam update from the stored gradients. `step` is
    /// 1-based. A parameter with zero gradient and zero moments is unchanged.
    pub fn adam_step(&mut self, step: u64, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        if step == 0 {
            return Err(Error::Invalid("adam_step: step must be >= 1".into()));
        }
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        for p in &mut self.params {
            let numel = p.tensor.numel();
            // missing grad buffer means an all-zero gradient this step
            for i in 0..numel {
                let g = p.tensor.grad().map_or(0.0, |gr| gr[i]);
                p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
                p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
                let mhat = p.adam_m[i] / bc1;
                let vhat = p.adam_v[i] / bc2;
                p.tensor.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            if !p.tensor.is_finite() {
                return Err(Error::NonFinite(format!("adam_step: parameter {}", p.name)));
            }
        }
        Ok(())
    }
}

/// One forward/backward pass: a tape plus lazily leased parameter leaves.
///
/// Leasing copies the current parameter value onto the tape once; repeated
/// `param` calls for the same id return the same node so gradient
/// contributions accumulate.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    leased: Vec<Option<NodeId>>,
    track_grads: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Ctx {
            tape: Tape::new(),
            leased: vec![None; store.len()],
            store,
            track_grads: true,
        }
    }

    /// Forward-only context: leaves do not require gradients, so `backward`
    /// has nothing to do and intermediate buffers stay small.
    pub fn inference(store: &'a ParamStore) -> Self {
        Ctx {
            tape: Tape::new(),
            leased: vec![None; store.len()],
            store,
            track_grads: false,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(node) = self.leased[id] {
            return Ok(node);
        }
        let t = &self.store.get(id).tensor;
        let node = self
            .tape
            .leaf(t.shape().to_vec(), t.data().to_vec(), self.track_grads)?;
        self.leased[id] = Some(node);
        Ok(node)
    }

    pub fn constant(&mut self, t: &Tensor) -> Result<NodeId> {
        self.tape.leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    /// Runs backward from `loss` (seeded with `seed`) and returns the
    /// gradient for every leased parameter, in lease order.
    pub fn grads(self, loss: NodeId, seed: f64) -> Result<Vec<(ParamId, Vec<f64>)>> {
        let grads = self.tape.backward_seeded(loss, seed)?;
        let mut out = Vec::new();
        for (pid, node) in self.leased.iter().enumerate() {
            if let Some(node) = node {
                if let Some(g) = grads.get(*node) {
                    out.push((pid, g.to_vec()));
                }
            }
        }
        Ok(out)
    }
}

// ---- initializers ----

/// Glorot-uniform matrix: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen::<f64>() * 2.0 * limit - limit)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("glorot shape")
}

/// Embedding rows drawn from N(0, d^-1/2) via Box-Muller.
pub fn normal_embed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let std = (cols as f64).powf(-0.5);
    let mut data = Vec::with_capacity(rows * cols);
    while data.len() < rows * cols {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * std);
        if data.len() < rows * cols {
            data.push(r * theta.sin() * std);
        }
    }
    Tensor::new(vec![rows, cols], data).expect("embed shape")
}

/// Rank-1 vector initializer.
pub fn vector(rows: usize, fill: f64) -> Tensor {
    Tensor::new(vec![rows], vec![fill; rows]).expect("vector shape")
}

/// Glorot-initialized rank-1 vector (used for attention vectors).
pub fn glorot_vector(rng: &mut ChaCha8Rng, len: usize) -> Tensor {
    let limit = (6.0 / (len + 1) as f64).sqrt();
    let data: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 2.0 * limit - limit).collect();
    Tensor::new(vec![len], data).expect("vector shape")
}

/// Square identity matrix.
pub fn identity(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::new(vec![n, n], data).expect("identity shape")
}

// ---- named registration ----
// Each parameter draws from its own stream keyed on its name, so values do
// not depend on registration order.

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    super::rng::stream(seed, &format!("init.{name}"), &[])
}

pub fn register_glorot(
    store: &mut ParamStore,
    seed: u64,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    let mut rng = init_rng(seed, name);
    store.register(name, glorot(&mut rng, rows, cols))
}

pub fn register_glorot_vector(
    store: &mut ParamStore,
    seed: u64,
    name: &str,
    len: usize,
) -> Result<ParamId> {
    let mut rng = init_rng(seed, name);
    store.register(name, glorot_vector(&mut rng, len))
}

pub fn register_embed(
    store: &mut ParamStore,
    seed: u64,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    let mut rng = init_rng(seed, name);
    store.register(name, normal_embed(&mut rng, rows, cols))
}

pub fn register_vector(store: &mut ParamStore, name: &str, len: usize, fill: f64) -> Result<ParamId> {
    store.register(name, vector(len, fill))
}

pub fn register_identity(store: &mut ParamStore, name: &str, n: usize) -> Result<ParamId> {
    store.register(name, identity(n))
}
