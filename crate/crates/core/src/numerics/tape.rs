//! Reverse-mode autodiff on a flat operation tape.
//!
//! Each forward builder validates shapes, computes the value eagerly, and
//! records one node. `backward` replays the tape in reverse, accumulating
//! vector-Jacobian products into per-node gradient buffers. Operands always
//! have smaller node ids than results, so one reverse sweep visits every
//! node exactly once.
//!
//! A tape is confined to a single thread and lives for one forward/backward
//! pass; parameters are copied in as leaves and gradients are read back out
//! by node id.

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    /// a[n x k] * b[k x m]
    Matmul { a: NodeId, b: NodeId },
    /// a[n x k] * b[m x k]^T
    MatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// x[n x m] + bias[m] broadcast over rows
    AddBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: f64 },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// Row-wise softmax; `mask[i*m+j] == false` zeroes entry (i, j) exactly.
    SoftmaxRows { x: NodeId, mask: Option<Vec<bool>> },
    /// Fused layer norm over rows with affine gain/bias.
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// out[i] = x[rows[i]]; duplicate rows accumulate on backward.
    GatherRows { x: NodeId, rows: Vec<usize> },
    /// out[i] = transforms[sel[i].0][sel[i].1]; scatter-add on backward.
    GatherRel {
        transforms: Vec<NodeId>,
        sel: Vec<(usize, usize)>,
    },
    /// Softmax within each contiguous row segment of a column vector.
    SegmentSoftmax { x: NodeId, offsets: Vec<usize> },
    /// out[s] = sum of x rows in segment s.
    SegmentSum { x: NodeId, offsets: Vec<usize> },
    /// out[i, j] = x[i, j] * w[i, 0]
    MulCol { x: NodeId, w: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    /// Contiguous slice of the flat value buffer, reinterpreted with a new shape.
    SliceFlat { x: NodeId, offset: usize },
    SumAll { x: NodeId },
    /// Mean over rows of -sum_v q(v) log p(v) with q the smoothed target
    /// distribution; saves softmax probabilities for the backward pass.
    LabelSmoothedNll {
        logits: NodeId,
        targets: Vec<usize>,
        eps: f64,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }
}

/// Gradients keyed by node id, returned by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    visits: usize,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_node.get(id).and_then(|g| g.as_deref())
    }

    /// Number of nodes visited by the reverse sweep. Equals the number of
    /// recorded nodes up to and including the loss node: each is touched once.
    pub fn visits(&self) -> usize {
        self.visits
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check2d(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let n = &self.nodes[id];
        if n.shape.len() != 2 {
            return Err(Error::shape(op, format!("expected rank 2, got {:?}", n.shape)));
        }
        Ok((n.shape[0], n.shape[1]))
    }

    // ---- leaves ----

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {:?} vs {} values", shape, value.len()),
            ));
        }
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape("leaf", format!("rank must be 1 or 2, got {:?}", shape)));
        }
        Ok(self.push(Op::Leaf, shape, value, requires_grad))
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<NodeId> {
        self.leaf(shape, value, false)
    }

    // ---- arithmetic ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.check2d("matmul", a)?;
        let (k2, m) = self.check2d("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n}x{k}] * [{k2}x{m}]")));
        }
        let mut out = vec![0.0; n * m];
        super::tensor::matmul_acc(&self.nodes[a].value, &self.nodes[b].value, &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Matmul { a, b }, vec![n, m], out, rg))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.check2d("matmul_nt", a)?;
        let (m, k2) = self.check2d("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{n}x{k}] * [{m}x{k2}]^T")));
        }
        let mut out = vec![0.0; n * m];
        super::tensor::matmul_nt_acc(&self.nodes[a].value, &self.nodes[b].value, &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatmulNT { a, b }, vec![n, m], out, rg))
    }

    fn zip_same_shape(&mut self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.nodes[a].shape, self.nodes[b].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("add", a, b)?;
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add { a, b }, shape, value, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("sub", a, b)?;
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub { a, b }, shape, value, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("mul", a, b)?;
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul { a, b }, shape, value, rg))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = self.check2d("add_bias", x)?;
        if self.nodes[bias].shape != [m] {
            return Err(Error::shape(
                "add_bias",
                format!("x [{n}x{m}] vs bias {:?}", self.nodes[bias].shape),
            ));
        }
        let mut value = self.nodes[x].value.clone();
        let b = &self.nodes[bias].value;
        for i in 0..n {
            for j in 0..m {
                value[i * m + j] += b[j];
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddBias { x, bias }, vec![n, m], value, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|v| v * c).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Scale { x, c }, shape, value, rg))
    }

    // ---- pointwise nonlinearities ----

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Relu { x }, shape, value, rg))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[x]
            .value
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::LeakyRelu { x, slope }, shape, value, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Sigmoid { x }, shape, value, rg))
    }

    pub fn tanh_op(&mut self, x: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Tanh { x }, shape, value, rg))
    }

    // ---- normalizers ----

    pub fn softmax_rows(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (n, m) = self.check2d("softmax", x)?;
        if let Some(mk) = mask {
            if mk.len() != n * m {
                return Err(Error::shape(
                    "softmax",
                    format!("mask length {} vs {} entries", mk.len(), n * m),
                ));
            }
        }
        let value = softmax_rows_raw(&self.nodes[x].value, n, m, mask)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::SoftmaxRows {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
            vec![n, m],
            value,
            rg,
        ))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (n, m) = self.check2d("layer_norm", x)?;
        if self.nodes[gain].shape != [m] || self.nodes[bias].shape != [m] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "x [{n}x{m}] vs gain {:?} bias {:?}",
                    self.nodes[gain].shape, self.nodes[bias].shape
                ),
            ));
        }
        let xs = &self.nodes[x].value;
        let g = &self.nodes[gain].value;
        let b = &self.nodes[bias].value;
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut value = vec![0.0; n * m];
        for i in 0..n {
            let row = &xs[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let denom = var + eps;
            if denom <= 0.0 {
                return Err(Error::NonFinite(format!(
                    "layer_norm: zero variance row {i} with eps {eps}"
                )));
            }
            let is = 1.0 / denom.sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let xh = (row[j] - mean) * is;
                xhat[i * m + j] = xh;
                value[i * m + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            vec![n, m],
            value,
            rg,
        ))
    }

    // ---- gather / scatter ----

    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (n, m) = self.check2d("gather_rows", x)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of {n}")));
        }
        let mut value = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            value.extend_from_slice(&self.nodes[x].value[r * m..(r + 1) * m]);
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::GatherRows { x, rows: rows.to_vec() },
            vec![rows.len(), m],
            value,
            rg,
        ))
    }

    /// Per-row gather across several same-shaped source matrices:
    /// `out[i] = transforms[sel[i].0][sel[i].1]`.
    pub fn gather_rel(&mut self, transforms: &[NodeId], sel: &[(usize, usize)]) -> Result<NodeId> {
        if transforms.is_empty() {
            return Err(Error::EmptySupport("gather_rel: no source matrices".into()));
        }
        let (n, m) = self.check2d("gather_rel", transforms[0])?;
        for &t in &transforms[1..] {
            let (n2, m2) = self.check2d("gather_rel", t)?;
            if (n2, m2) != (n, m) {
                return Err(Error::shape(
                    "gather_rel",
                    format!("[{n}x{m}] vs [{n2}x{m2}]"),
                ));
            }
        }
        for &(t, r) in sel {
            if t >= transforms.len() || r >= n {
                return Err(Error::shape(
                    "gather_rel",
                    format!("selector ({t}, {r}) out of ({}, {n})", transforms.len()),
                ));
            }
        }
        let mut value = Vec::with_capacity(sel.len() * m);
        for &(t, r) in sel {
            value.extend_from_slice(&self.nodes[transforms[t]].value[r * m..(r + 1) * m]);
        }
        let rg = self.rg(transforms);
        Ok(self.push(
            Op::GatherRel {
                transforms: transforms.to_vec(),
                sel: sel.to_vec(),
            },
            vec![sel.len(), m],
            value,
            rg,
        ))
    }

    fn check_offsets(&self, op: &'static str, offsets: &[usize], rows: usize, strict: bool) -> Result<()> {
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
            return Err(Error::shape(
                op,
                format!("offsets must run 0..={rows}, got {:?}", offsets),
            ));
        }
        for w in offsets.windows(2) {
            if w[1] < w[0] {
                return Err(Error::shape(op, format!("offsets not monotone: {:?}", offsets)));
            }
            if strict && w[1] == w[0] {
                return Err(Error::EmptySupport(format!("{op}: empty segment in {:?}", offsets)));
            }
        }
        Ok(())
    }

    pub fn segment_softmax(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let (e, m) = self.check2d("segment_softmax", x)?;
        if m != 1 {
            return Err(Error::shape("segment_softmax", format!("expected [{e}x1], got [{e}x{m}]")));
        }
        self.check_offsets("segment_softmax", offsets, e, true)?;
        let xs = &self.nodes[x].value;
        let mut value = vec![0.0; e];
        for w in offsets.windows(2) {
            let seg = &xs[w[0]..w[1]];
            let mx = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, &v) in seg.iter().enumerate() {
                let ex = (v - mx).exp();
                value[w[0] + k] = ex;
                z += ex;
            }
            for k in w[0]..w[1] {
                value[k] /= z;
            }
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::SegmentSoftmax {
                x,
                offsets: offsets.to_vec(),
            },
            vec![e, 1],
            value,
            rg,
        ))
    }

    pub fn segment_sum(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let (e, m) = self.check2d("segment_sum", x)?;
        self.check_offsets("segment_sum", offsets, e, false)?;
        let s = offsets.len() - 1;
        let xs = &self.nodes[x].value;
        let mut value = vec![0.0; s * m];
        for (si, w) in offsets.windows(2).enumerate() {
            for r in w[0]..w[1] {
                for j in 0..m {
                    value[si * m + j] += xs[r * m + j];
                }
            }
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::SegmentSum {
                x,
                offsets: offsets.to_vec(),
            },
            vec![s, m],
            value,
            rg,
        ))
    }

    pub fn mul_col(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (e, m) = self.check2d("mul_col", x)?;
        let (e2, one) = self.check2d("mul_col", w)?;
        if e != e2 || one != 1 {
            return Err(Error::shape("mul_col", format!("x [{e}x{m}] vs w [{e2}x{one}]")));
        }
        let xs = &self.nodes[x].value;
        let ws = &self.nodes[w].value;
        let mut value = vec![0.0; e * m];
        for i in 0..e {
            for j in 0..m {
                value[i * m + j] = xs[i * m + j] * ws[i];
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(Op::MulCol { x, w }, vec![e, m], value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptySupport("concat_cols: no parts".into()));
        }
        let (n, _) = self.check2d("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (np, mp) = self.check2d("concat_cols", p)?;
            if np != n {
                return Err(Error::shape("concat_cols", format!("{n} rows vs {np} rows")));
            }
            widths.push(mp);
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &mp) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.nodes[p].value[i * mp..(i + 1) * mp]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Op::ConcatCols { parts: parts.to_vec() },
            vec![n, total],
            value,
            rg,
        ))
    }

    pub fn slice_flat(&mut self, x: NodeId, offset: usize, shape: Vec<usize>) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        let numel = self.nodes[x].value.len();
        if offset + len > numel {
            return Err(Error::shape(
                "slice_flat",
                format!("[{offset}..{}] out of {numel}", offset + len),
            ));
        }
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape("slice_flat", format!("rank must be 1 or 2, got {:?}", shape)));
        }
        let value = self.nodes[x].value[offset..offset + len].to_vec();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::SliceFlat { x, offset }, shape, value, rg))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x].value.iter().sum();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::SumAll { x }, vec![1], vec![s], rg))
    }

    /// Cross-entropy against the label-smoothed target distribution, averaged
    /// over rows: mass `1 - eps` on the target id, `eps / (V - 1)` elsewhere.
    pub fn label_smoothed_nll(&mut self, logits: NodeId, targets: &[usize], eps: f64) -> Result<NodeId> {
        let (t, v) = self.check2d("label_smoothed_nll", logits)?;
        if targets.len() != t {
            return Err(Error::shape(
                "label_smoothed_nll",
                format!("{t} rows vs {} targets", targets.len()),
            ));
        }
        if t == 0 {
            return Err(Error::EmptySupport("label_smoothed_nll: no positions".into()));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Invalid(format!("label_smoothed_nll: eps {eps} outside [0, 1)")));
        }
        if eps > 0.0 && v < 2 {
            return Err(Error::Invalid(format!(
                "label_smoothed_nll: smoothing needs vocab >= 2, got {v}"
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::shape("label_smoothed_nll", format!("target {bad} out of {v}")));
        }
        let xs = &self.nodes[logits].value;
        let off = if v > 1 { eps / (v as f64 - 1.0) } else { 0.0 };
        let on = 1.0 - eps;
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0;
        for i in 0..t {
            let row = &xs[i * v..(i + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &x in row {
                z += (x - mx).exp();
            }
            let log_z = z.ln() + mx;
            let mut row_loss = 0.0;
            for j in 0..v {
                let logp = row[j] - log_z;
                probs[i * v + j] = logp.exp();
                let q = if j == targets[i] { on } else { off };
                if q != 0.0 {
                    row_loss -= q * logp;
                }
            }
            total += row_loss;
        }
        let value = vec![total / t as f64];
        let rg = self.nodes[logits].requires_grad;
        Ok(self.push(
            Op::LabelSmoothedNll {
                logits,
                targets: targets.to_vec(),
                eps,
                probs,
            },
            vec![1],
            value,
            rg,
        ))
    }

    // ---- backward ----

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse sweep from `loss` (a scalar node) seeded with `seed`.
    pub fn backward_seeded(&self, loss: NodeId, seed: f64) -> Result<Gradients> {
        if loss >= self.nodes.len() {
            return Err(Error::Invalid(format!("backward: node {loss} not on tape")));
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss].shape),
            ));
        }
        if !self.nodes[loss].value[0].is_finite() {
            return Err(Error::NonFinite("backward: loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![seed]);
        let mut visits = 0;
        for id in (0..=loss).rev() {
            visits += 1;
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.backward_node(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { by_node: grads, visits })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        f(slot);
    }

    fn backward_node(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (n, k) = (self.nodes[*a].rows(), self.nodes[*a].cols());
                let m = self.nodes[*b].cols();
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                // dA += g * B^T ; dB += A^T * g
                self.accum(grads, *a, |da| super::tensor::matmul_nt_acc(g, bv, da, n, m, k));
                self.accum(grads, *b, |db| super::tensor::matmul_tn_acc(av, g, db, n, k, m));
            }
            Op::MatmulNT { a, b } => {
                let (n, k) = (self.nodes[*a].rows(), self.nodes[*a].cols());
                let m = self.nodes[*b].rows();
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                // out = A * B^T ; dA += g * B ; dB += g^T * A
                self.accum(grads, *a, |da| super::tensor::matmul_acc(g, bv, da, n, m, k));
                self.accum(grads, *b, |db| super::tensor::matmul_tn_acc(g, av, db, n, m, k));
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, |da| axpy(da, g, 1.0));
                self.accum(grads, *b, |db| axpy(db, g, 1.0));
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, |da| axpy(da, g, 1.0));
                self.accum(grads, *b, |db| axpy(db, g, -1.0));
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                self.accum(grads, *a, |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                });
                self.accum(grads, *b, |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddBias { x, bias } => {
                let m = self.nodes[*bias].value.len();
                self.accum(grads, *x, |dx| axpy(dx, g, 1.0));
                self.accum(grads, *bias, |db| {
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % m] += gv;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accum(grads, *x, |dx| axpy(dx, g, c));
            }
            Op::Relu { x } => {
                let xv = &self.nodes[*x].value;
                self.accum(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        if xv[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &self.nodes[*x].value;
                let s = *slope;
                self.accum(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * if xv[i] > 0.0 { 1.0 } else { s };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = &self.nodes[id].value;
                self.accum(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = &self.nodes[id].value;
                self.accum(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                });
            }
            Op::SoftmaxRows { x, mask } => {
                let y = &self.nodes[id].value;
                let (n, m) = (self.nodes[id].rows(), self.nodes[id].cols());
                self.accum(grads, *x, |dx| {
                    for i in 0..n {
                        let yi = &y[i * m..(i + 1) * m];
                        let gi = &g[i * m..(i + 1) * m];
                        let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            let keep = mask.as_ref().map_or(true, |mk| mk[i * m + j]);
                            if keep {
                                dx[i * m + j] += yi[j] * (gi[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (n, m) = (self.nodes[id].rows(), self.nodes[id].cols());
                let gv = &self.nodes[*gain].value;
                self.accum(grads, *x, |dx| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        let xh = &xhat[i * m..(i + 1) * m];
                        // dxhat = g * gain; project out mean and xhat component
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..m {
                            let d = gi[j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= m as f64;
                        mean_dx /= m as f64;
                        for j in 0..m {
                            let d = gi[j] * gv[j];
                            dx[i * m + j] += inv_std[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                self.accum(grads, *gain, |dg| {
                    for i in 0..n {
                        for j in 0..m {
                            dg[j] += g[i * m + j] * xhat[i * m + j];
                        }
                    }
                });
                self.accum(grads, *bias, |db| {
                    for i in 0..n {
                        for j in 0..m {
                            db[j] += g[i * m + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let m = self.nodes[id].cols();
                self.accum(grads, *x, |dx| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..m {
                            dx[r * m + j] += g[i * m + j];
                        }
                    }
                });
            }
            Op::GatherRel { transforms, sel } => {
                let m = self.nodes[id].cols();
                for (ti, &t) in transforms.iter().enumerate() {
                    self.accum(grads, t, |dt| {
                        for (i, &(st, sr)) in sel.iter().enumerate() {
                            if st == ti {
                                for j in 0..m {
                                    dt[sr * m + j] += g[i * m + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::SegmentSoftmax { x, offsets } => {
                let y = &self.nodes[id].value;
                self.accum(grads, *x, |dx| {
                    for w in offsets.windows(2) {
                        let dot: f64 = (w[0]..w[1]).map(|i| y[i] * g[i]).sum();
                        for i in w[0]..w[1] {
                            dx[i] += y[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::SegmentSum { x, offsets } => {
                let m = self.nodes[id].cols();
                self.accum(grads, *x, |dx| {
                    for (si, w) in offsets.windows(2).enumerate() {
                        for r in w[0]..w[1] {
                            for j in 0..m {
                                dx[r * m + j] += g[si * m + j];
                            }
                        }
                    }
                });
            }
            Op::MulCol { x, w } => {
                let (e, m) = (self.nodes[id].rows(), self.nodes[id].cols());
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                self.accum(grads, *x, |dx| {
                    for i in 0..e {
                        for j in 0..m {
                            dx[i * m + j] += g[i * m + j] * wv[i];
                        }
                    }
                });
                self.accum(grads, *w, |dw| {
                    for i in 0..e {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += g[i * m + j] * xv[i * m + j];
                        }
                        dw[i] += s;
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let n = self.nodes[id].rows();
                let total = self.nodes[id].cols();
                let mut col = 0;
                for &p in parts {
                    let mp = self.nodes[p].cols();
                    self.accum(grads, p, |dp| {
                        for i in 0..n {
                            for j in 0..mp {
                                dp[i * mp + j] += g[i * total + col + j];
                            }
                        }
                    });
                    col += mp;
                }
            }
            Op::SliceFlat { x, offset } => {
                let off = *offset;
                self.accum(grads, *x, |dx| {
                    for (i, &gv) in g.iter().enumerate() {
                        dx[off + i] += gv;
                    }
                });
            }
            Op::SumAll { x } => {
                let gv = g[0];
                self.accum(grads, *x, |dx| {
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::LabelSmoothedNll {
                logits,
                targets,
                eps,
                probs,
            } => {
                let (t, v) = (self.nodes[*logits].rows(), self.nodes[*logits].cols());
                let off = if v > 1 { eps / (v as f64 - 1.0) } else { 0.0 };
                let on = 1.0 - eps;
                let scale = g[0] / t as f64;
                self.accum(grads, *logits, |dl| {
                    for i in 0..t {
                        for j in 0..v {
                            let q = if j == targets[i] { on } else { off };
                            dl[i * v + j] += scale * (probs[i * v + j] - q);
                        }
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// y += alpha * x
fn axpy(y: &mut [f64], x: &[f64], alpha: f64) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += alpha * x[i];
    }
}

/// Numerically stable row softmax on a flat buffer. `mask` entries set to
/// `false` are excluded from normalization and come out exactly zero.
pub fn softmax_rows_raw(x: &[f64], n: usize, m: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &x[i * m..(i + 1) * m];
        let keep = |j: usize| mask.map_or(true, |mk| mk[i * m + j]);
        let mut mx = f64::NEG_INFINITY;
        for j in 0..m {
            if keep(j) && row[j] > mx {
                mx = row[j];
            }
        }
        if mx == f64::NEG_INFINITY {
            return Err(Error::EmptySupport(format!("softmax: row {i} fully masked")));
        }
        let mut z = 0.0;
        for j in 0..m {
            if keep(j) {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                z += e;
            }
        }
        for j in 0..m {
            if keep(j) {
                out[i * m + j] /= z;
            }
        }
    }
    Ok(out)
}

/// Stable log-softmax over a single row.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
    let log_z = z.ln() + mx;
    row.iter().map(|&x| x - log_z).collect()
}
