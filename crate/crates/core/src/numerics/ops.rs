//! Composite forward builders shared by the encoder and decoder, plus the
//! plain (tape-free) variants used during decoding and in tests.

use super::tape::{softmax_rows_raw, NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// x * w (+ bias broadcast over rows when given).
pub fn linear(tape: &mut Tape, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
    let y = tape.matmul(x, w)?;
    match bias {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// Position-wise feed-forward block: relu(x W1 + b1) W2 + b2.
pub fn ffn(
    tape: &mut Tape,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let h = linear(tape, x, w1, Some(b1))?;
    let h = tape.relu(h)?;
    linear(tape, h, w2, Some(b2))
}

/// Tape node ids for one GRU cell's nine parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

/// GRU cell over row batches. `x` is the input, `h` the previous state.
///
/// z = sigmoid(x Wz + h Uz + bz)
/// r = sigmoid(x Wr + h Ur + br)
/// c = tanh(x Wh + (r .* h) Uh + bh)
/// out = (1 - z) .* h + z .* c, computed as h + z .* (c - h)
pub fn gru_cell(tape: &mut Tape, x: NodeId, h: NodeId, p: &GruNodes) -> Result<NodeId> {
    let zx = tape.matmul(x, p.wz)?;
    let zh = tape.matmul(h, p.uz)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, p.bz)?;
    let z = tape.sigmoid(z)?;

    let rx = tape.matmul(x, p.wr)?;
    let rh = tape.matmul(h, p.ur)?;
    let r = tape.add(rx, rh)?;
    let r = tape.add_bias(r, p.br)?;
    let r = tape.sigmoid(r)?;

    let gated = tape.mul(r, h)?;
    let cx = tape.matmul(x, p.wh)?;
    let ch = tape.matmul(gated, p.uh)?;
    let c = tape.add(cx, ch)?;
    let c = tape.add_bias(c, p.bh)?;
    let c = tape.tanh_op(c)?;

    let delta = tape.sub(c, h)?;
    let scaled = tape.mul(z, delta)?;
    tape.add(h, scaled)
}

/// Sinusoidal position encoding: out[2i] = sin(pos / 10000^(2i/d)),
/// out[2i+1] = cos(pos / 10000^(2i/d)). `d` must be even and positive.
pub fn sinusoidal_position(pos: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Invalid(format!(
            "sinusoidal_position: width must be even and positive, got {d}"
        )));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let rate = 10000f64.powf(2.0 * i as f64 / d as f64);
        let angle = pos as f64 / rate;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Stacked sinusoidal encodings for a position list, as an [len x d] tensor.
pub fn sinusoidal_matrix(positions: &[usize], d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(positions.len() * d);
    for &p in positions {
        data.extend_from_slice(&sinusoidal_position(p, d)?);
    }
    Tensor::new(vec![positions.len(), d], data)
}

/// Plain softmax over the trailing dimension, with optional keep-mask.
/// Masked entries come out exactly zero.
pub fn softmax(t: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let n = t.rows();
    let m = t.cols();
    if let Some(mk) = mask {
        if mk.len() != n * m {
            return Err(Error::shape(
                "softmax",
                format!("mask length {} vs {} entries", mk.len(), n * m),
            ));
        }
    }
    let out = softmax_rows_raw(t.data(), n, m, mask)?;
    Tensor::new(t.shape().to_vec(), out)
}
