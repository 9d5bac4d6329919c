//! Recurrent cell steps and attention, expressed as tape operations on
//! batch-major matrices (`batch × features`).

use crate::tensor::{NodeId, ParamSet, Tape, TensorError};

/// Vanilla recurrent cell weights, bound to one tape.
#[derive(Debug, Clone, Copy)]
pub struct RnnWeights {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub b: NodeId,
}

impl RnnWeights {
    pub fn bind(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<Self, TensorError> {
        Ok(Self {
            w_x: tape.param_named(params, &format!("{prefix}.w_x"))?,
            w_h: tape.param_named(params, &format!("{prefix}.w_h"))?,
            b: tape.param_named(params, &format!("{prefix}.b"))?,
        })
    }
}

/// `h = tanh(x·W_x + h_prev·W_h + b)`
pub fn rnn_step(
    tape: &mut Tape,
    w: &RnnWeights,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, TensorError> {
    let from_x = tape.matmul(x, w.w_x)?;
    let from_h = tape.matmul(h_prev, w.w_h)?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add_row(pre, w.b)?;
    tape.tanh(pre)
}

/// Gated recurrent unit weights. Each gate matrix acts on `[x, h]`.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: NodeId,
    pub b_z: NodeId,
    pub w_r: NodeId,
    pub b_r: NodeId,
    pub w_h: NodeId,
    pub b_h: NodeId,
}

impl GruWeights {
    pub fn bind(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<Self, TensorError> {
        let mut p = |s: &str| tape.param_named(params, &format!("{prefix}.{s}"));
        Ok(Self {
            w_z: p("w_z")?,
            b_z: p("b_z")?,
            w_r: p("w_r")?,
            b_r: p("b_r")?,
            w_h: p("w_h")?,
            b_h: p("b_h")?,
        })
    }
}

fn affine(tape: &mut Tape, input: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
    let xw = tape.matmul(input, w)?;
    tape.add_row(xw, b)
}

/// ```text
/// z = σ([x, h_prev]·W_z + b_z)
/// r = σ([x, h_prev]·W_r + b_r)
/// h̃ = tanh([x, r⊙h_prev]·W_h + b_h)
/// h = (1 − z)⊙h_prev + z⊙h̃
/// ```
pub fn gru_step(
    tape: &mut Tape,
    w: &GruWeights,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, TensorError> {
    let xh = tape.concat(&[x, h_prev], 1)?;
    let z = affine(tape, xh, w.w_z, w.b_z)?;
    let z = tape.sigmoid(z)?;
    let r = affine(tape, xh, w.w_r, w.b_r)?;
    let r = tape.sigmoid(r)?;
    let gated = tape.mul(r, h_prev)?;
    let x_gated = tape.concat(&[x, gated], 1)?;
    let cand = affine(tape, x_gated, w.w_h, w.b_h)?;
    let cand = tape.tanh(cand)?;
    let keep = tape.one_minus(z)?;
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

/// Long short-term memory weights. Each gate matrix acts on `[x, h]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_f: NodeId,
    pub b_f: NodeId,
    pub w_i: NodeId,
    pub b_i: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
    pub w_g: NodeId,
    pub b_g: NodeId,
}

impl LstmWeights {
    pub fn bind(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<Self, TensorError> {
        let mut p = |s: &str| tape.param_named(params, &format!("{prefix}.{s}"));
        Ok(Self {
            w_f: p("w_f")?,
            b_f: p("b_f")?,
            w_i: p("w_i")?,
            b_i: p("b_i")?,
            w_o: p("w_o")?,
            b_o: p("b_o")?,
            w_g: p("w_g")?,
            b_g: p("b_g")?,
        })
    }
}

/// One LSTM step, returning `(h, c)`:
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(
    tape: &mut Tape,
    w: &LstmWeights,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), TensorError> {
    let xh = tape.concat(&[x, h_prev], 1)?;
    let f = affine(tape, xh, w.w_f, w.b_f)?;
    let f = tape.sigmoid(f)?;
    let i = affine(tape, xh, w.w_i, w.b_i)?;
    let i = tape.sigmoid(i)?;
    let o = affine(tape, xh, w.w_o, w.b_o)?;
    let o = tape.sigmoid(o)?;
    let g = affine(tape, xh, w.w_g, w.b_g)?;
    let g = tape.tanh(g)?;
    let carry = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(carry, write)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

/// LSTM unrolled over window columns.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Hidden state after each step, `batch × hidden` each.
    pub outputs: Vec<NodeId>,
    pub h: NodeId,
    pub c: NodeId,
}

pub fn encode(
    tape: &mut Tape,
    w: &LstmWeights,
    inputs: &[NodeId],
    h0: NodeId,
    c0: NodeId,
) -> Result<Encoded, TensorError> {
    let (mut h, mut c) = (h0, c0);
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = lstm_step(tape, w, x, h, c)?;
        outputs.push(h);
    }
    Ok(Encoded { outputs, h, c })
}

/// Dot-product alignment of `decoder` against each encoder output,
/// normalized with softmax: returns `batch × w`.
pub fn attention_weights(
    tape: &mut Tape,
    decoder: NodeId,
    encoder_outputs: &[NodeId],
) -> Result<NodeId, TensorError> {
    let scores = encoder_outputs
        .iter()
        .map(|&e| tape.row_dot(decoder, e))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = tape.concat(&scores, 1)?;
    tape.softmax(scores)
}

/// `Σ_t weights[:, t] ⊙ encoder_outputs[t]`
pub fn attention_context(
    tape: &mut Tape,
    weights: NodeId,
    encoder_outputs: &[NodeId],
) -> Result<NodeId, TensorError> {
    let mut acc: Option<NodeId> = None;
    for (t, &e) in encoder_outputs.iter().enumerate() {
        let wt = tape.slice_cols(weights, t, 1)?;
        let term = tape.scale_rows(e, wt)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or(TensorError::EmptyAxis { op: "attention" })
}
