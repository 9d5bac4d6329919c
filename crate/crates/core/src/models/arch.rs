use std::sync::OnceLock;

use super::cells::{self, GruWeights, LstmWeights, RnnWeights};
use super::ArchKind;
use crate::tensor::{NodeId, NumArray, ParamSet, Tape, TensorError};

/// Whether a manifest entry is drawn randomly or starts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRule {
    Uniform,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitRule,
}

impl ParamShape {
    fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![rows, cols],
            init: InitRule::Uniform,
        }
    }

    fn bias(name: impl Into<String>, cols: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![1, cols],
            init: InitRule::Zero,
        }
    }
}

/// One forecaster architecture: its parameter manifest and its forward map
/// from a `batch × window` matrix of scaled inputs to `batch × 1` predictions.
pub trait Architecture: Send + Sync {
    fn kind(&self) -> ArchKind;

    fn manifest(&self, hidden: usize) -> Vec<ParamShape>;

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError>;

    /// Parameters that belong to the target-specific output layer.
    fn is_output_head(&self, name: &str) -> bool {
        name.starts_with("head.")
    }
}

fn rnn_manifest(prefix: &str, hidden: usize) -> Vec<ParamShape> {
    vec![
        ParamShape::weight(format!("{prefix}.w_x"), 1, hidden),
        ParamShape::weight(format!("{prefix}.w_h"), hidden, hidden),
        ParamShape::bias(format!("{prefix}.b"), hidden),
    ]
}

fn gru_manifest(prefix: &str, hidden: usize) -> Vec<ParamShape> {
    ["z", "r", "h"]
        .iter()
        .flat_map(|g| {
            [
                ParamShape::weight(format!("{prefix}.w_{g}"), 1 + hidden, hidden),
                ParamShape::bias(format!("{prefix}.b_{g}"), hidden),
            ]
        })
        .collect()
}

fn lstm_manifest(prefix: &str, hidden: usize) -> Vec<ParamShape> {
    ["f", "i", "o", "g"]
        .iter()
        .flat_map(|g| {
            [
                ParamShape::weight(format!("{prefix}.w_{g}"), 1 + hidden, hidden),
                ParamShape::bias(format!("{prefix}.b_{g}"), hidden),
            ]
        })
        .collect()
}

fn head_manifest(inputs: usize) -> Vec<ParamShape> {
    vec![
        ParamShape::weight("head.w", inputs, 1),
        ParamShape::bias("head.b", 1),
    ]
}

fn hidden_of(params: &ParamSet, name: &str) -> Result<usize, TensorError> {
    let p = params
        .get(name)
        .ok_or_else(|| TensorError::MissingParameter(name.to_string()))?;
    Ok(p.value.shape()[1])
}

fn input_columns(tape: &mut Tape, windows: &NumArray) -> Result<Vec<NodeId>, TensorError> {
    let (_, w) = windows.dims2();
    (0..w).map(|t| tape.constant(windows.column(t))).collect()
}

fn zero_state(tape: &mut Tape, batch: usize, hidden: usize) -> Result<NodeId, TensorError> {
    tape.constant(NumArray::zeros(&[batch, hidden]))
}

fn head(tape: &mut Tape, params: &ParamSet, features: NodeId) -> Result<NodeId, TensorError> {
    let w = tape.param_named(params, "head.w")?;
    let b = tape.param_named(params, "head.b")?;
    let out = tape.matmul(features, w)?;
    tape.add_row(out, b)
}

pub struct Rnn;

impl Architecture for Rnn {
    fn kind(&self) -> ArchKind {
        ArchKind::Rnn
    }

    fn manifest(&self, hidden: usize) -> Vec<ParamShape> {
        let mut m = rnn_manifest("rnn", hidden);
        m.extend(head_manifest(hidden));
        m
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError> {
        let hidden = hidden_of(params, "rnn.w_h")?;
        let w = RnnWeights::bind(tape, params, "rnn")?;
        let xs = input_columns(tape, windows)?;
        let mut h = zero_state(tape, windows.dims2().0, hidden)?;
        for x in xs {
            h = cells::rnn_step(tape, &w, x, h)?;
        }
        head(tape, params, h)
    }
}

pub struct Gru;

impl Architecture for Gru {
    fn kind(&self) -> ArchKind {
        ArchKind::Gru
    }

    fn manifest(&self, hidden: usize) -> Vec<ParamShape> {
        let mut m = gru_manifest("gru", hidden);
        m.extend(head_manifest(hidden));
        m
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError> {
        let hidden = hidden_of(params, "gru.w_z")?;
        let w = GruWeights::bind(tape, params, "gru")?;
        let xs = input_columns(tape, windows)?;
        let mut h = zero_state(tape, windows.dims2().0, hidden)?;
        for x in xs {
            h = cells::gru_step(tape, &w, x, h)?;
        }
        head(tape, params, h)
    }
}

pub struct Lstm;

impl Architecture for Lstm {
    fn kind(&self) -> ArchKind {
        ArchKind::Lstm
    }

    fn manifest(&self, hidden: usize) -> Vec<ParamShape> {
        let mut m = lstm_manifest("lstm", hidden);
        m.extend(head_manifest(hidden));
        m
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError> {
        let hidden = hidden_of(params, "lstm.w_f")?;
        let w = LstmWeights::bind(tape, params, "lstm")?;
        let xs = input_columns(tape, windows)?;
        let zero = zero_state(tape, windows.dims2().0, hidden)?;
        let enc = cells::encode(tape, &w, &xs, zero, zero)?;
        head(tape, params, enc.h)
    }
}

/// Shared encoder/decoder body; the decoder takes the last window element as
/// its input and the encoder's final `(h, c)` as its initial state.
fn encoder_decoder(
    tape: &mut Tape,
    params: &ParamSet,
    windows: &NumArray,
) -> Result<(NodeId, Vec<NodeId>), TensorError> {
    let hidden = hidden_of(params, "enc.w_f")?;
    let enc_w = LstmWeights::bind(tape, params, "enc")?;
    let dec_w = LstmWeights::bind(tape, params, "dec")?;
    let xs = input_columns(tape, windows)?;
    let last = *xs.last().ok_or(TensorError::EmptyAxis { op: "encode" })?;
    let zero = zero_state(tape, windows.dims2().0, hidden)?;
    let enc = cells::encode(tape, &enc_w, &xs, zero, zero)?;
    let (dec_h, _) = cells::lstm_step(tape, &dec_w, last, enc.h, enc.c)?;
    Ok((dec_h, enc.outputs))
}

pub struct LstmEncDec;

impl Architecture for LstmEncDec {
    fn kind(&self) -> ArchKind {
        ArchKind::LstmEnDe
    }

    fn manifest(&self, hidden: usize) -> Vec<ParamShape> {
        let mut m = lstm_manifest("enc", hidden);
        m.extend(lstm_manifest("dec", hidden));
        m.extend(head_manifest(hidden));
        m
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError> {
        let (dec_h, _) = encoder_decoder(tape, params, windows)?;
        head(tape, params, dec_h)
    }
}

pub struct LstmEncDecAttn;

impl Architecture for LstmEncDecAttn {
    fn kind(&self) -> ArchKind {
        ArchKind::LstmEnDeAtn
    }

    fn manifest(&self, hidden: usize) -> Vec<ParamShape> {
        let mut m = lstm_manifest("enc", hidden);
        m.extend(lstm_manifest("dec", hidden));
        m.extend(head_manifest(2 * hidden));
        m
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        windows: &NumArray,
    ) -> Result<NodeId, TensorError> {
        let (dec_h, enc_outputs) = encoder_decoder(tape, params, windows)?;
        let weights = cells::attention_weights(tape, dec_h, &enc_outputs)?;
        let context = cells::attention_context(tape, weights, &enc_outputs)?;
        let features = tape.concat(&[dec_h, context], 1)?;
        head(tape, params, features)
    }
}

/// Architectures addressable by name.
pub struct ArchRegistry {
    entries: Vec<Box<dyn Architecture>>,
}

impl ArchRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// The five built-in forecasters, in reporting order.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Rnn));
        r.register(Box::new(Lstm));
        r.register(Box::new(Gru));
        r.register(Box::new(LstmEncDec));
        r.register(Box::new(LstmEncDecAttn));
        r
    }

    /// Adds an architecture, replacing any earlier entry of the same kind.
    pub fn register(&mut self, arch: Box<dyn Architecture>) {
        self.entries.retain(|a| a.kind() != arch.kind());
        self.entries.push(arch);
    }

    pub fn get(&self, kind: ArchKind) -> Option<&dyn Architecture> {
        self.entries
            .iter()
            .find(|a| a.kind() == kind)
            .map(|a| a.as_ref())
    }

    /// Looks an architecture up by any accepted spelling of its name.
    pub fn resolve(&self, name: &str) -> Option<&dyn Architecture> {
        name.parse().ok().and_then(|k| self.get(k))
    }

    pub fn kinds(&self) -> impl Iterator<Item = ArchKind> + '_ {
        self.entries.iter().map(|a| a.kind())
    }
}

pub fn registry() -> &'static ArchRegistry {
    static REGISTRY: OnceLock<ArchRegistry> = OnceLock::new();
    REGISTRY.get_or_init(ArchRegistry::builtin)
}
