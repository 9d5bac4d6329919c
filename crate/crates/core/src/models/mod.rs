//! The five one-step-ahead forecasters and their parameter manifests.

mod arch;
pub mod cells;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use arch::{
    registry, ArchRegistry, Architecture, Gru, InitRule, Lstm, LstmEncDec, LstmEncDecAttn,
    ParamShape, Rnn,
};

use crate::tensor::{NodeId, NumArray, ParamSet, Parameter, Tape, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchKind {
    Rnn,
    Lstm,
    Gru,
    LstmEnDe,
    LstmEnDeAtn,
}

impl ArchKind {
    /// Reporting order of the source bake-off table.
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Rnn,
        ArchKind::Lstm,
        ArchKind::Gru,
        ArchKind::LstmEnDe,
        ArchKind::LstmEnDeAtn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Rnn => "RNN",
            ArchKind::Lstm => "LSTM",
            ArchKind::Gru => "GRU",
            ArchKind::LstmEnDe => "LSTM_EN_DE",
            ArchKind::LstmEnDeAtn => "LSTM_EN_DE_ATN",
        }
    }

    /// Position in [`ArchKind::ALL`].
    pub fn order(self) -> usize {
        ArchKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| ModelError::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),
    #[error("architecture {0} is not registered")]
    Unregistered(ArchKind),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("window length mismatch: model expects {expected}, got {got}")]
    WindowLength { expected: usize, got: usize },
    #[error("parameter manifest mismatch: {0}")]
    Manifest(String),
}

/// Fully determines every parameter name and shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: ArchKind,
    pub window: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ModelSpec {
    pub fn new(arch: ArchKind, window: usize, hidden: usize) -> Result<Self, ModelError> {
        let spec = Self {
            arch,
            window,
            hidden,
            input_dim: 1,
            output_dim: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.window == 0 {
            return Err(ModelError::InvalidSpec("window must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(ModelError::InvalidSpec("hidden must be at least 1".into()));
        }
        if self.input_dim != 1 || self.output_dim != 1 {
            return Err(ModelError::InvalidSpec(format!(
                "only univariate models are supported (input_dim={}, output_dim={})",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<&'static dyn Architecture, ModelError> {
        registry()
            .get(self.arch)
            .ok_or(ModelError::Unregistered(self.arch))
    }

    pub fn manifest(&self) -> Result<Vec<ParamShape>, ModelError> {
        Ok(self.architecture()?.manifest(self.hidden))
    }

    /// `arch,window,hidden,input_dim,output_dim`
    pub fn descriptor(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.arch, self.window, self.hidden, self.input_dim, self.output_dim
        )
    }

    pub fn parse_descriptor(line: &str) -> Result<Self, ModelError> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [arch, window, hidden, input_dim, output_dim] = fields.as_slice() else {
            return Err(ModelError::InvalidSpec(format!(
                "expected 5 comma-separated fields, got `{line}`"
            )));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| ModelError::InvalidSpec(format!("bad integer `{s}`")))
        };
        let spec = Self {
            arch: arch.parse()?,
            window: num(window)?,
            hidden: num(hidden)?,
            input_dim: num(input_dim)?,
            output_dim: num(output_dim)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// Weights ~ U(−1/√hidden, +1/√hidden) drawn in manifest order; biases zero.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<ModelState, ModelError> {
    spec.validate()?;
    let bound = 1.0 / (spec.hidden as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for entry in spec.manifest()? {
        let n: usize = entry.shape.iter().product();
        let data = match entry.init {
            InitRule::Uniform => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            InitRule::Zero => vec![0.0; n],
        };
        params.insert(Parameter::new(entry.name, NumArray::new(entry.shape, data)?))?;
    }
    Ok(ModelState { spec, params })
}

impl ModelState {
    /// Checks that `params` holds exactly the spec's manifest, in order.
    pub fn check_manifest(&self) -> Result<(), ModelError> {
        check_manifest(&self.spec, &self.params)
    }

    /// Records the forward pass of a `batch × window` input onto `tape`.
    pub fn forward(&self, tape: &mut Tape, windows: &NumArray) -> Result<NodeId, ModelError> {
        let (_, w) = windows.dims2();
        if windows.rank() != 2 || w != self.spec.window {
            return Err(ModelError::WindowLength {
                expected: self.spec.window,
                got: w,
            });
        }
        Ok(self.spec.architecture()?.forward(tape, &self.params, windows)?)
    }

    /// Scaled one-step predictions for each row of `windows`.
    pub fn predict_batch(&self, windows: &NumArray) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, windows)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn predict_one(&self, window: &[f64]) -> Result<f64, ModelError> {
        let x = NumArray::matrix(1, window.len(), window.to_vec())?;
        Ok(self.predict_batch(&x)?[0])
    }

    pub fn is_output_head(&self, name: &str) -> bool {
        self.spec
            .architecture()
            .map(|a| a.is_output_head(name))
            .unwrap_or(false)
    }
}

pub fn check_manifest(spec: &ModelSpec, params: &ParamSet) -> Result<(), ModelError> {
    let manifest = spec.manifest()?;
    if manifest.len() != params.len() {
        return Err(ModelError::Manifest(format!(
            "{spec} expects {} parameters, found {}",
            manifest.len(),
            params.len()
        )));
    }
    for (entry, p) in manifest.iter().zip(params.iter()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(ModelError::Manifest(format!(
                "{spec} expects `{}` {:?}, found `{}` {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
    }
    Ok(())
}

/// Runs the encoder of an encoder-decoder model over a single window,
/// returning the context vector and the `w × hidden` per-step outputs.
pub fn encode_window(model: &ModelState, window: &[f64]) -> Result<(Vec<f64>, NumArray), ModelError> {
    if window.len() != model.spec.window {
        return Err(ModelError::WindowLength {
            expected: model.spec.window,
            got: window.len(),
        });
    }
    let mut tape = Tape::new();
    let w = cells::LstmWeights::bind(&mut tape, &model.params, "enc")?;
    let hidden = model.spec.hidden;
    let xs = window
        .iter()
        .map(|&v| tape.constant(NumArray::filled(&[1, 1], v)))
        .collect::<Result<Vec<_>, _>>()?;
    let zero = tape.constant(NumArray::zeros(&[1, hidden]))?;
    let enc = cells::encode(&mut tape, &w, &xs, zero, zero)?;
    let mut rows = Vec::with_capacity(window.len() * hidden);
    for &o in &enc.outputs {
        rows.extend_from_slice(tape.value(o).data());
    }
    Ok((
        tape.value(enc.h).data().to_vec(),
        NumArray::matrix(window.len(), hidden, rows)?,
    ))
}

/// Softmax of dot-product scores between one decoder state and each row of
/// `encoder_outputs` (`w × hidden`).
pub fn attention_weights(
    decoder_state: &[f64],
    encoder_outputs: &NumArray,
) -> Result<Vec<f64>, ModelError> {
    let (w, hidden) = encoder_outputs.dims2();
    if decoder_state.len() != hidden {
        return Err(TensorError::Shape {
            op: "attention",
            left: vec![decoder_state.len()],
            right: encoder_outputs.shape().to_vec(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let d = tape.constant(NumArray::matrix(1, hidden, decoder_state.to_vec())?)?;
    let outs = (0..w)
        .map(|t| tape.constant(NumArray::matrix(1, hidden, encoder_outputs.row(t).to_vec())?))
        .collect::<Result<Vec<_>, TensorError>>()?;
    let weights = cells::attention_weights(&mut tape, d, &outs)?;
    Ok(tape.value(weights).data().to_vec())
}
