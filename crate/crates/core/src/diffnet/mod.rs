//! Fully connected networks with a shared adaptive activation slope.
//!
//! Every hidden layer computes `σ(n·a·(W x + b))` where `a` is a single trainable
//! slope shared by all hidden layers and `n ≥ 1` is a fixed scale factor. The
//! output layer is affine.
//!
//! Derivatives with respect to the inputs are propagated forward alongside the
//! values: for each tracked input direction `d` the tape carries the first
//! tangent `∂h/∂x_d` and the pure second tangent `∂²h/∂x_d²` of every
//! activation. Parameter gradients of any scalar built from the outputs and
//! those tangents are obtained by a reverse sweep over the augmented forward
//! computation ([`Mlp::backward`]).

mod checkpoint;
mod tape;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use tape::{Cotangent, Tape};

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to the adaptive slope after every parameter update.
pub const MIN_SLOPE: f64 = 1e-6;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum DiffnetError {
    #[error("network needs at least an input and an output layer, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("layer widths must be positive, got {0:?}")]
    ZeroWidth(Vec<usize>),
    #[error("scale factor n must be finite and >= 1, got {0}")]
    InvalidScale(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("direction index {dir} out of range for input width {width}")]
    InvalidDirection { dir: usize, width: usize },
    #[error("tape was recorded on a different network")]
    DetachedGraph,
    #[error("cotangent shape {got:?} does not match tape outputs {expected:?}")]
    CotangentShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("parameter vector has length {got}, network has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("slope a must be positive, got {0}")]
    NonPositiveSlope(f64),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffnetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sin,
}

impl Activation {
    /// `(σ, σ', σ'', σ''')` at `q`.
    #[inline]
    pub fn derivs(self, q: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = q.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]
            }
            Activation::Sin => {
                let (s, c) = q.sin_cos();
                [s, c, -s, -c]
            }
        }
    }

    #[inline]
    pub fn value(self, q: f64) -> f64 {
        match self {
            Activation::Tanh => q.tanh(),
            Activation::Sin => q.sin(),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Sin => write!(f, "sin"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sin" => Ok(Activation::Sin),
            other => Err(format!("unknown activation '{other}' (expected tanh or sin)")),
        }
    }
}

/// Value and input derivatives of a network at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub value: Vec<f64>,
    /// `input_grad[i][o] = ∂u_o/∂x_i`.
    pub input_grad: Option<Vec<Vec<f64>>>,
    /// `input_hess_diag[i][o] = ∂²u_o/∂x_i²`.
    pub input_hess_diag: Option<Vec<Vec<f64>>>,
    pub param_grads: Option<Vec<f64>>,
}

/// Multilayer perceptron with flat parameter storage.
///
/// Parameters are laid out layer by layer as the row-major weight matrix
/// (`out × in`) followed by the bias vector, with the shared slope `a` last.
#[derive(Debug)]
pub struct Mlp {
    id: u64,
    version: u64,
    layer_sizes: Vec<usize>,
    activation: Activation,
    scale: f64,
    params: Vec<f64>,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            id: fresh_id(),
            version: 0,
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            scale: self.scale,
            params: self.params.clone(),
        }
    }
}

/// Number of trainable parameters (weights, biases and the slope).
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[1] * w[0] + w[1])
        .sum::<usize>()
        + 1
}

fn validate_layers(layer_sizes: &[usize], scale: f64) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(DiffnetError::TooFewLayers(layer_sizes.to_vec()));
    }
    if layer_sizes.iter().any(|&w| w == 0) {
        return Err(DiffnetError::ZeroWidth(layer_sizes.to_vec()));
    }
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(DiffnetError::InvalidScale(scale));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases and `a = 1/n`, so the effective
    /// slope `n·a` starts at one.
    pub fn init(layer_sizes: &[usize], activation: Activation, scale: f64, seed: u64) -> Result<Self> {
        validate_layers(layer_sizes, scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params.push(1.0 / scale);
        Ok(Mlp {
            id: fresh_id(),
            version: 0,
            layer_sizes: layer_sizes.to_vec(),
            activation,
            scale,
            params,
        })
    }

    /// Builds a network from an explicit flat parameter vector (slope last).
    pub fn from_params(
        layer_sizes: &[usize],
        activation: Activation,
        scale: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_layers(layer_sizes, scale)?;
        let expected = param_count(layer_sizes);
        if params.len() != expected {
            return Err(DiffnetError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        let a = params[expected - 1];
        if !(a > 0.0) {
            return Err(DiffnetError::NonPositiveSlope(a));
        }
        Ok(Mlp {
            id: fresh_id(),
            version: 0,
            layer_sizes: layer_sizes.to_vec(),
            activation,
            scale,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// The fixed scale factor `n`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn slope(&self) -> f64 {
        *self.params.last().unwrap()
    }

    /// `n·a`, the slope actually applied inside the activations.
    pub fn effective_slope(&self) -> f64 {
        self.scale * self.slope()
    }

    pub fn set_slope(&mut self, a: f64) -> Result<()> {
        if !(a > 0.0) {
            return Err(DiffnetError::NonPositiveSlope(a));
        }
        *self.params.last_mut().unwrap() = a;
        self.version += 1;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Overwrites all parameters; the slope is floored at [`MIN_SLOPE`].
    pub fn load_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.params.len() {
            return Err(DiffnetError::ParamCount {
                expected: self.params.len(),
                got: src.len(),
            });
        }
        self.params.copy_from_slice(src);
        let a = self.params.last_mut().unwrap();
        *a = a.max(MIN_SLOPE);
        self.version += 1;
        Ok(())
    }

    /// Mutable access to weights and biases of layer `k` (slope excluded).
    pub fn layer_params_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (off, fan_in, fan_out) = self.layer_offset(k);
        self.version += 1;
        let (w, rest) = self.params[off..].split_at_mut(fan_in * fan_out);
        (w, &mut rest[..fan_out])
    }

    /// Identity of this parameter state; changes whenever parameters are written.
    pub(crate) fn stamp(&self) -> (u64, u64) {
        (self.id, self.version)
    }

    pub(crate) fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `(offset, fan_in, fan_out)` of layer `k` in the flat parameter vector.
    pub(crate) fn layer_offset(&self, k: usize) -> (usize, usize, usize) {
        let off = self.layer_sizes[..=k]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum::<usize>();
        (off, self.layer_sizes[k], self.layer_sizes[k + 1])
    }

    pub(crate) fn weights(&self, k: usize) -> ArrayView2<'_, f64> {
        let (off, fan_in, fan_out) = self.layer_offset(k);
        ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out]).unwrap()
    }

    pub(crate) fn biases(&self, k: usize) -> ArrayView1<'_, f64> {
        let (off, fan_in, fan_out) = self.layer_offset(k);
        let start = off + fan_in * fan_out;
        ArrayView1::from(&self.params[start..start + fan_out])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(DiffnetError::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Plain forward pass at a single point.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let s = self.effective_slope();
        let mut h = x.to_vec();
        let last = self.num_layers() - 1;
        for k in 0..=last {
            let w = self.weights(k);
            let b = self.biases(k);
            let mut z: Vec<f64> = w
                .outer_iter()
                .zip(b.iter())
                .map(|(row, &bias)| row.iter().zip(&h).map(|(wi, hi)| wi * hi).sum::<f64>() + bias)
                .collect();
            if k < last {
                for zi in &mut z {
                    *zi = self.activation.value(s * *zi);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Value, gradient and diagonal Hessian with respect to every input.
    pub fn eval_with_input_derivs(&self, x: &[f64]) -> Result<EvalResult> {
        self.check_input(x)?;
        let dirs: Vec<usize> = (0..self.input_width()).collect();
        let input = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let tape = self.record(input, &dirs)?;
        let outs = self.output_width();
        let value = (0..outs).map(|o| tape.value(0, o)).collect();
        let grad = dirs
            .iter()
            .enumerate()
            .map(|(d, _)| (0..outs).map(|o| tape.first(0, d, o)).collect())
            .collect();
        let hess = dirs
            .iter()
            .enumerate()
            .map(|(d, _)| (0..outs).map(|o| tape.second(0, d, o)).collect())
            .collect();
        Ok(EvalResult {
            value,
            input_grad: Some(grad),
            input_hess_diag: Some(hess),
            param_grads: None,
        })
    }

    /// Gradient of a scalar loss over all parameters, given the loss's
    /// sensitivities to the recorded outputs and tangents.
    pub fn grad_params(&self, tape: &Tape, cotangent: &Cotangent) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.num_params()];
        self.backward(tape, cotangent, &mut grads)?;
        Ok(grads)
    }
}
