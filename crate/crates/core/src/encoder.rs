//! Feed-forward modality encoders with unit-norm outputs.
//!
//! An encoder is a stack of affine layers with an activation between them and
//! none after the last, followed by row-wise L2 normalization. Frozen
//! encoders refuse to produce gradients; that refusal plus
//! [`EncoderParams::fingerprint`] is how the frozen-anchor protocol is
//! enforced and audited.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::numeric::{l2_normalize_rows, matmul, matmul_transpose_a, matmul_transpose_b, Matrix, Rng};
use crate::wire::{self, Reader, Writer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EALN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], embed_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            embed_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::param(format!("encoder dims must all be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(in, out)` for each affine layer, in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer: `x · weight + bias`, weight is `in × out`, bias `1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    spec: EncoderSpec,
    layers: Vec<Layer>,
    frozen: bool,
}

/// Gradients with the same layout as [`EncoderParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub layers: Vec<Layer>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Matrix::zeros(1, l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.max_abs().max(l.bias.max_abs()))
            .fold(0.0, f64::max)
    }
}

/// SHA-256 over the encoder's shape and the bit patterns of all weights.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

/// Scaled-normal weights (std = 1/√fan_in), zero biases, trainable.
pub fn init_encoder(spec: &EncoderSpec, rng: &mut Rng) -> Result<EncoderParams> {
    spec.validate()?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in spec.layer_shapes() {
        let std = 1.0 / (fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| std * rng.standard_normal())?;
        layers.push(Layer {
            weight,
            bias: Matrix::zeros(1, fan_out),
        });
    }
    Ok(EncoderParams {
        spec: spec.clone(),
        layers,
        frozen: false,
    })
}

struct Trace {
    /// Input to each layer; `inputs[0]` is the batch.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    output: Matrix,
    norms: Vec<f64>,
}

impl EncoderParams {
    pub fn from_layers(spec: EncoderSpec, layers: Vec<Layer>, frozen: bool) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::param(format!(
                "spec has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for ((i, o), l) in shapes.iter().zip(&layers) {
            if l.weight.shape() != (*i, *o) || l.bias.shape() != (1, *o) {
                return Err(Error::Shape {
                    op: "from_layers",
                    left: (*i, *o),
                    right: l.weight.shape(),
                });
            }
        }
        Ok(Self { spec, layers, frozen })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the encoder frozen; idempotent.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.as_slice().len())
            .sum()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update((self.spec.input_dim as u64).to_le_bytes());
        for d in &self.spec.hidden_dims {
            h.update((*d as u64).to_le_bytes());
        }
        h.update((self.spec.embed_dim as u64).to_le_bytes());
        h.update([self.spec.activation.tag()]);
        for l in &self.layers {
            for v in l.weight.as_slice().iter().chain(l.bias.as_slice()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        Fingerprint(h.finalize().into())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.spec.input_dim {
            return Err(Error::Shape {
                op: "encode",
                left: batch.shape(),
                right: (self.spec.input_dim, self.spec.embed_dim),
            });
        }
        Ok(())
    }

    fn forward(&self, batch: &Matrix) -> Result<Trace> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = vec![batch.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = matmul(&inputs[i], &layer.weight)?;
            let bias = layer.bias.as_slice();
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if i < last {
                let mut a = z.clone();
                let act = self.spec.activation;
                a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                inputs.push(a);
            }
            pre.push(z);
        }
        let y = &pre[last];
        let norms = y.row_norms();
        let output = l2_normalize_rows(y)?;
        Ok(Trace {
            inputs,
            pre,
            output,
            norms,
        })
    }
}

/// Maps `N × input_dim` rows to `N × embed_dim` unit-norm embeddings.
pub fn encode(params: &EncoderParams, batch: &Matrix) -> Result<Matrix> {
    Ok(params.forward(batch)?.output)
}

/// Exact parameter gradients of `Σ grad_output ∘ encode(batch)`, including
/// the normalization layer.
pub fn encode_backward(params: &EncoderParams, batch: &Matrix, grad_output: &Matrix) -> Result<EncoderGrads> {
    if params.frozen {
        return Err(Error::protocol("encode_backward called on a frozen encoder"));
    }
    if grad_output.shape() != (batch.rows(), params.spec.embed_dim) {
        return Err(Error::Shape {
            op: "encode_backward",
            left: grad_output.shape(),
            right: (batch.rows(), params.spec.embed_dim),
        });
    }
    let trace = params.forward(batch)?;

    // Through y / ‖y‖: dy = (g − u·⟨g, u⟩) / ‖y‖.
    let mut delta = grad_output.clone();
    for r in 0..delta.rows() {
        let u = trace.output.row(r);
        let proj: f64 = delta.row(r).iter().zip(u).map(|(g, u)| g * u).sum();
        let norm = trace.norms[r];
        for (g, u) in delta.row_mut(r).iter_mut().zip(u) {
            *g = (*g - u * proj) / norm;
        }
    }

    let mut grads: Vec<Layer> = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let weight = matmul_transpose_a(&trace.inputs[i], &delta)?;
        let mut bias = Matrix::zeros(1, delta.cols());
        for r in 0..delta.rows() {
            for (b, d) in bias.data_mut().iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if i > 0 {
            let mut upstream = matmul_transpose_b(&delta, &params.layers[i].weight)?;
            let act = params.spec.activation;
            let z = &trace.pre[i - 1];
            let a = &trace.inputs[i];
            for ((g, zv), av) in upstream.data_mut().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                *g *= act.derivative(*zv, *av);
            }
            delta = upstream;
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    Ok(EncoderGrads { layers: grads })
}

pub(crate) fn write_encoder(w: &mut Writer, params: &EncoderParams) {
    let spec = &params.spec;
    w.u8(spec.activation.tag());
    w.u8(params.frozen as u8);
    w.u32(spec.input_dim as u32);
    w.u32(spec.hidden_dims.len() as u32);
    for d in &spec.hidden_dims {
        w.u32(*d as u32);
    }
    w.u32(spec.embed_dim as u32);
    for l in &params.layers {
        w.matrix(&l.weight);
        w.matrix(&l.bias);
    }
}

pub(crate) fn read_encoder(r: &mut Reader<'_>) -> Result<EncoderParams, FormatError> {
    let activation = Activation::from_tag(r.u8("activation")?)
        .ok_or_else(|| FormatError::Malformed("unknown activation tag".into()))?;
    let frozen = match r.u8("frozen flag")? {
        0 => false,
        1 => true,
        t => return Err(FormatError::Malformed(format!("frozen flag {t}"))),
    };
    let input_dim = r.u32("input_dim")? as usize;
    let n_hidden = r.u32("hidden count")? as usize;
    let hidden_dims = (0..n_hidden)
        .map(|_| r.u32("hidden dim").map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let embed_dim = r.u32("embed_dim")? as usize;
    let spec = EncoderSpec {
        input_dim,
        hidden_dims,
        embed_dim,
        activation,
    };
    let mut layers = Vec::new();
    for _ in spec.layer_shapes() {
        let weight = r.matrix("layer weight")?;
        let bias = r.matrix("layer bias")?;
        layers.push(Layer { weight, bias });
    }
    EncoderParams::from_layers(spec, layers, frozen).map_err(|e| FormatError::Malformed(e.to_string()))
}

/// Writes an `EALN` checkpoint holding only encoder weights.
pub fn save_encoder(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    write_encoder(&mut w, params);
    w.u8(0); // no training state
    std::fs::write(path, w.seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)).map_err(|e| Error::io(path, e))
}

/// Reads the encoder from any `EALN` checkpoint, ignoring training state.
pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt_err = |source| Error::Format {
        path: path.to_path_buf(),
        source,
    };
    let mut r = wire::open(&bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION).map_err(fmt_err)?;
    read_encoder(&mut r).map_err(fmt_err)
}
