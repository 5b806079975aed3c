//! Multilayer-perceptron classifiers over a flat, stably indexed parameter
//! vector, with lossless binary checkpoints.
//!
//! The parameter layout is a pure function of [`ModelSpec`]: for each layer,
//! the row-major `[fan_in, fan_out]` weight block is followed by its bias
//! block. Importance vectors computed at different times therefore align
//! index-for-index with the parameters.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAMPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

impl Activation {
    fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Architecture description: `layer_sizes` runs input dim, hidden dims...,
/// class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, init_seed: u64) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation: Activation::Relu,
            init_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidModelSpec(format!(
                "need at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidModelSpec(format!(
                "all layer sizes must be >= 1, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Flat parameter layout. Depends only on the spec, never on values.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut entries = Vec::with_capacity(2 * self.n_layers());
        let mut offset = 0;
        for (layer, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Weight,
                offset,
                len: fan_in * fan_out,
            });
            offset += fan_in * fan_out;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Bias,
                offset,
                len: fan_out,
            });
            offset += fan_out;
        }
        entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

/// Flat view of all trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayoutEntry>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values of one layout block.
    pub fn block(&self, entry: &LayoutEntry) -> &[f64] {
        &self.values[entry.offset..entry.offset + entry.len]
    }
}

/// Glorot-uniform initialization: weights drawn from uniform(-s, s) with
/// `s = sqrt(6/(fan_in+fan_out))` from a ChaCha8 stream seeded by
/// `init_seed`; biases zero (no draws consumed).
pub fn init_model(spec: &ModelSpec) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut values = Vec::with_capacity(spec.n_params());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.gen_range(-s..s));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ParameterVector {
        values,
        layout: spec.layout(),
    })
}

/// Plain (tape-free) forward pass: logits for one feature vector.
pub fn forward_logits(spec: &ModelSpec, theta: &ParameterVector, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.n_features() {
        return Err(Error::InputDimMismatch {
            expected: spec.n_features(),
            got: x.len(),
        });
    }
    let mut activations = x.to_vec();
    let mut offset = 0;
    let n_layers = spec.n_layers();
    for (layer, w) in spec.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &theta.values[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let biases = &theta.values[offset..offset + fan_out];
        offset += fan_out;
        let mut next = biases.to_vec();
        for (i, &a) in activations.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for j in 0..fan_out {
                next[j] += a * weights[i * fan_out + j];
            }
        }
        if layer + 1 < n_layers {
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
        }
        activations = next;
    }
    Ok(activations)
}

/// Forward pass recorded on a tape for a batch of inputs, returning the
/// `[batch, classes]` logits and the parameter leaves in layout order
/// (weight then bias per layer).
pub fn forward_on_tape(
    tape: &mut Tape,
    spec: &ModelSpec,
    theta: &ParameterVector,
    xs: &[f64],
    batch: usize,
) -> Result<(TensorId, Vec<TensorId>)> {
    if xs.len() != batch * spec.n_features() {
        return Err(Error::InputDimMismatch {
            expected: batch * spec.n_features(),
            got: xs.len(),
        });
    }
    let mut param_ids = Vec::with_capacity(2 * spec.n_layers());
    let mut current = tape.leaf(&[batch, spec.n_features()], xs.to_vec(), false)?;
    let mut offset = 0;
    let n_layers = spec.n_layers();
    for (layer, w) in spec.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weight = tape.leaf(
            &[fan_in, fan_out],
            theta.values[offset..offset + fan_in * fan_out].to_vec(),
            true,
        )?;
        offset += fan_in * fan_out;
        let bias = tape.leaf(
            &[fan_out],
            theta.values[offset..offset + fan_out].to_vec(),
            true,
        )?;
        offset += fan_out;
        param_ids.push(weight);
        param_ids.push(bias);
        current = tape.matmul(current, weight)?;
        current = tape.bias_add(current, bias)?;
        if layer + 1 < n_layers {
            current = tape.relu(current)?;
        }
    }
    Ok((current, param_ids))
}

/// Concatenate the gradients of the parameter leaves from `forward_on_tape`
/// into one flat vector aligned with the layout.
pub fn collect_gradients(tape: &Tape, param_ids: &[TensorId], n_params: usize) -> Vec<f64> {
    let mut grads = Vec::with_capacity(n_params);
    for &id in param_ids {
        grads.extend_from_slice(tape.grad(id));
    }
    grads
}

/// Write spec + parameters: magic, version, layer count and sizes,
/// activation id, init seed, |θ|, raw little-endian f64 payload.
pub fn save_checkpoint(spec: &ModelSpec, theta: &ParameterVector, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * theta.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.layer_sizes.len() as u32).to_le_bytes());
    for &size in &spec.layer_sizes {
        buf.extend_from_slice(&(size as u32).to_le_bytes());
    }
    buf.push(spec.activation.id());
    buf.extend_from_slice(&spec.init_seed.to_le_bytes());
    buf.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for &v in &theta.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ParameterVector)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut cursor = Cursor::new(&bytes, "checkpoint", path);

    let magic = cursor.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(cursor.malformed("bad magic bytes"));
    }
    let version = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(cursor.malformed(&format!("unsupported version {version}")));
    }
    let n_sizes = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize);
    }
    let activation = Activation::from_id(cursor.take(1)?[0])
        .ok_or_else(|| cursor.malformed("unknown activation id"))?;
    let init_seed = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
    let spec = ModelSpec {
        layer_sizes,
        activation,
        init_seed,
    };
    spec.validate()
        .map_err(|e| cursor.malformed(&e.to_string()))?;

    let declared = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
    let expected = spec.n_params() as u64;
    if declared != expected {
        return Err(Error::ParamCountMismatch {
            path: path.to_path_buf(),
            declared,
            expected,
        });
    }
    let mut values = Vec::with_capacity(declared as usize);
    for _ in 0..declared {
        values.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
    }
    if !cursor.at_end() {
        return Err(cursor.malformed("trailing bytes"));
    }
    Ok((
        spec.clone(),
        ParameterVector {
            values,
            layout: spec.layout(),
        },
    ))
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str, path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
            path,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.malformed("truncated"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn malformed(&self, detail: &str) -> Error {
        Error::MalformedFile {
            what: self.what,
            path: self.path.to_path_buf(),
            detail: format!("{detail} (at byte {})", self.pos),
        }
    }
}
