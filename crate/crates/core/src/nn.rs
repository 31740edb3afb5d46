//! Minimal dense networks on f64, built for determinism.
//!
//! Everything here is hand-rolled on top of `ndarray` so that training runs
//! are reproducible to the bit across machines: no threads, no SIMD
//! reassociation, and checkpoints that round-trip through JSON without
//! losing a single ULP.
//!
//! Hidden layers are tanh. The output head is either a row-wise softmax
//! (policy nets) or the identity (value nets). `backward` is plain
//! reverse-mode chain rule over the cached activations; it averages nothing,
//! so loss scaling lives entirely in the caller's output gradient.

use ndarray::{Array1, Array2, Axis};
use rand::distributions::Uniform;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output nonlinearity of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Softmax,
    Linear,
}

/// Network shape: sizes of every layer, input first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub head: OutputHead,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum NnError {
    #[error("network needs at least an input and an output layer, got {0} sizes")]
    TooFewLayers(usize),
    #[error("layer sizes must be positive")]
    ZeroWidth,
    #[error("parameter shapes do not match the declared layer sizes")]
    ShapeMismatch,
    #[error("input has {got} columns, network expects {want}")]
    BadInput { got: usize, want: usize },
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, head: OutputHead) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::TooFewLayers(layer_sizes.len()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NnError::ZeroWidth);
        }
        Ok(MlpSpec { layer_sizes, head })
    }

    /// Wide shape used by structuring policies and value functions:
    /// `[input, 64, 32, output]`.
    pub fn structuring(input: usize, output: usize, head: OutputHead) -> Result<Self, NnError> {
        MlpSpec::new(vec![input, 64, 32, output], head)
    }

    /// Narrow shape used by the exploiting sub-policy: `[input, 10, output]`.
    pub fn exploiting(input: usize, output: usize, head: OutputHead) -> Result<Self, NnError> {
        MlpSpec::new(vec![input, 10, output], head)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Dense network with per-layer weight matrices `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDoc", into = "MlpDoc")]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// On-disk form: nested arrays, row-major weights.
#[derive(Serialize, Deserialize)]
struct MlpDoc {
    spec: MlpSpec,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpDoc {
    fn from(mlp: Mlp) -> MlpDoc {
        MlpDoc {
            weights: mlp
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: mlp.biases.iter().map(|b| b.to_vec()).collect(),
            spec: mlp.spec,
        }
    }
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = NnError;

    fn try_from(doc: MlpDoc) -> Result<Mlp, NnError> {
        let spec = MlpSpec::new(doc.spec.layer_sizes.clone(), doc.spec.head)?;
        if doc.weights.len() != spec.layer_count() || doc.biases.len() != spec.layer_count() {
            return Err(NnError::ShapeMismatch);
        }
        let mut weights = Vec::with_capacity(doc.weights.len());
        let mut biases = Vec::with_capacity(doc.biases.len());
        for (i, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
            let (fan_in, fan_out) = (spec.layer_sizes[i], spec.layer_sizes[i + 1]);
            if w.len() != fan_in || w.iter().any(|r| r.len() != fan_out) || b.len() != fan_out {
                return Err(NnError::ShapeMismatch);
            }
            let flat: Vec<f64> = w.into_iter().flatten().collect();
            weights.push(
                Array2::from_shape_vec((fan_in, fan_out), flat).map_err(|_| NnError::ShapeMismatch)?,
            );
            biases.push(Array1::from_vec(b));
        }
        Ok(Mlp { spec, weights, biases })
    }
}

/// Activations cached by a forward pass; `activations[0]` is the input and
/// the last entry is the head output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

/// Per-parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Grads {
        Grads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    /// Flat view in the same order as [`Mlp::param`].
    pub fn param(&self, index: usize) -> f64 {
        flat_get(&self.weights, &self.biases, index)
    }
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn flat_get(weights: &[Array2<f64>], biases: &[Array1<f64>], mut index: usize) -> f64 {
    for (w, b) in weights.iter().zip(biases) {
        if index < w.len() {
            return *w.as_slice().unwrap().get(index).unwrap();
        }
        index -= w.len();
        if index < b.len() {
            return b[index];
        }
        index -= b.len();
    }
    panic!("parameter index out of range");
}

impl Mlp {
    /// Fresh network with weights and biases drawn uniformly from
    /// `±1/sqrt(fan_in)`, layer by layer, weights row-major before biases.
    pub fn init(spec: MlpSpec, rng: &mut ChaCha8Rng) -> Mlp {
        let mut weights = Vec::with_capacity(spec.layer_count());
        let mut biases = Vec::with_capacity(spec.layer_count());
        for i in 0..spec.layer_count() {
            let (fan_in, fan_out) = (spec.layer_sizes[i], spec.layer_sizes[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.sample(dist)).collect();
            weights.push(Array2::from_shape_vec((fan_in, fan_out), w).unwrap());
            biases.push(Array1::from_iter((0..fan_out).map(|_| rng.sample(dist))));
        }
        Mlp { spec, weights, biases }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat parameter access, weights row-major then bias per layer.
    pub fn param(&self, index: usize) -> f64 {
        flat_get(&self.weights, &self.biases, index)
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if index < w.len() {
                *w.as_slice_mut().unwrap().get_mut(index).unwrap() = value;
                return;
            }
            index -= w.len();
            if index < b.len() {
                b[index] = value;
                return;
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Stable digest of all parameters, used to prove a phase did not train.
    pub fn param_fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for w in &self.weights {
            for v in w.iter() {
                h.write_u64(v.to_bits());
            }
        }
        for b in &self.biases {
            for v in b.iter() {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_cached(input)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, input: &Array2<f64>) -> Result<ForwardCache, NnError> {
        if input.ncols() != self.spec.input_size() {
            return Err(NnError::BadInput {
                got: input.ncols(),
                want: self.spec.input_size(),
            });
        }
        let mut activations = Vec::with_capacity(self.spec.layer_count() + 1);
        activations.push(input.clone());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations.last().unwrap().dot(w);
            z += b;
            let last = i + 1 == self.spec.layer_count();
            let a = if !last {
                z.mapv(f64::tanh)
            } else {
                match self.spec.head {
                    OutputHead::Softmax => softmax_rows(&z),
                    OutputHead::Linear => z,
                }
            };
            activations.push(a);
        }
        Ok(ForwardCache { activations })
    }

    /// Back-propagates `grad_output` (dL/d head-output) through the cached
    /// pass. Returns parameter gradients and dL/d input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Array2<f64>) -> (Grads, Array2<f64>) {
        let layers = self.spec.layer_count();
        assert_eq!(cache.activations.len(), layers + 1, "cache does not match network");
        let mut grads = Grads::zeros_like(self);
        let mut grad = grad_output.clone();
        for i in (0..layers).rev() {
            let a_out = &cache.activations[i + 1];
            let a_in = &cache.activations[i];
            // dL/dz from dL/da for this layer's nonlinearity.
            let dz = if i + 1 == layers {
                match self.spec.head {
                    // Softmax Jacobian: dz = y * (g - (g . y)) row-wise.
                    OutputHead::Softmax => {
                        let dot = (&grad * a_out).sum_axis(Axis(1));
                        let mut dz = grad.clone();
                        for (mut row, (y_row, d)) in
                            dz.rows_mut().into_iter().zip(a_out.rows().into_iter().zip(dot))
                        {
                            for (g, y) in row.iter_mut().zip(y_row) {
                                *g = y * (*g - d);
                            }
                        }
                        dz
                    }
                    OutputHead::Linear => grad,
                }
            } else {
                // tanh'(z) = 1 - a^2
                &grad * &a_out.mapv(|a| 1.0 - a * a)
            };
            grads.weights[i] = a_in.t().dot(&dz);
            grads.biases[i] = dz.sum_axis(Axis(0));
            grad = dz.dot(&self.weights[i].t());
        }
        (grads, grad)
    }
}

/// Adam with bias correction. Moment buffers match the target network's
/// shapes; `step` applies one update in place.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(lr: f64, mlp: &Mlp) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..mlp.weights.len() {
            self.m_w[i] = &self.m_w[i] * self.beta1 + &grads.weights[i] * (1.0 - self.beta1);
            self.v_w[i] =
                &self.v_w[i] * self.beta2 + &grads.weights[i].mapv(|g| g * g) * (1.0 - self.beta2);
            let update = &self.m_w[i] / c1 / (&self.v_w[i].mapv(|v| (v / c2).sqrt() + self.eps));
            mlp.weights[i] -= &(update * self.lr);

            self.m_b[i] = &self.m_b[i] * self.beta1 + &grads.biases[i] * (1.0 - self.beta1);
            self.v_b[i] =
                &self.v_b[i] * self.beta2 + &grads.biases[i].mapv(|g| g * g) * (1.0 - self.beta2);
            let update = &self.m_b[i] / c1 / (&self.v_b[i].mapv(|v| (v / c2).sqrt() + self.eps));
            mlp.biases[i] -= &(update * self.lr);
        }
    }
}
