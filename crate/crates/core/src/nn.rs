//! Small feed-forward network engine: dense layers, activations, inverted
//! dropout, hand-written backpropagation, Adam, and the focal and
//! cross-entropy losses.
//!
//! Weight matrices are stored `input x output`, so a batch `X` (rows are
//! samples) maps to `X W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `p` floored at [`PROB_FLOOR`]; NaN stays NaN so a broken forward pass
/// shows up in the loss.
pub(crate) fn floor_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Softmax,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { v } else { LEAKY_RELU_SLOPE * v }),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Identity => z.clone(),
            Activation::Softmax => softmax_rows(z.view()),
        }
    }

    /// Gradient w.r.t. the pre-activation given the gradient w.r.t. the
    /// activation output `h = f(z)`.
    fn backward(self, grad: &Array2<f64>, z: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => Zip::from(grad).and(z).map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 }),
            Activation::LeakyRelu => {
                Zip::from(grad).and(z).map_collect(|&g, &z| if z > 0.0 { g } else { LEAKY_RELU_SLOPE * g })
            }
            Activation::Tanh => Zip::from(grad).and(h).map_collect(|&g, &h| g * (1.0 - h * h)),
            Activation::Sigmoid => Zip::from(grad).and(h).map_collect(|&g, &h| g * h * (1.0 - h)),
            Activation::Identity => grad.clone(),
            Activation::Softmax => softmax_jvp(grad, h),
        }
    }

    fn uses_he_init(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Pulls a gradient w.r.t. softmax outputs `s` back to the logits:
/// `s * (g - <g, s>)` per row.
pub fn softmax_jvp(grad: &Array2<f64>, s: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(grad.raw_dim());
    for ((g, s), mut o) in grad.rows().into_iter().zip(s.rows()).zip(out.rows_mut()) {
        let dot: f64 = g.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut o).and(&g).and(&s).for_each(|o, &g, &s| *o = s * (g - dot));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    /// Drop probability applied to this layer's output in training mode.
    pub dropout: f64,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Shape of one layer used when building a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl LayerSpec {
    pub fn new(units: usize, activation: Activation) -> Self {
        Self { units, activation, dropout: 0.0 }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub seed: u64,
    version: u64,
}

/// Whether a forward pass runs in training mode (dropout active).
pub enum Pass<'a> {
    Inference,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input fed to each layer.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Activation outputs before dropout.
    post: Vec<Array2<f64>>,
    /// Scaled keep masks (`0` or `1 / (1 - p)`) for layers that dropped.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    /// Pre-activation values of the final layer.
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("network has layers")
    }

    /// Pre-activation of every layer, first to last.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

/// Gradient fed into [`Mlp::backward`].
pub enum OutputGrad {
    /// With respect to the network output (after the final activation).
    Output(Array2<f64>),
    /// With respect to the final pre-activation; used with the fused
    /// softmax and sigmoid losses.
    Logits(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(d weights, d bias)` per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    /// Gradient w.r.t. the network input.
    pub input: Array2<f64>,
}

impl Mlp {
    /// Builds a network with seeded He (ReLU family) or Xavier (others)
    /// initialization and zero biases.
    pub fn new(input_dim: usize, layers: &[LayerSpec], seed: u64) -> Result<Self> {
        if layers.is_empty() || input_dim == 0 {
            return Err(Error::Config("network needs an input and at least one layer".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut fan_in = input_dim;
        let mut built = Vec::with_capacity(layers.len());
        for spec in layers {
            if spec.units == 0 {
                return Err(Error::Config("layer with zero units".into()));
            }
            let shape = (fan_in, spec.units);
            let weights = if spec.activation.uses_he_init() {
                let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Array2::from_shape_simple_fn(shape, || n.sample(&mut rng))
            } else {
                let limit = (6.0 / (fan_in + spec.units) as f64).sqrt();
                let u = Uniform::new(-limit, limit).expect("non-empty range");
                Array2::from_shape_simple_fn(shape, || u.sample(&mut rng))
            };
            built.push(Dense {
                weights,
                bias: Array1::zeros(spec.units),
                activation: spec.activation,
                dropout: spec.dropout,
            });
            fan_in = spec.units;
        }
        Self::from_layers(built, seed)
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        let net = Self { layers, seed, version: 0 };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let last = self.layers.len().checked_sub(1).ok_or_else(|| Error::Config("empty network".into()))?;
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Dimension { expected: l.output_dim(), got: l.bias.len() });
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::Dimension { expected: self.layers[i - 1].output_dim(), got: l.input_dim() });
            }
            if l.activation == Activation::Softmax && i != last {
                return Err(Error::Config("softmax is only allowed on the final layer".into()));
            }
            if !(0.0..1.0).contains(&l.dropout) || (i == last && l.dropout != 0.0) {
                return Err(Error::Config(format!("invalid dropout {} on layer {i}", l.dropout)));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, batch: ArrayView2<f64>, mut pass: Pass<'_>) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: batch.ncols() });
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            version: self.version,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut a = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights) + &layer.bias;
            let h = layer.activation.apply(&z);
            let mut out = h.clone();
            let mut mask = None;
            if let Pass::Train(rng) = &mut pass {
                if i + 1 < n && layer.dropout > 0.0 {
                    let p = layer.dropout;
                    let scale = 1.0 / (1.0 - p);
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || if rng.random::<f64>() < p { 0.0 } else { scale });
                    out *= &m;
                    mask = Some(m);
                }
            }
            cache.inputs.push(a);
            cache.pre.push(z);
            cache.post.push(h);
            cache.masks.push(mask);
            a = out;
        }
        Ok((a, cache))
    }

    /// Inference-mode output.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: batch.ncols() });
        }
        let mut a = batch.to_owned();
        for layer in &self.layers {
            a = layer.activation.apply(&(a.dot(&layer.weights) + &layer.bias));
        }
        Ok(a)
    }

    /// Reverse-mode pass reusing the dropout masks recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad: OutputGrad) -> Result<Gradients> {
        if cache.version != self.version || cache.pre.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        for (layer, z) in self.layers.iter().zip(&cache.pre) {
            if z.ncols() != layer.output_dim() {
                return Err(Error::StaleCache);
            }
        }
        let (mut g, from_logits) = match grad {
            OutputGrad::Output(g) => (g, false),
            OutputGrad::Logits(g) => (g, true),
        };
        let last = cache.pre.last().expect("non-empty");
        if g.dim() != last.dim() {
            return Err(Error::Dimension { expected: last.ncols(), got: g.ncols() });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[i] {
                g *= mask;
            }
            let dz = if from_logits && i + 1 == self.layers.len() {
                g
            } else {
                layer.activation.backward(&g, &cache.pre[i], &cache.post[i])
            };
            let dw = cache.inputs[i].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            g = dz.dot(&layer.weights.t());
            layers.push((dw, db));
        }
        layers.reverse();
        Ok(Gradients { layers, input: g })
    }

    /// True when every weight and bias is finite.
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// lr 1e-3, betas (0.9, 0.999).
    pub fn classifier() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    /// lr 2e-4, betas (0.5, 0.9).
    pub fn gan() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.5, beta2: 0.9, epsilon: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::classifier()
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }
}

fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, c1: f64, c2: f64) {
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// One bias-corrected Adam update of every parameter of `net`.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.first.len() != net.layers.len() {
        return Err(Error::Dimension { expected: net.layers.len(), got: grads.layers.len() });
    }
    for ((l, (gw, gb)), (mw, mb)) in net.layers.iter().zip(&grads.layers).zip(&state.first) {
        if gw.dim() != l.weights.dim() || gb.len() != l.bias.len() || mw.dim() != l.weights.dim() || mb.len() != l.bias.len() {
            return Err(Error::Dimension { expected: l.weights.len(), got: gw.len() });
        }
    }
    state.step += 1;
    let cfg = state.config;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[i];
        let (mw, mb) = &mut state.first[i];
        let (vw, vb) = &mut state.second[i];
        adam_update(
            layer.weights.as_slice_mut().expect("standard layout"),
            gw.as_standard_layout().as_slice().expect("standard layout"),
            mw.as_slice_mut().expect("standard layout"),
            vw.as_slice_mut().expect("standard layout"),
            &cfg,
            c1,
            c2,
        );
        adam_update(
            layer.bias.as_slice_mut().expect("contiguous"),
            gb.as_slice().expect("contiguous"),
            mb.as_slice_mut().expect("contiguous"),
            vb.as_slice_mut().expect("contiguous"),
            &cfg,
            c1,
            c2,
        );
    }
    net.bump_version();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, gamma: 2.0 }
    }
}

impl FocalLossConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(gamma >= 0.0) {
            return Err(Error::Config(format!("focal loss needs alpha > 0 and gamma >= 0, got {alpha}, {gamma}")));
        }
        Ok(Self { alpha, gamma })
    }
}

fn check_targets(probs: ArrayView2<f64>, targets: &[usize]) -> Result<()> {
    if probs.nrows() != targets.len() {
        return Err(Error::Dimension { expected: probs.nrows(), got: targets.len() });
    }
    if probs.nrows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= probs.ncols()) {
        return Err(Error::Data(format!("target class {t} out of range for {} outputs", probs.ncols())));
    }
    Ok(())
}

/// Mean focal loss `-alpha (1 - p)^gamma ln p` over the batch, where `p` is
/// the probability given to the true class, and its gradient w.r.t. the
/// logits that produced `probs` through a softmax.
pub fn focal_loss(probs: ArrayView2<f64>, targets: &[usize], cfg: FocalLossConfig) -> Result<(f64, Array2<f64>)> {
    check_targets(probs, targets)?;
    let n = probs.nrows() as f64;
    let FocalLossConfig { alpha, gamma } = cfg;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, (&t, row)) in targets.iter().zip(probs.rows()).enumerate() {
        let p = floor_prob(row[t]);
        let q = 1.0 - p;
        let ln_p = p.ln();
        loss += -alpha * q.powf(gamma) * ln_p;
        // d FL / d p, multiplied by p so that the softmax Jacobian
        // dp/dz_j = p (delta_tj - p_j) only leaves (delta_tj - p_j).
        let focus = if gamma == 0.0 || q <= 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * p * ln_p };
        let coef = alpha * (focus - q.powf(gamma));
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let delta = if j == t { 1.0 } else { 0.0 };
            *g = coef * (delta - row[j]) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean categorical cross-entropy and its gradient w.r.t. softmax logits.
pub fn cross_entropy_loss(probs: ArrayView2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_targets(probs, targets)?;
    let n = probs.nrows() as f64;
    let mut grad = probs.to_owned();
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= floor_prob(probs[[i, t]]).ln();
        grad[[i, t]] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant target,
/// with its gradient w.r.t. the logits. `logits` is a single column.
pub fn bce_with_logits(logits: ArrayView2<f64>, target: f64) -> (f64, Array2<f64>) {
    let n = logits.nrows().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits.mapv(|z| {
        // -(t ln s(z) + (1 - t) ln(1 - s(z))) = softplus(z) - t z
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - target * z;
        (sigmoid(z) - target) / n
    });
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
    /// Row-major `input_dim x output_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serializable form of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSnapshot {
    pub layers: Vec<LayerSnapshot>,
    pub seed: u64,
}

impl From<&Mlp> for MlpSnapshot {
    fn from(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerSnapshot {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    activation: l.activation,
                    dropout: l.dropout,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            seed: net.seed,
        }
    }
}

impl TryFrom<MlpSnapshot> for Mlp {
    type Error = Error;

    fn try_from(s: MlpSnapshot) -> Result<Self> {
        let layers = s
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.input_dim, l.output_dim), l.weights)
                    .map_err(|e| Error::Data(format!("bad weight shape: {e}")))?;
                Ok(Dense { weights, bias: Array1::from(l.bias), activation: l.activation, dropout: l.dropout })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, s.seed)
    }
}
