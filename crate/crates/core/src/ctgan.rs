//! Conditional tabular GAN.
//!
//! Rows are encoded with per-feature mode-specific normalization (an `alpha`
//! slot plus a one-hot mode group per feature) followed by a one-hot label
//! group. The generator maps noise and a class condition to an encoded row;
//! the discriminator scores encoded rows together with their condition.
//! Conditions are drawn by training-by-sampling so that infrequent classes
//! are seen far more often than their share of the data.

use std::ops::Range;

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gmm::{self, fit_gmm, Gmm, ModeEncoding, ModeSelect};
use crate::nn::{
    adam_step, bce_with_logits, softmax_jvp, softmax_rows, Activation, AdamConfig, AdamState, LayerSpec, Mlp,
    MlpSnapshot, OutputGrad, Pass,
};
use crate::rng::{rng_from_seed, stage_seed, Rng};

/// Encodes rows as `[alpha, mode one-hot]` per feature plus a label one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCodec {
    pub gmms: Vec<Gmm>,
    pub class_names: Vec<String>,
    /// Observed `(min, max)` of each feature in the fitting data; decoded
    /// values are clamped into it.
    pub bounds: Vec<(f64, f64)>,
}

impl RowCodec {
    /// Fits one `k`-component mixture per feature. With `max_rows`, each
    /// mixture is fitted on a seeded random subset of that many rows.
    pub fn fit(train: &Dataset, k: usize, max_rows: Option<usize>, seed: u64) -> Result<Self> {
        if train.n_rows() == 0 {
            return Err(Error::Data("cannot fit a row codec on an empty dataset".into()));
        }
        let rows: Vec<usize> = match max_rows {
            Some(m) if m < train.n_rows() => {
                let mut r = rand::seq::index::sample(&mut rng_from_seed(seed), train.n_rows(), m).into_vec();
                r.sort_unstable();
                r
            }
            _ => (0..train.n_rows()).collect(),
        };
        let mut gmms = Vec::with_capacity(train.n_features());
        let mut bounds = Vec::with_capacity(train.n_features());
        for j in 0..train.n_features() {
            let col = train.features.column(j);
            let values: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
            let fit = fit_gmm(&values, k, gmm::DEFAULT_TOL, gmm::DEFAULT_MAX_ITER, stage_seed(seed, j as u64))?;
            gmms.push(fit.gmm);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            bounds.push((lo, hi));
        }
        Ok(Self { gmms, class_names: train.class_names.clone(), bounds })
    }

    pub fn n_features(&self) -> usize {
        self.gmms.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn block(&self, j: usize) -> usize {
        self.gmms[..j].iter().map(|g| g.n_components() + 1).sum()
    }

    pub fn alpha_index(&self, j: usize) -> usize {
        self.block(j)
    }

    pub fn mode_span(&self, j: usize) -> Range<usize> {
        let start = self.block(j) + 1;
        start..start + self.gmms[j].n_components()
    }

    pub fn label_span(&self) -> Range<usize> {
        let start = self.block(self.n_features());
        start..start + self.n_classes()
    }

    /// Encoded row width: `sum_j (K_j + 1) + classes`.
    pub fn width(&self) -> usize {
        self.label_span().end
    }

    /// Every softmax group of the encoding, feature modes first, label last.
    pub fn softmax_groups(&self) -> Vec<Range<usize>> {
        let mut g: Vec<_> = (0..self.n_features()).map(|j| self.mode_span(j)).collect();
        g.push(self.label_span());
        g
    }

    pub fn encode_row(&self, row: ArrayView1<f64>, label: usize, rng: Option<&mut Rng>) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        let mut rng = rng;
        for (j, g) in self.gmms.iter().enumerate() {
            let select = match rng.as_deref_mut() {
                Some(r) => ModeSelect::Sample(r),
                None => ModeSelect::Argmax,
            };
            let e = g.encode_value(row[j], select);
            out[self.alpha_index(j)] = e.alpha;
            out[self.mode_span(j).start + e.mode] = 1.0;
        }
        out[self.label_span().start + label] = 1.0;
        out
    }

    /// Encodes every row, sampling modes from the posterior.
    pub fn encode(&self, data: &Dataset, rng: &mut Rng) -> Result<Array2<f64>> {
        if data.n_features() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: data.n_features() });
        }
        let mut out = Array2::zeros((data.n_rows(), self.width()));
        for (i, row) in data.features.rows().into_iter().enumerate() {
            let enc = self.encode_row(row, data.labels[i], Some(rng));
            out.row_mut(i).assign(&ArrayView1::from(&enc));
        }
        Ok(out)
    }

    /// Decodes one encoded row: per feature the most probable live mode and
    /// its alpha; label from the label group.
    pub fn decode_row(&self, enc: ArrayView1<f64>) -> Result<(Vec<f64>, usize)> {
        if enc.len() != self.width() {
            return Err(Error::Dimension { expected: self.width(), got: enc.len() });
        }
        let mut values = Vec::with_capacity(self.n_features());
        for (j, g) in self.gmms.iter().enumerate() {
            let group = enc.slice(s![self.mode_span(j)]);
            let mut mode = None;
            for (k, &p) in group.iter().enumerate() {
                if g.weights[k] > 0.0 && mode.is_none_or(|m: usize| p > group[m]) {
                    mode = Some(k);
                }
            }
            let mode = mode.unwrap_or_else(|| gmm::argmax(group.as_slice().unwrap_or(&group.to_vec())));
            let e = ModeEncoding { mode, n_modes: g.n_components(), alpha: enc[self.alpha_index(j)] };
            let (lo, hi) = self.bounds[j];
            values.push(g.decode_value(&e).clamp(lo, hi));
        }
        let label_group = enc.slice(s![self.label_span()]).to_vec();
        Ok((values, gmm::argmax(&label_group)))
    }

    /// Applies the output activations to raw generator outputs: `tanh` on
    /// alpha slots, softmax on every one-hot group.
    pub fn activate(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut out = raw.to_owned();
        for j in 0..self.n_features() {
            out.column_mut(self.alpha_index(j)).mapv_inplace(f64::tanh);
        }
        for span in self.softmax_groups() {
            let sm = softmax_rows(raw.slice(s![.., span.clone()]));
            out.slice_mut(s![.., span]).assign(&sm);
        }
        out
    }

    /// Gradient through [`RowCodec::activate`], given the activated output.
    pub fn activate_backward(&self, grad: &Array2<f64>, activated: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(grad.raw_dim());
        for j in 0..self.n_features() {
            let a = self.alpha_index(j);
            let col = ndarray::Zip::from(grad.column(a))
                .and(activated.column(a))
                .map_collect(|&g, &h| g * (1.0 - h * h));
            out.column_mut(a).assign(&col);
        }
        for span in self.softmax_groups() {
            let g = grad.slice(s![.., span.clone()]).to_owned();
            let h = activated.slice(s![.., span.clone()]).to_owned();
            out.slice_mut(s![.., span]).assign(&softmax_jvp(&g, &h));
        }
        out
    }
}

/// One-hot class condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondVector {
    pub class: usize,
    pub n_classes: usize,
}

impl CondVector {
    pub fn to_vec(self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        v[self.class] = 1.0;
        v
    }
}

fn cond_matrix(classes: &[usize], n_classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((classes.len(), n_classes));
    for (i, &c) in classes.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondStrategy {
    /// Class `c` with probability proportional to `ln(1 + count_c)`.
    LogFrequency,
    /// Uniform over the listed classes.
    UniformOver(Vec<usize>),
}

/// Training-by-sampling: draws a class condition and a real row of that class.
#[derive(Debug, Clone)]
pub struct CondSampler {
    by_class: Vec<Vec<usize>>,
    cumulative: Vec<f64>,
}

impl CondSampler {
    pub fn new(labels: &[usize], n_classes: usize, strategy: &CondStrategy) -> Result<Self> {
        let by_class = crate::data::class_indices(labels, n_classes);
        let weights: Vec<f64> = match strategy {
            CondStrategy::LogFrequency => by_class.iter().map(|r| (r.len() as f64).ln_1p()).collect(),
            CondStrategy::UniformOver(classes) => {
                let mut w = vec![0.0; n_classes];
                for &c in classes {
                    if c >= n_classes || by_class[c].is_empty() {
                        return Err(Error::Data(format!("condition class {c} has no rows")));
                    }
                    w[c] = 1.0;
                }
                w
            }
        };
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Data("no class available for conditioning".into()));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self { by_class, cumulative })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    /// Number of rows belonging to classes the sampler can draw.
    pub fn eligible_rows(&self) -> usize {
        let p = self.probabilities();
        self.by_class.iter().zip(p).filter(|(_, p)| *p > 0.0).map(|(r, _)| r.len()).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> (CondVector, usize) {
        let u: f64 = rng.random();
        let last_live = self.cumulative.iter().rposition(|_| true).unwrap_or(0);
        let mut class = self.cumulative.iter().position(|&c| u < c).unwrap_or(last_live);
        while self.by_class[class].is_empty() {
            class = (class + self.cumulative.len() - 1) % self.cumulative.len();
        }
        let rows = &self.by_class[class];
        let row = rows[rng.random_range(0..rows.len())];
        (CondVector { class, n_classes: self.by_class.len() }, row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtganConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub discriminator_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Overrides the default of one pass over the eligible rows per epoch.
    pub steps_per_epoch: Option<usize>,
    pub gmm_components: usize,
    /// Fit each feature mixture on at most this many rows.
    pub gmm_max_rows: Option<usize>,
    pub cond_strategy: CondStrategy,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub seed: u64,
}

impl Default for CtganConfig {
    fn default() -> Self {
        Self {
            noise_dim: 128,
            generator_hidden: vec![256, 256],
            discriminator_hidden: vec![256, 256],
            discriminator_dropout: 0.5,
            epochs: 700,
            batch_size: 64,
            steps_per_epoch: None,
            gmm_components: gmm::DEFAULT_COMPONENTS,
            gmm_max_rows: None,
            cond_strategy: CondStrategy::LogFrequency,
            generator_adam: AdamConfig::gan(),
            discriminator_adam: AdamConfig::gan(),
            seed: 0,
        }
    }
}

impl CtganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 2 || self.noise_dim == 0 || self.gmm_components == 0 {
            return Err(Error::Config("CTGAN needs epochs >= 1, batch >= 2, noise and mixture sizes > 0".into()));
        }
        if !(0.0..1.0).contains(&self.discriminator_dropout) {
            return Err(Error::Config("discriminator dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub discriminator: f64,
    pub generator: f64,
}

/// Trained generator and discriminator together with the codec they use.
#[derive(Debug, Clone)]
pub struct Ctgan {
    pub codec: RowCodec,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub config: CtganConfig,
}

fn build_generator(codec: &RowCodec, cfg: &CtganConfig, seed: u64) -> Result<Mlp> {
    let mut layers: Vec<LayerSpec> = cfg.generator_hidden.iter().map(|&u| LayerSpec::new(u, Activation::Relu)).collect();
    layers.push(LayerSpec::new(codec.width(), Activation::Identity));
    Mlp::new(cfg.noise_dim + codec.n_classes(), &layers, seed)
}

fn build_discriminator(codec: &RowCodec, cfg: &CtganConfig, seed: u64) -> Result<Mlp> {
    let mut layers: Vec<LayerSpec> = cfg
        .discriminator_hidden
        .iter()
        .map(|&u| LayerSpec::new(u, Activation::LeakyRelu).with_dropout(cfg.discriminator_dropout))
        .collect();
    layers.push(LayerSpec::new(1, Activation::Sigmoid));
    Mlp::new(codec.width() + codec.n_classes(), &layers, seed)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} loss became {v}")))
    }
}

/// Step-level driver for adversarial training.
pub struct CtganTrainer {
    model: Ctgan,
    encoded: Array2<f64>,
    sampler: CondSampler,
    g_adam: AdamState,
    d_adam: AdamState,
    rng: Rng,
}

impl CtganTrainer {
    pub fn new(train: &Dataset, codec: RowCodec, cfg: &CtganConfig) -> Result<Self> {
        cfg.validate()?;
        if train.class_names != codec.class_names {
            return Err(Error::Data("training classes differ from codec vocabulary".into()));
        }
        let mut rng = rng_from_seed(stage_seed(cfg.seed, 0));
        let encoded = codec.encode(train, &mut rng)?;
        let sampler = CondSampler::new(&train.labels, train.n_classes(), &cfg.cond_strategy)?;
        let generator = build_generator(&codec, cfg, stage_seed(cfg.seed, 1))?;
        let discriminator = build_discriminator(&codec, cfg, stage_seed(cfg.seed, 2))?;
        let g_adam = AdamState::new(&generator, cfg.generator_adam);
        let d_adam = AdamState::new(&discriminator, cfg.discriminator_adam);
        Ok(Self {
            model: Ctgan { codec, generator, discriminator, config: cfg.clone() },
            encoded,
            sampler,
            g_adam,
            d_adam,
            rng: rng_from_seed(stage_seed(cfg.seed, 3)),
        })
    }

    pub fn model(&self) -> &Ctgan {
        &self.model
    }

    pub fn into_model(self) -> Ctgan {
        self.model
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.model
            .config
            .steps_per_epoch
            .unwrap_or_else(|| (self.sampler.eligible_rows() / self.model.config.batch_size).max(1))
    }

    fn noise_and_cond(&mut self, classes: &[usize]) -> Array2<f64> {
        let n = classes.len();
        let noise = Array2::from_shape_simple_fn((n, self.model.config.noise_dim), || StandardNormal.sample(&mut self.rng));
        concatenate![Axis(1), noise, cond_matrix(classes, self.model.codec.n_classes())]
    }

    fn sample_batch(&mut self) -> (Vec<usize>, Vec<usize>) {
        (0..self.model.config.batch_size).map(|_| {
            let (c, r) = self.sampler.sample(&mut self.rng);
            (c.class, r)
        }).unzip()
    }

    /// One discriminator update on a batch of real rows and generated rows
    /// sharing the same conditions. Returns the mean binary cross-entropy.
    pub fn discriminator_step(&mut self) -> Result<f64> {
        let (classes, rows) = self.sample_batch();
        let input = self.noise_and_cond(&classes);
        let fake = self.model.codec.activate(self.model.generator.predict(input.view())?.view());
        let real = self.encoded.select(Axis(0), &rows);
        let cond = cond_matrix(&classes, self.model.codec.n_classes());
        let batch = concatenate![Axis(0), concatenate![Axis(1), real, cond], concatenate![Axis(1), fake, cond]];
        let (_, cache) = self.model.discriminator.forward(batch.view(), Pass::Train(&mut self.rng))?;
        let n = classes.len();
        let logits = cache.logits();
        let (l_real, g_real) = bce_with_logits(logits.slice(s![..n, ..]), 1.0);
        let (l_fake, g_fake) = bce_with_logits(logits.slice(s![n.., ..]), 0.0);
        let loss = check_finite("discriminator", l_real + l_fake)?;
        let grad = concatenate![Axis(0), g_real, g_fake];
        let grads = self.model.discriminator.backward(&cache, OutputGrad::Logits(grad))?;
        adam_step(&mut self.model.discriminator, &grads, &mut self.d_adam)?;
        Ok(loss)
    }

    /// One generator update: non-saturating adversarial loss plus
    /// cross-entropy pulling the generated label group onto the condition.
    pub fn generator_step(&mut self) -> Result<f64> {
        let (classes, _) = self.sample_batch();
        let input = self.noise_and_cond(&classes);
        let codec = &self.model.codec;
        let (raw, g_cache) = self.model.generator.forward(input.view(), Pass::Train(&mut self.rng))?;
        let fake = codec.activate(raw.view());
        let cond = cond_matrix(&classes, codec.n_classes());
        let d_in = concatenate![Axis(1), fake, cond];
        let (_, d_cache) = self.model.discriminator.forward(d_in.view(), Pass::Train(&mut self.rng))?;
        let (adv, d_grad) = bce_with_logits(d_cache.logits().view(), 1.0);
        let d_grads = self.model.discriminator.backward(&d_cache, OutputGrad::Logits(d_grad))?;
        let width = codec.width();
        let grad_fake = d_grads.input.slice(s![.., ..width]).to_owned();
        let mut grad_raw = codec.activate_backward(&grad_fake, &fake);

        let n = classes.len() as f64;
        let labels = codec.label_span();
        let mut cond_loss = 0.0;
        for (i, &c) in classes.iter().enumerate() {
            cond_loss -= crate::nn::floor_prob(fake[[i, labels.start + c]]).ln();
            for (k, col) in labels.clone().enumerate() {
                let target = if k == c { 1.0 } else { 0.0 };
                grad_raw[[i, col]] += (fake[[i, col]] - target) / n;
            }
        }
        let loss = check_finite("generator", adv + cond_loss / n)?;
        let g_grads = self.model.generator.backward(&g_cache, OutputGrad::Output(grad_raw))?;
        adam_step(&mut self.model.generator, &g_grads, &mut self.g_adam)?;
        Ok(loss)
    }

    pub fn epoch(&mut self) -> Result<EpochLoss> {
        let steps = self.steps_per_epoch();
        let (mut d, mut g) = (0.0, 0.0);
        for _ in 0..steps {
            d += self.discriminator_step()?;
            g += self.generator_step()?;
        }
        Ok(EpochLoss { discriminator: d / steps as f64, generator: g / steps as f64 })
    }
}

/// Adversarially trains a generator/discriminator pair for `cfg.epochs`.
pub fn train_ctgan(train: &Dataset, codec: RowCodec, cfg: &CtganConfig) -> Result<(Ctgan, Vec<EpochLoss>)> {
    let mut trainer = CtganTrainer::new(train, codec, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let l = trainer.epoch()?;
        log::debug!("ctgan epoch {epoch}: d {:.4} g {:.4}", l.discriminator, l.generator);
        history.push(l);
    }
    Ok((trainer.into_model(), history))
}

impl Ctgan {
    /// Untrained networks for `codec`; useful to inspect shapes.
    pub fn untrained(codec: RowCodec, cfg: &CtganConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = build_generator(&codec, cfg, stage_seed(cfg.seed, 1))?;
        let discriminator = build_discriminator(&codec, cfg, stage_seed(cfg.seed, 2))?;
        Ok(Self { codec, generator, discriminator, config: cfg.clone() })
    }

    /// Activated generator outputs for `n` rows conditioned on `class`.
    pub fn generate_encoded(&self, class: usize, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        if class >= self.codec.n_classes() {
            return Err(Error::Data(format!("unknown class id {class}")));
        }
        if n == 0 {
            return Ok(Array2::zeros((0, self.codec.width())));
        }
        let noise = Array2::from_shape_simple_fn((n, self.config.noise_dim), || StandardNormal.sample(rng));
        let input = concatenate![Axis(1), noise, cond_matrix(&vec![class; n], self.codec.n_classes())];
        Ok(self.codec.activate(self.generator.predict(input.view())?.view()))
    }

    /// Discriminator scores for encoded rows under their conditions.
    pub fn score(&self, encoded: ArrayView2<f64>, classes: &[usize]) -> Result<Vec<f64>> {
        let input = concatenate![Axis(1), encoded, cond_matrix(classes, self.codec.n_classes())];
        Ok(self.discriminator.predict(input.view())?.column(0).to_vec())
    }

    /// `n` synthetic rows of `class`, decoded to feature space. The label is
    /// the condition, whatever the generated label group says.
    pub fn generate(&self, template: &Dataset, class: usize, n: usize, rng: &mut Rng) -> Result<Dataset> {
        if template.n_features() != self.codec.n_features() {
            return Err(Error::Dimension { expected: self.codec.n_features(), got: template.n_features() });
        }
        let enc = self.generate_encoded(class, n, rng)?;
        let mut values = Vec::with_capacity(n * self.codec.n_features());
        for row in enc.rows() {
            values.extend(self.codec.decode_row(row)?.0);
        }
        let features = Array2::from_shape_vec((n, self.codec.n_features()), values).expect("width fixed");
        Ok(Dataset {
            features,
            labels: vec![class; n],
            class_names: template.class_names.clone(),
            schema: template.schema.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtganSnapshot {
    pub config: CtganConfig,
    pub codec: RowCodec,
    pub generator: MlpSnapshot,
    pub discriminator: MlpSnapshot,
}

impl From<&Ctgan> for CtganSnapshot {
    fn from(m: &Ctgan) -> Self {
        Self {
            config: m.config.clone(),
            codec: m.codec.clone(),
            generator: MlpSnapshot::from(&m.generator),
            discriminator: MlpSnapshot::from(&m.discriminator),
        }
    }
}

impl TryFrom<CtganSnapshot> for Ctgan {
    type Error = Error;

    fn try_from(s: CtganSnapshot) -> Result<Self> {
        Ok(Self {
            codec: s.codec,
            generator: Mlp::try_from(s.generator)?,
            discriminator: Mlp::try_from(s.discriminator)?,
            config: s.config,
        })
    }
}
