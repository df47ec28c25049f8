//! Feed-forward detection model trained with focal (or cross-entropy) loss.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, cross_entropy_loss, focal_loss, Activation, AdamConfig, AdamState, FocalLossConfig, LayerSpec, Mlp,
    MlpSnapshot, OutputGrad, Pass,
};
use crate::rng::{rng_from_seed, stage_seed};

pub const BINARY_CLASS_NAMES: [&str; 2] = ["Benign", "Attack"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Focal(FocalLossConfig),
    CrossEntropy,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Focal(FocalLossConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Binary,
    #[default]
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub mode: Mode,
    pub adam: AdamConfig,
    /// Weight initialization uses `stage_seed(seed, 0)`, epoch shuffling
    /// `stage_seed(seed, 1)` and dropout masks `stage_seed(seed, 2)`.
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            dropout: 0.4,
            epochs: 30,
            batch_size: 512,
            loss: LossKind::default(),
            mode: Mode::Multiclass,
            adam: AdamConfig::classifier(),
            seed: 0,
        }
    }
}

/// Binary relabeling: class 0 stays 0, every other class becomes 1.
pub fn binary_labels(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| usize::from(l != 0)).collect()
}

/// Targets and output names for `data` under `mode`.
pub fn targets(data: &Dataset, mode: Mode) -> (Vec<usize>, Vec<String>) {
    match mode {
        Mode::Binary => (binary_labels(&data.labels), BINARY_CLASS_NAMES.iter().map(|s| s.to_string()).collect()),
        Mode::Multiclass => (data.labels.clone(), data.class_names.clone()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub network: Mlp,
    pub mode: Mode,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mini-batch training with per-epoch shuffling. History records the mean
/// training loss and the training-mode accuracy of every epoch.
pub fn fit(train: &Dataset, cfg: &ClassifierConfig) -> Result<(Classifier, Vec<EpochStats>)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("classifier needs at least one epoch and a positive batch size".into()));
    }
    if train.n_rows() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let (labels, class_names) = targets(train, cfg.mode);
    let n_out = class_names.len();
    let mut counts = vec![0usize; n_out];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {:?} has no training rows", class_names[c])));
    }
    if n_out < 2 {
        return Err(Error::Data("classifier needs at least two classes".into()));
    }

    let mut layers: Vec<LayerSpec> = cfg
        .hidden
        .iter()
        .map(|&u| LayerSpec::new(u, Activation::Relu).with_dropout(cfg.dropout))
        .collect();
    layers.push(LayerSpec::new(n_out, Activation::Softmax));
    let mut net = Mlp::new(train.n_features(), &layers, stage_seed(cfg.seed, 0))?;
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut shuffle_rng = rng_from_seed(stage_seed(cfg.seed, 1));
    let mut dropout_rng = rng_from_seed(stage_seed(cfg.seed, 2));

    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = train.features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (probs, cache) = net.forward(x.view(), Pass::Train(&mut dropout_rng))?;
            let (loss, grad) = match cfg.loss {
                LossKind::Focal(f) => focal_loss(probs.view(), &y, f)?,
                LossKind::CrossEntropy => cross_entropy_loss(probs.view(), &y)?,
            };
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("classifier loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(probs.view()).iter().zip(&y).filter(|(p, t)| p == t).count();
            let grads = net.backward(&cache, OutputGrad::Logits(grad))?;
            adam_step(&mut net, &grads, &mut adam)?;
        }
        if !net.is_finite() {
            return Err(Error::Divergence(format!("classifier weights became non-finite in epoch {epoch}")));
        }
        let n = train.n_rows() as f64;
        let stats = EpochStats { epoch: epoch + 1, loss: loss_sum / n, accuracy: correct as f64 / n };
        log::debug!("classifier epoch {}: loss {:.5} acc {:.4}", stats.epoch, stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok((Classifier { network: net, mode: cfg.mode, class_names }, history))
}

/// Row-wise argmax; ties go to the lower class id.
pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl Classifier {
    pub fn predict_proba(&self, features: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
        self.network.predict(features)
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.predict_proba(features)?.view()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierSnapshot {
    pub mode: Mode,
    pub class_names: Vec<String>,
    pub network: MlpSnapshot,
}

impl From<&Classifier> for ClassifierSnapshot {
    fn from(c: &Classifier) -> Self {
        Self { mode: c.mode, class_names: c.class_names.clone(), network: MlpSnapshot::from(&c.network) }
    }
}

impl TryFrom<ClassifierSnapshot> for Classifier {
    type Error = Error;

    fn try_from(s: ClassifierSnapshot) -> Result<Self> {
        let network = Mlp::try_from(s.network)?;
        if network.output_dim() != s.class_names.len() {
            return Err(Error::Dimension { expected: s.class_names.len(), got: network.output_dim() });
        }
        Ok(Self { network, mode: s.mode, class_names: s.class_names })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, Normal};

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut values = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let offset = if c == 0 { -1.5 } else { 1.5 };
            values.push(offset + noise.sample(&mut rng));
            values.push(noise.sample(&mut rng) * 3.0);
            labels.push(c);
        }
        Dataset::from_parts(Array2::from_shape_vec((n, 2), values).unwrap(), labels, vec!["Benign".into(), "Bot".into()]).unwrap()
    }

    #[test]
    fn binary_relabeling() {
        assert_eq!(binary_labels(&[0, 3, 1, 0, 5]), vec![0, 1, 1, 0, 1]);
    }

    #[test]
    fn learns_separable_toy_data() {
        let data = separable(4000, 1);
        // Dropout noise dominates the loss once it is near zero.
        let cfg = ClassifierConfig { dropout: 0.0, ..Default::default() };
        let (model, history) = fit(&data, &cfg).unwrap();
        assert_eq!(history.len(), 30);
        let pred = model.predict(data.features.view()).unwrap();
        let acc = pred.iter().zip(&data.labels).filter(|(p, t)| p == t).count() as f64 / 4000.0;
        assert!(acc >= 0.99, "{acc}");
        let smoothed: Vec<f64> = history.windows(3).map(|w| w.iter().map(|s| s.loss).sum::<f64>() / 3.0).collect();
        assert!(smoothed.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{smoothed:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(200, 2);
        let cfg = ClassifierConfig { epochs: 3, batch_size: 32, seed: 7, ..Default::default() };
        let (a, ha) = fit(&data, &cfg).unwrap();
        let (b, hb) = fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn output_width_follows_mode() {
        let data = Dataset::from_parts(
            array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]],
            vec![0, 1, 2, 3, 4, 5],
            (0..6).map(|c| format!("c{c}")).collect(),
        )
        .unwrap();
        let cfg = ClassifierConfig { epochs: 1, ..Default::default() };
        let (m, _) = fit(&data, &cfg).unwrap();
        assert_eq!(m.network.output_dim(), 6);
        let (m, _) = fit(&data, &ClassifierConfig { mode: Mode::Binary, ..cfg.clone() }).unwrap();
        assert_eq!(m.network.output_dim(), 2);
        let p = m.predict_proba(data.features.view()).unwrap();
        assert!(p.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
        assert!(matches!(m.predict(array![[1.0, 2.0]].view()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn empty_class_is_rejected() {
        let data = Dataset::from_parts(array![[0.0], [1.0]], vec![0, 0], vec!["Benign".into(), "Bot".into()]).unwrap();
        assert!(matches!(fit(&data, &ClassifierConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_rows(array![[0.5, 0.5], [0.1, 0.9], [1.0, 0.0]].view()), vec![0, 1, 0]);
    }
}
