//! End-to-end orchestration: ingest, split and scale, CTGAN augmentation of
//! rare classes, SMOTEENN, cross-validation, final training and evaluation.
//!
//! Every stage draws its randomness from `stage_seed(master, STAGE_*)`, so
//! switching one stage off leaves the seeds of the others untouched.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{self, targets, Classifier, ClassifierConfig, ClassifierSnapshot, EpochStats, LossKind, Mode};
use crate::ctgan::{train_ctgan, CondStrategy, Ctgan, CtganConfig, CtganSnapshot, EpochLoss, RowCodec};
use crate::data::{
    clean, load_csv, save_snapshot, stratified_kfold, stratified_split_indices, Dataset, MinMaxScaler, SchemaSpec,
    BENIGN, DEFAULT_LABEL_COLUMN,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion, one_vs_rest_roc, per_class_metrics, ConfusionMatrix, MetricsReport};
use crate::resample::{enn_filter, smote, EnnParams, SmoteAmount, SmoteParams};
use crate::rng::{rng_from_seed, stage_seed};

pub const STAGE_BENCHMARK: u64 = 0;
pub const STAGE_SPLIT: u64 = 1;
pub const STAGE_CTGAN: u64 = 2;
pub const STAGE_GENERATE: u64 = 3;
pub const STAGE_SMOTE: u64 = 4;
pub const STAGE_CLASSIFIER: u64 = 5;
pub const STAGE_FOLDS: u64 = 6;

// ---------------------------------------------------------------------------
// Synthetic benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkClass {
    pub name: String,
    pub count: usize,
    /// Cluster centre, one entry per feature.
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_features: usize,
    pub classes: Vec<BenchmarkClass>,
}

fn offset_mean(d: usize, dims: std::ops::Range<usize>, value: f64) -> Vec<f64> {
    let mut m = vec![0.0; d];
    m[dims].iter_mut().for_each(|v| *v = value);
    m
}

impl Default for BenchmarkSpec {
    /// Benign traffic at the origin, two common attacks shifted along
    /// disjoint feature blocks, and two rare web attacks that sit close to
    /// each other on a third block.
    fn default() -> Self {
        let d = 20;
        let xss = offset_mean(d, 10..16, 2.5);
        let mut sqli = xss.clone();
        sqli[16..19].iter_mut().for_each(|v| *v = 1.5);
        let class = |name: &str, count, mean| BenchmarkClass { name: name.into(), count, mean, std: 1.0 };
        Self {
            n_features: d,
            classes: vec![
                class(BENIGN, 20_000, vec![0.0; d]),
                class("DoS", 2_000, offset_mean(d, 0..5, 2.5)),
                class("Bot", 1_500, offset_mean(d, 5..10, 2.5)),
                class("Brute Force-XSS", 30, xss),
                class("SQL Injection", 20, sqli),
            ],
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.classes.len() < 2 {
            return Err(Error::Config("benchmark needs features and at least two classes".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if c.mean.len() != self.n_features {
                return Err(Error::Config(format!("class {:?} mean has {} entries", c.name, c.mean.len())));
            }
            if !(c.std > 0.0 && c.std.is_finite()) || c.count < 2 || !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("class {:?} needs std > 0, count >= 2 and a unique name", c.name)));
            }
        }
        Ok(())
    }

    /// Copy with every class count multiplied by `factor` (at least 2 rows each).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for c in &mut s.classes {
            c.count = ((c.count as f64 * factor).round() as usize).max(2);
        }
        s
    }
}

/// Gaussian-cluster multiclass data. Rows are grouped by class in spec order.
pub fn make_benchmark(spec: &BenchmarkSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let n: usize = spec.classes.iter().map(|c| c.count).sum();
    let mut values = Vec::with_capacity(n * spec.n_features);
    let mut labels = Vec::with_capacity(n);
    for (id, c) in spec.classes.iter().enumerate() {
        let noise = Normal::new(0.0, c.std).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..c.count {
            values.extend(c.mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(id);
        }
    }
    let features = Array2::from_shape_vec((n, spec.n_features), values).expect("sizes agree");
    Dataset::from_parts(features, labels, spec.classes.iter().map(|c| c.name.clone()).collect())
}

// ---------------------------------------------------------------------------
// Projection

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Feature-space mean of the union the basis was fitted on.
    pub mean: Array1<f64>,
    /// `d x 2` matrix whose columns are the two leading components.
    pub components: Array2<f64>,
    /// Share of total variance per component, descending, all `d` of them.
    pub explained_variance_ratio: Vec<f64>,
    pub before: Array2<f64>,
    pub after: Array2<f64>,
}

/// Two-component PCA fitted on the union of both datasets. Each component's
/// largest-magnitude loading is made positive.
pub fn emit_projection(before: &Dataset, after: &Dataset) -> Result<Projection> {
    let d = before.n_features();
    if d < 2 {
        return Err(Error::Data(format!("projection needs at least 2 features, got {d}")));
    }
    if after.n_features() != d {
        return Err(Error::Dimension { expected: d, got: after.n_features() });
    }
    let n = before.n_rows() + after.n_rows();
    if n < 2 {
        return Err(Error::Data("projection needs at least 2 rows".into()));
    }
    let union = ndarray::concatenate![Axis(0), before.features, after.features];
    let mean = union.mean_axis(Axis(0)).expect("non-empty");
    let centered = &union - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let explained_variance_ratio = order
        .iter()
        .map(|&i| if total > 0.0 { eig.eigenvalues[i].max(0.0) / total } else { 0.0 })
        .collect();
    let mut components = Array2::zeros((d, 2));
    for (c, &i) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(i);
        let mut lead = 0;
        for r in 1..d {
            if v[r].abs() > v[lead].abs() {
                lead = r;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components[[r, c]] = sign * v[r];
        }
    }
    let project = |x: &Array2<f64>| (x - &mean).dot(&components);
    Ok(Projection {
        before: project(&before.features),
        after: project(&after.features),
        mean,
        components,
        explained_variance_ratio,
    })
}

/// `pc1,pc2,label` rows with class names as labels.
pub fn projection_csv(coords: ArrayView2<f64>, data: &Dataset) -> String {
    let mut s = String::from("pc1,pc2,label\n");
    for (row, &l) in coords.rows().into_iter().zip(&data.labels) {
        s.push_str(&format!("{},{},{}\n", row[0], row[1], csv_field(&data.class_names[l])));
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    /// Fit on the whole training set; conditions select the classes.
    #[default]
    Full,
    /// Fit only on rows of the rare classes.
    Rare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Training conditions drawn uniformly over the rare classes.
    #[default]
    RareClasses,
    /// Conditions drawn with log-frequency weights over all classes.
    LogFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtganStage {
    pub enabled: bool,
    pub samples_per_class: usize,
    pub fit_scope: FitScope,
    /// Replaces `model.cond_strategy`.
    pub conditioning: Conditioning,
    pub model: CtganConfig,
}

impl Default for CtganStage {
    fn default() -> Self {
        Self {
            enabled: true,
            samples_per_class: 1000,
            fit_scope: FitScope::Full,
            conditioning: Conditioning::RareClasses,
            model: CtganConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteTargets {
    /// Every class except the largest.
    #[default]
    Minority,
    Rare,
    Classes(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteennStage {
    pub enabled: bool,
    pub amount: SmoteAmount,
    pub targets: SmoteTargets,
    pub smote_k: usize,
    /// Cleaning pass after oversampling; off gives plain SMOTE.
    pub enn: bool,
    pub enn_k: usize,
}

impl Default for SmoteennStage {
    fn default() -> Self {
        Self { enabled: true, amount: SmoteAmount::Balance, targets: SmoteTargets::Minority, smote_k: 5, enn: true, enn_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// CSV files to ingest; when empty the synthetic benchmark is used.
    pub inputs: Vec<PathBuf>,
    pub label_column: String,
    pub benchmark: BenchmarkSpec,
    pub rare_classes: Vec<String>,
    pub ctgan: CtganStage,
    pub smoteenn: SmoteennStage,
    pub classifier: ClassifierConfig,
    pub train_fraction: f64,
    /// Cross-validation folds; 0 skips cross-validation.
    pub folds: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub projection: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            label_column: DEFAULT_LABEL_COLUMN.into(),
            benchmark: BenchmarkSpec::default(),
            rare_classes: vec!["Brute Force-XSS".into(), "SQL Injection".into()],
            ctgan: CtganStage::default(),
            smoteenn: SmoteennStage::default(),
            classifier: ClassifierConfig::default(),
            train_fraction: 0.7,
            folds: 5,
            seed: 0,
            out_dir: PathBuf::from("ctgsm-out"),
            projection: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.folds == 1 {
            return Err(Error::Config("folds must be 0 (off) or at least 2".into()));
        }
        if self.ctgan.enabled {
            self.ctgan.model.validate()?;
        }
        if self.smoteenn.enabled && (self.smoteenn.smote_k == 0 || self.smoteenn.enn_k == 0) {
            return Err(Error::Config("SMOTE and ENN neighbour counts must be positive".into()));
        }
        if self.inputs.is_empty() {
            self.benchmark.validate()?;
        }
        Ok(())
    }

    /// Class ids of the configured rare classes.
    /// Class ids of the configured rare classes. An exact name match wins;
    /// otherwise names are compared ignoring case and whitespace, so
    /// "Brute Force-XSS" finds the raw "Brute Force -XSS" label.
    pub fn rare_ids(&self, data: &Dataset) -> Result<Vec<usize>> {
        let key = |s: &str| s.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).collect::<String>();
        self.rare_classes
            .iter()
            .map(|name| {
                data.class_id(name)
                    .or_else(|| {
                        let matches: Vec<usize> =
                            (0..data.n_classes()).filter(|&c| key(&data.class_names[c]) == key(name)).collect();
                        (matches.len() == 1).then(|| matches[0])
                    })
                    .ok_or_else(|| Error::Config(format!("rare class {name:?} not in data")))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Stages

/// Loads and cleans the configured inputs, or generates the benchmark.
pub fn ingest(cfg: &PipelineConfig) -> Result<Dataset> {
    if cfg.inputs.is_empty() {
        make_benchmark(&cfg.benchmark, stage_seed(cfg.seed, STAGE_BENCHMARK))
    } else {
        let raw = load_csv(&cfg.inputs, &SchemaSpec::Auto { label_column: cfg.label_column.clone() })?;
        clean(&raw)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Scaled training rows.
    pub train: Dataset,
    /// Scaled held-out rows.
    pub test: Dataset,
    pub scaler: MinMaxScaler,
}

/// Stratified split followed by a scaler fitted on the training side only.
pub fn preprocess(cfg: &PipelineConfig, data: &Dataset) -> Result<Split> {
    let (train_indices, test_indices) =
        stratified_split_indices(&data.labels, data.n_classes(), cfg.train_fraction, stage_seed(cfg.seed, STAGE_SPLIT))?;
    let train_raw = data.select(&train_indices);
    let scaler = MinMaxScaler::fit(&train_raw)?;
    Ok(Split {
        train: scaler.transform(&train_raw)?,
        test: scaler.transform(&data.select(&test_indices))?,
        train_indices,
        test_indices,
        scaler,
    })
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub data: Dataset,
    pub model: Option<Ctgan>,
    pub losses: Vec<EpochLoss>,
}

/// Fits CTGAN and appends `samples_per_class` generated rows per rare class.
/// `master` stands in for the pipeline seed (cross-validation folds pass
/// their own).
pub fn augment(cfg: &PipelineConfig, train: &Dataset, rare: &[usize], master: u64) -> Result<Augmented> {
    let stage = &cfg.ctgan;
    if !stage.enabled || stage.samples_per_class == 0 || rare.is_empty() {
        return Ok(Augmented { data: train.clone(), model: None, losses: Vec::new() });
    }
    let fit_rows = match stage.fit_scope {
        FitScope::Full => train.clone(),
        FitScope::Rare => {
            let idx: Vec<usize> = (0..train.n_rows()).filter(|&i| rare.contains(&train.labels[i])).collect();
            train.select(&idx)
        }
    };
    let seed = stage_seed(master, STAGE_CTGAN);
    let mut model_cfg = stage.model.clone();
    model_cfg.seed = seed;
    model_cfg.cond_strategy = match stage.conditioning {
        Conditioning::RareClasses => CondStrategy::UniformOver(rare.to_vec()),
        Conditioning::LogFrequency => CondStrategy::LogFrequency,
    };
    let codec = RowCodec::fit(&fit_rows, model_cfg.gmm_components, model_cfg.gmm_max_rows, seed)?;
    let (model, losses) = train_ctgan(&fit_rows, codec, &model_cfg)?;
    let mut rng = rng_from_seed(stage_seed(master, STAGE_GENERATE));
    let mut data = train.clone();
    for &c in rare {
        data = data.concat(&model.generate(train, c, stage.samples_per_class, &mut rng)?)?;
    }
    Ok(Augmented { data, model: Some(model), losses })
}

fn smote_targets(stage: &SmoteennStage, data: &Dataset, rare: &[usize]) -> Result<Vec<usize>> {
    let counts = data.class_counts();
    Ok(match &stage.targets {
        SmoteTargets::Minority => {
            let largest = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
            (0..counts.len()).filter(|&c| c != largest && counts[c] > 0).collect()
        }
        SmoteTargets::Rare => rare.to_vec(),
        SmoteTargets::Classes(names) => names
            .iter()
            .map(|n| data.class_id(n).ok_or_else(|| Error::Config(format!("SMOTE target {n:?} not in data"))))
            .collect::<Result<_>>()?,
    })
}

/// SMOTE over the configured targets, then ENN over originals plus
/// synthetic rows when enabled.
pub fn resample(cfg: &PipelineConfig, data: &Dataset, rare: &[usize], master: u64) -> Result<Dataset> {
    let stage = &cfg.smoteenn;
    if !stage.enabled {
        return Ok(data.clone());
    }
    let mut params = SmoteParams::new(stage.amount, smote_targets(stage, data, rare)?, stage_seed(master, STAGE_SMOTE));
    params.k_neighbors = stage.smote_k;
    let combined = data.concat(&smote(data, &params)?.synthetic)?;
    if stage.enn {
        enn_filter(&combined, &EnnParams { k_neighbors: stage.enn_k })
    } else {
        Ok(combined)
    }
}

/// Classifier settings with the seed derived from `master`.
pub fn classifier_config(cfg: &PipelineConfig, master: u64) -> ClassifierConfig {
    ClassifierConfig { seed: stage_seed(master, STAGE_CLASSIFIER), ..cfg.classifier.clone() }
}

/// Weight-initialization, shuffling and dropout seeds the classifier derives
/// from its configured seed.
fn classifier_seeds(c: &ClassifierConfig) -> [(String, u64); 3] {
    [
        ("classifier_init".into(), stage_seed(c.seed, 0)),
        ("classifier_shuffle".into(), stage_seed(c.seed, 1)),
        ("classifier_dropout".into(), stage_seed(c.seed, 2)),
    ]
}

pub fn train(cfg: &PipelineConfig, data: &Dataset, master: u64) -> Result<(Classifier, Vec<EpochStats>)> {
    classifier::fit(data, &classifier_config(cfg, master))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareRecall {
    pub name: String,
    pub support: usize,
    pub detected: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub mode: Mode,
    pub class_names: Vec<String>,
    pub metrics: MetricsReport,
    /// Rare rows predicted as their own class (or as an attack in binary mode).
    pub rare: Vec<RareRecall>,
    pub auc: BTreeMap<String, Option<f64>>,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<crate::metrics::RocCurve>>,
}

impl Evaluation {
    pub fn rare_recall_mean(&self) -> f64 {
        if self.rare.is_empty() {
            return 0.0;
        }
        self.rare.iter().map(|r| r.recall).sum::<f64>() / self.rare.len() as f64
    }
}

/// Scores `model` on `test`; `rare` are multiclass ids of `test`.
pub fn evaluate(model: &Classifier, test: &Dataset, rare: &[usize]) -> Result<Evaluation> {
    let (y_true, names) = targets(test, model.mode);
    if names != model.class_names {
        return Err(Error::Data("test classes differ from the model's classes".into()));
    }
    let probs = model.predict_proba(test.features.view())?;
    let y_pred = classifier::argmax_rows(probs.view());
    let cm = confusion(&y_true, &y_pred, names.len())?.with_class_names(&names);
    let metrics = per_class_metrics(&cm)?;
    let roc = one_vs_rest_roc(probs.view(), &y_true)?;
    let auc = names.iter().cloned().zip(roc.iter().map(|r| r.as_ref().map(|r| r.auc))).collect();
    let rare = rare
        .iter()
        .map(|&c| {
            let rows: Vec<usize> = (0..test.n_rows()).filter(|&i| test.labels[i] == c).collect();
            let wanted = match model.mode {
                Mode::Multiclass => c,
                Mode::Binary => 1,
            };
            let detected = rows.iter().filter(|&&i| y_pred[i] == wanted).count();
            RareRecall {
                name: test.class_names[c].clone(),
                support: rows.len(),
                detected,
                recall: if rows.is_empty() { 0.0 } else { detected as f64 / rows.len() as f64 },
            }
        })
        .collect();
    Ok(Evaluation { mode: model.mode, class_names: names, metrics, rare, auc, confusion: cm, roc })
}

/// Augmentation, resampling and training for one training set.
pub fn fit_training_set(cfg: &PipelineConfig, rows: &Dataset, rare: &[usize], master: u64) -> Result<Classifier> {
    let augmented = augment(cfg, rows, rare, master)?;
    let resampled = resample(cfg, &augmented.data, rare, master)?;
    Ok(train(cfg, &resampled, master)?.0)
}

// ---------------------------------------------------------------------------
// Cross-validation

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FoldScores {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl FoldScores {
    fn from_report(m: &MetricsReport) -> Self {
        Self {
            accuracy: m.accuracy,
            macro_precision: m.macro_avg.precision,
            macro_recall: m.macro_avg.recall,
            macro_f1: m.macro_avg.f1,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self { accuracy: a[0], macro_precision: a[1], macro_recall: a[2], macro_f1: a[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub scores: FoldScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean: FoldScores,
    /// Sample standard deviation across folds.
    pub std: FoldScores,
}

/// Stratified k-fold evaluation. Augmentation and resampling are refitted on
/// each fold's training rows; validation rows are never seen by them.
pub fn cross_validate(cfg: &PipelineConfig, train: &Dataset, rare: &[usize], k: usize) -> Result<CvReport> {
    let folds = stratified_kfold(&train.labels, train.n_classes(), k, stage_seed(cfg.seed, STAGE_FOLDS))?;
    let mut results = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let master = stage_seed(stage_seed(cfg.seed, STAGE_FOLDS), f as u64 + 1);
        let model = fit_training_set(cfg, &train.select(&fold.train), rare, master)?;
        let eval = evaluate(&model, &train.select(&fold.validation), rare)?;
        log::info!("fold {}: macro F1 {:.4}", f + 1, eval.metrics.macro_avg.f1);
        results.push(FoldResult {
            fold: f + 1,
            train_rows: fold.train.len(),
            validation_rows: fold.validation.len(),
            scores: FoldScores::from_report(&eval.metrics),
        });
    }
    let n = results.len() as f64;
    let mut mean = [0.0; 4];
    for r in &results {
        mean.iter_mut().zip(r.scores.as_array()).for_each(|(m, v)| *m += v / n);
    }
    let mut var = [0.0; 4];
    for r in &results {
        for (j, v) in r.scores.as_array().into_iter().enumerate() {
            var[j] += (v - mean[j]).powi(2) / (n - 1.0).max(1.0);
        }
    }
    Ok(CvReport { folds: results, mean: FoldScores::from_array(mean), std: FoldScores::from_array(var.map(f64::sqrt)) })
}

// ---------------------------------------------------------------------------
// Manifest and full run

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub rows_in: usize,
    pub rows_out: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LeakageCheck {
    pub train_rows: usize,
    pub test_rows: usize,
    /// Source-row indices present in both partitions.
    pub index_overlap: usize,
    /// Held-out rows whose value digest occurs in any training-stage input.
    /// Nonzero only when the source table contains duplicated rows.
    pub digest_overlap: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub leakage: LeakageCheck,
    /// SHA-256 of every other file in the output directory.
    pub digests: BTreeMap<String, String>,
    pub completed: bool,
    pub error: Option<String>,
}

fn counts_by_name(data: &Dataset) -> BTreeMap<String, usize> {
    data.class_names.iter().cloned().zip(data.class_counts()).collect()
}

/// SHA-256 over the bit patterns of one feature row.
pub fn row_digest(row: ndarray::ArrayView1<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in row {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

fn digest_overlap(test: &Dataset, training_inputs: &[&Dataset]) -> usize {
    let seen: HashSet<[u8; 32]> =
        training_inputs.iter().flat_map(|d| d.features.rows().into_iter().map(row_digest)).collect();
    test.features.rows().into_iter().filter(|r| seen.contains(&row_digest(*r))).count()
}

fn file_name_for(class: &str) -> String {
    class.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn curves_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.accuracy));
    }
    s
}

fn gan_losses_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,discriminator,generator\n");
    for (i, h) in history.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i + 1, h.discriminator, h.generator));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct MetricsFile<'a> {
    #[serde(flatten)]
    evaluation: &'a Evaluation,
    cross_validation: Option<&'a CvReport>,
}

/// Writes the evaluation files: `confusion.csv`, `metrics.json` and one
/// `roc_<class>.csv` per class with both outcomes present.
pub fn write_evaluation(out: &Path, eval: &Evaluation, cv: Option<&CvReport>) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("confusion.csv"), eval.confusion.to_csv())?;
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&MetricsFile { evaluation: eval, cross_validation: cv })?,
    )?;
    for (name, roc) in eval.class_names.iter().zip(&eval.roc) {
        if let Some(r) = roc {
            fs::write(out.join(format!("roc_{}.csv", file_name_for(name))), r.to_csv())?;
        }
    }
    Ok(())
}

pub fn write_projection(out: &Path, before: &Dataset, after: &Dataset) -> Result<Projection> {
    let p = emit_projection(before, after)?;
    fs::write(out.join("projection_before.csv"), projection_csv(p.before.view(), before))?;
    fs::write(out.join("projection_after.csv"), projection_csv(p.after.view(), after))?;
    Ok(p)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// SHA-256 hex digest of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect_digests(root: &Path, dir: &Path, skip: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_digests(root, &p, skip, out)?;
        } else if p != skip {
            let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            out.insert(rel, file_digest(&p)?);
        }
    }
    Ok(())
}

/// Everything a completed run produced, besides the files on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub evaluation: Evaluation,
    pub cross_validation: Option<CvReport>,
    pub history: Vec<EpochStats>,
}

struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    fn record(&mut self, name: &str, rows_in: usize, out: &Dataset, started: Instant) {
        log::info!("stage {name}: {rows_in} -> {} rows", out.n_rows());
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            rows_in,
            rows_out: out.n_rows(),
            class_counts: counts_by_name(out),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
}

/// Runs every stage and writes the report bundle to `cfg.out_dir`. The
/// manifest is written even when a stage fails, listing the stages that
/// finished.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    let seeds = [
        ("benchmark", STAGE_BENCHMARK),
        ("split", STAGE_SPLIT),
        ("ctgan", STAGE_CTGAN),
        ("generate", STAGE_GENERATE),
        ("smote", STAGE_SMOTE),
        ("classifier", STAGE_CLASSIFIER),
        ("folds", STAGE_FOLDS),
    ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), stage_seed(cfg.seed, s)))
    .chain(classifier_seeds(&classifier_config(cfg, cfg.seed)))
    .collect();
    let mut rec = Recorder {
        manifest: RunManifest {
            config: cfg.clone(),
            seeds,
            stages: Vec::new(),
            leakage: LeakageCheck::default(),
            digests: BTreeMap::new(),
            completed: false,
            error: None,
        },
    };
    let result = run_stages(cfg, &out, &mut rec);
    let manifest_path = out.join("manifest.json");
    let mut digests = BTreeMap::new();
    collect_digests(&out, &out, &manifest_path, &mut digests)?;
    rec.manifest.digests = digests;
    match result {
        Ok((evaluation, cross_validation, history)) => {
            rec.manifest.completed = true;
            write_json(&manifest_path, &rec.manifest)?;
            Ok(RunOutcome { manifest: rec.manifest, evaluation, cross_validation, history })
        }
        Err(e) => {
            rec.manifest.error = Some(e.to_string());
            write_json(&manifest_path, &rec.manifest)?;
            Err(e)
        }
    }
}

type StagesOutput = (Evaluation, Option<CvReport>, Vec<EpochStats>);

fn run_stages(cfg: &PipelineConfig, out: &Path, rec: &mut Recorder) -> Result<StagesOutput> {
    let artifacts = out.join("artifacts");
    fs::create_dir_all(&artifacts)?;

    let t = Instant::now();
    let data = ingest(cfg)?;
    let rare = cfg.rare_ids(&data)?;
    rec.record("ingest", data.n_rows(), &data, t);

    let t = Instant::now();
    let split = preprocess(cfg, &data)?;
    save_snapshot(&split.train, Some(&split.scaler), &artifacts.join("train"))?;
    save_snapshot(&split.test, Some(&split.scaler), &artifacts.join("test"))?;
    rec.record("split", data.n_rows(), &split.train, t);
    drop(data);

    let t = Instant::now();
    let augmented = augment(cfg, &split.train, &rare, cfg.seed)?;
    if let Some(model) = &augmented.model {
        write_json(&artifacts.join("ctgan.json"), &CtganSnapshot::from(model))?;
        fs::write(artifacts.join("ctgan_losses.csv"), gan_losses_csv(&augmented.losses))?;
        save_snapshot(&augmented.data, None, &artifacts.join("augmented"))?;
        rec.record("ctgan", split.train.n_rows(), &augmented.data, t);
    }

    let t = Instant::now();
    let processed = resample(cfg, &augmented.data, &rare, cfg.seed)?;
    if cfg.smoteenn.enabled {
        save_snapshot(&processed, None, &artifacts.join("resampled"))?;
        rec.record("smoteenn", augmented.data.n_rows(), &processed, t);
    }

    rec.manifest.leakage = LeakageCheck {
        train_rows: split.train_indices.len(),
        test_rows: split.test_indices.len(),
        index_overlap: {
            let train: HashSet<usize> = split.train_indices.iter().copied().collect();
            split.test_indices.iter().filter(|i| train.contains(i)).count()
        },
        digest_overlap: digest_overlap(&split.test, &[&split.train, &augmented.data, &processed]),
    };

    let cv = if cfg.folds >= 2 {
        let t = Instant::now();
        let report = cross_validate(cfg, &split.train, &rare, cfg.folds)?;
        rec.record("cross_validation", split.train.n_rows(), &split.train, t);
        Some(report)
    } else {
        None
    };

    let t = Instant::now();
    let (model, history) = train(cfg, &processed, cfg.seed)?;
    write_json(&artifacts.join("classifier.json"), &ClassifierSnapshot::from(&model))?;
    fs::write(out.join("curves.csv"), curves_csv(&history))?;
    rec.record("train", processed.n_rows(), &processed, t);

    let t = Instant::now();
    let evaluation = evaluate(&model, &split.test, &rare)?;
    write_evaluation(out, &evaluation, cv.as_ref())?;
    rec.record("evaluate", split.test.n_rows(), &split.test, t);

    if cfg.projection {
        let t = Instant::now();
        write_projection(out, &split.train, &processed)?;
        rec.record("projection", split.train.n_rows() + processed.n_rows(), &processed, t);
    }
    Ok((evaluation, cv, history))
}

// ---------------------------------------------------------------------------
// Variant comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Proposed,
    CrossEntropy,
    PlainDnn,
    DnnSmote,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Proposed, Variant::CrossEntropy, Variant::PlainDnn, Variant::DnnSmote];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::CrossEntropy => "cross_entropy",
            Variant::PlainDnn => "plain_dnn",
            Variant::DnnSmote => "dnn_smote",
        }
    }

    /// `base` adjusted for this variant; output goes to `<out_dir>/<name>`.
    pub fn configure(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.out_dir = base.out_dir.join(self.name());
        match self {
            Variant::Proposed => {}
            Variant::CrossEntropy => cfg.classifier.loss = LossKind::CrossEntropy,
            Variant::PlainDnn => {
                cfg.ctgan.enabled = false;
                cfg.smoteenn.enabled = false;
            }
            Variant::DnnSmote => {
                cfg.ctgan.enabled = false;
                cfg.smoteenn.enabled = true;
                cfg.smoteenn.enn = false;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub rare_recall: f64,
}

/// Runs each variant and writes `comparison.csv` and `comparison.json`.
pub fn compare_variants(base: &PipelineConfig, variants: &[Variant]) -> Result<Vec<VariantResult>> {
    let mut results = Vec::with_capacity(variants.len());
    for &v in variants {
        log::info!("variant {}", v.name());
        let outcome = run_pipeline(&v.configure(base))?;
        let m = &outcome.evaluation.metrics;
        results.push(VariantResult {
            variant: v,
            accuracy: m.accuracy,
            macro_precision: m.macro_avg.precision,
            macro_recall: m.macro_avg.recall,
            macro_f1: m.macro_avg.f1,
            rare_recall: outcome.evaluation.rare_recall_mean(),
        });
    }
    let mut s = String::from("variant,accuracy,macro_precision,macro_recall,macro_f1,rare_recall\n");
    for r in &results {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant.name(),
            r.accuracy,
            r.macro_precision,
            r.macro_recall,
            r.macro_f1,
            r.rare_recall
        ));
    }
    fs::create_dir_all(&base.out_dir)?;
    fs::write(base.out_dir.join("comparison.csv"), s)?;
    write_json(&base.out_dir.join("comparison.json"), &results)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_benchmark_shape() {
        let spec = BenchmarkSpec::default();
        let data = make_benchmark(&spec, 3).unwrap();
        assert_eq!(data.n_rows(), 23_550);
        assert_eq!(data.n_features(), 20);
        assert_eq!(data.class_counts(), vec![20_000, 2_000, 1_500, 30, 20]);
        let share = |c: usize| data.class_counts()[c] as f64 / data.n_rows() as f64;
        assert!((share(3) - 0.0013).abs() < 1e-4 && (share(4) - 0.00085).abs() < 1e-4);
        assert_eq!(data, make_benchmark(&spec, 3).unwrap());
        assert_ne!(data, make_benchmark(&spec, 4).unwrap());
    }

    #[test]
    fn benchmark_means_are_recoverable() {
        let spec = BenchmarkSpec::default();
        let data = make_benchmark(&spec, 9).unwrap();
        for (c, class) in spec.classes.iter().enumerate() {
            let rows = data.select(&data.class_indices()[c]);
            let mean = rows.features.mean_axis(Axis(0)).unwrap();
            let tol = 3.0 * class.std / (class.count as f64).sqrt();
            for (m, t) in mean.iter().zip(&class.mean) {
                assert!((m - t).abs() <= tol, "{} {m} {t}", class.name);
            }
        }
    }

    #[test]
    fn invalid_benchmark_rejected() {
        let mut spec = BenchmarkSpec::default();
        spec.classes[1].mean.pop();
        assert!(matches!(make_benchmark(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn projection_of_planar_data_is_isometric() {
        let before = Dataset::from_parts(array![[0.0, 0.0], [4.0, 0.0], [0.0, 1.0]], vec![0, 1, 0], vec!["a".into(), "b".into()]).unwrap();
        let after = Dataset::from_parts(array![[2.0, 3.0], [-1.0, 0.5]], vec![1, 1], vec!["a".into(), "b".into()]).unwrap();
        let p = emit_projection(&before, &after).unwrap();
        let orig = ndarray::concatenate![Axis(0), before.features, after.features];
        let proj = ndarray::concatenate![Axis(0), p.before, p.after];
        for i in 0..5 {
            for j in 0..5 {
                let d0 = (&orig.row(i) - &orig.row(j)).mapv(|v| v * v).sum().sqrt();
                let d1 = (&proj.row(i) - &proj.row(j)).mapv(|v| v * v).sum().sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        assert!(p.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..2 {
            let col = p.components.column(c);
            let lead = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn projection_needs_two_features() {
        let d = Dataset::from_parts(array![[0.0], [1.0]], vec![0, 1], vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(emit_projection(&d, &d), Err(Error::Data(_))));
    }

    #[test]
    fn projection_csv_quotes_names() {
        let d = Dataset::from_parts(array![[0.0, 0.0]], vec![0], vec!["a,b".into()]).unwrap();
        assert_eq!(projection_csv(array![[1.5, -2.0]].view(), &d), "pc1,pc2,label\n1.5,-2,\"a,b\"\n");
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 5, "smoteenn": {"enn": false}}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert!(!partial.smoteenn.enn && partial.smoteenn.enabled);
        assert!(matches!(PipelineConfig { train_fraction: 1.0, ..cfg.clone() }.validate(), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig { folds: 1, ..cfg }.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rare_names_match_raw_spelling() {
        let data = Dataset::from_parts(
            Array2::zeros((3, 1)),
            vec![0, 1, 2],
            vec!["Benign".into(), "Brute Force -XSS".into(), "SQL Injection".into()],
        )
        .unwrap();
        assert_eq!(PipelineConfig::default().rare_ids(&data).unwrap(), vec![1, 2]);
    }

    #[test]
    fn unknown_rare_class_is_config_error() {
        let cfg = PipelineConfig { rare_classes: vec!["Nope".into()], ..Default::default() };
        let data = make_benchmark(&BenchmarkSpec::default().scaled(0.01), 0).unwrap();
        assert!(matches!(cfg.rare_ids(&data), Err(Error::Config(_))));
    }

    #[test]
    fn variants_toggle_the_right_stages() {
        let base = PipelineConfig::default();
        let plain = Variant::PlainDnn.configure(&base);
        assert!(!plain.ctgan.enabled && !plain.smoteenn.enabled);
        assert_eq!(plain.classifier, base.classifier);
        let smote = Variant::DnnSmote.configure(&base);
        assert!(!smote.ctgan.enabled && smote.smoteenn.enabled && !smote.smoteenn.enn);
        assert_eq!(Variant::CrossEntropy.configure(&base).classifier.loss, LossKind::CrossEntropy);
        assert!(Variant::Proposed.configure(&base).out_dir.ends_with("proposed"));
    }

    #[test]
    fn minority_targets_skip_largest_class() {
        let data = make_benchmark(&BenchmarkSpec::default().scaled(0.1), 0).unwrap();
        assert_eq!(smote_targets(&SmoteennStage::default(), &data, &[3, 4]).unwrap(), vec![1, 2, 3, 4]);
    }
}
