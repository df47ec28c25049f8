//! Flow-record tables: ingestion, cleaning, label encoding, min-max scaling
//! and stratified partitioning.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_LABEL_COLUMN: &str = "Label";
pub const BENIGN: &str = "Benign";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
    Label,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self { name: name.into(), kind }
    }

    fn is_feature(&self) -> bool {
        matches!(self.kind, ColumnKind::Continuous | ColumnKind::Discrete)
    }
}

fn is_timestamp(name: &str) -> bool {
    name.trim().eq_ignore_ascii_case("timestamp")
}

/// Checks the schema invariants: exactly one label column and timestamp
/// columns always dropped.
pub fn validate_schema(schema: &[Column]) -> Result<()> {
    let labels = schema.iter().filter(|c| c.kind == ColumnKind::Label).count();
    if labels != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one label column, found {labels}"
        )));
    }
    if let Some(c) = schema
        .iter()
        .find(|c| is_timestamp(&c.name) && c.kind != ColumnKind::Dropped)
    {
        return Err(Error::Schema(format!("column {:?} must be dropped", c.name)));
    }
    Ok(())
}

/// How the column schema of a CSV input is obtained.
#[derive(Debug, Clone)]
pub enum SchemaSpec {
    /// Label column found by name; timestamp dropped; columns whose sampled
    /// cells never parse as numbers (identifiers, addresses) dropped; every
    /// other column continuous.
    Auto { label_column: String },
    Explicit(Vec<Column>),
}

impl Default for SchemaSpec {
    fn default() -> Self {
        SchemaSpec::Auto { label_column: DEFAULT_LABEL_COLUMN.to_string() }
    }
}

/// Text cells read from one or more CSV files sharing a header.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn header(&self) -> Vec<&str> {
        self.schema.iter().map(|c| c.name.as_str()).collect()
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

const AUTO_SCHEMA_PROBE_ROWS: usize = 100;

fn infer_schema(header: &[String], rows: &[Vec<String>], label_column: &str) -> Result<Vec<Column>> {
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema(format!("label column {label_column:?} not found in header")))?;
    let probe = &rows[..rows.len().min(AUTO_SCHEMA_PROBE_ROWS)];
    let schema = header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let kind = if j == label_idx {
                ColumnKind::Label
            } else if is_timestamp(name) {
                ColumnKind::Dropped
            } else if !probe.is_empty() && probe.iter().all(|r| parse_number(&r[j]).is_none()) {
                ColumnKind::Dropped
            } else {
                ColumnKind::Continuous
            };
            Column::new(name.trim(), kind)
        })
        .collect::<Vec<_>>();
    validate_schema(&schema)?;
    Ok(schema)
}

fn read_one(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: row {} has {} cells, header has {}",
                path.display(),
                i + 2,
                record.len(),
                header.len()
            )));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Reads and concatenates CSV files with identical headers.
pub fn load_csv<P: AsRef<Path>>(paths: &[P], schema: &SchemaSpec) -> Result<RawTable> {
    if paths.is_empty() {
        return Err(Error::Config("no input files given".into()));
    }
    let mut header: Option<(PathBuf, Vec<String>)> = None;
    let mut rows = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let (h, mut r) = read_one(path)?;
        match &header {
            None => header = Some((path.to_path_buf(), h)),
            Some((first, expected)) if *expected != h => {
                return Err(Error::Schema(format!(
                    "header of {} differs from header of {}",
                    path.display(),
                    first.display()
                )));
            }
            Some(_) => {}
        }
        rows.append(&mut r);
    }
    let (_, header) = header.expect("at least one file");
    let schema = match schema {
        SchemaSpec::Auto { label_column } => infer_schema(&header, &rows, label_column)?,
        SchemaSpec::Explicit(cols) => {
            let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
            if names != header.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Schema("explicit schema does not match the CSV header".into()));
            }
            let cols: Vec<Column> = cols
                .iter()
                .map(|c| {
                    if is_timestamp(&c.name) {
                        Column::new(c.name.clone(), ColumnKind::Dropped)
                    } else {
                        c.clone()
                    }
                })
                .collect();
            validate_schema(&cols)?;
            cols
        }
    };
    Ok(RawTable { schema, rows })
}

/// Numeric feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub schema: Vec<Column>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        schema: Vec<Column>,
    ) -> Result<Self> {
        let ds = Self { features, labels, class_names, schema };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset with a generated schema (`f0, f1, ...` plus `Label`).
    pub fn from_parts(features: Array2<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let schema = default_schema(features.ncols());
        Self::new(features, labels, class_names, schema)
    }

    pub fn validate(&self) -> Result<()> {
        validate_schema(&self.schema)?;
        if self.features.nrows() != self.labels.len() {
            return Err(Error::Dimension { expected: self.features.nrows(), got: self.labels.len() });
        }
        let d = self.schema.iter().filter(|c| c.is_feature()).count();
        if d != self.features.ncols() {
            return Err(Error::Dimension { expected: d, got: self.features.ncols() });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                self.class_names.len()
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.schema.iter().filter(|c| c.is_feature()).map(|c| c.name.as_str()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Row indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        class_indices(&self.labels, self.class_names.len())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            schema: self.schema.clone(),
        }
    }

    /// Same schema and classes, no rows.
    pub fn empty_like(&self) -> Dataset {
        Dataset {
            features: Array2::zeros((0, self.n_features())),
            labels: Vec::new(),
            class_names: self.class_names.clone(),
            schema: self.schema.clone(),
        }
    }

    /// Appends the rows of `other`, which must share columns and classes.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.n_features() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: other.n_features() });
        }
        if other.class_names != self.class_names {
            return Err(Error::Data("cannot concatenate datasets with different classes".into()));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("column counts checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            features,
            labels,
            class_names: self.class_names.clone(),
            schema: self.schema.clone(),
        })
    }

    /// Renders the dataset back to text cells (features then label), using
    /// the dataset's own schema minus dropped columns.
    pub fn to_raw(&self) -> RawTable {
        let schema: Vec<Column> = self
            .schema
            .iter()
            .filter(|c| c.kind != ColumnKind::Dropped)
            .cloned()
            .collect();
        let rows = (0..self.n_rows())
            .map(|i| {
                let mut feature = self.features.row(i).into_iter();
                schema
                    .iter()
                    .map(|c| match c.kind {
                        ColumnKind::Label => self.class_names[self.labels[i]].clone(),
                        _ => format!("{}", feature.next().expect("feature count validated")),
                    })
                    .collect()
            })
            .collect();
        RawTable { schema, rows }
    }
}

pub fn default_schema(d: usize) -> Vec<Column> {
    let mut schema: Vec<Column> = (0..d).map(|j| Column::new(format!("f{j}"), ColumnKind::Continuous)).collect();
    schema.push(Column::new(DEFAULT_LABEL_COLUMN, ColumnKind::Label));
    schema
}

pub fn class_indices(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

/// Parses features, drops rows with NaN, infinite or unparseable cells and
/// encodes labels. `Benign` (any case) is class 0; the remaining classes are
/// numbered in order of first appearance.
pub fn clean(raw: &RawTable) -> Result<Dataset> {
    validate_schema(&raw.schema)?;
    let label_idx = raw
        .schema
        .iter()
        .position(|c| c.kind == ColumnKind::Label)
        .ok_or_else(|| Error::Schema("label column absent".into()))?;
    let feature_cols: Vec<usize> = raw
        .schema
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_feature())
        .map(|(j, _)| j)
        .collect();
    let d = feature_cols.len();

    let mut values = Vec::with_capacity(raw.rows.len() * d);
    let mut label_text = Vec::with_capacity(raw.rows.len());
    'rows: for row in &raw.rows {
        let start = values.len();
        for &j in &feature_cols {
            match parse_number(&row[j]) {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    values.truncate(start);
                    continue 'rows;
                }
            }
        }
        label_text.push(row[label_idx].trim().to_string());
    }
    if label_text.is_empty() {
        return Err(Error::Data("cleaning removed every row".into()));
    }

    let mut class_names: Vec<String> = Vec::new();
    if let Some(b) = label_text.iter().find(|l| l.eq_ignore_ascii_case(BENIGN)) {
        class_names.push(b.clone());
    }
    let mut ids: HashMap<String, usize> = class_names.iter().cloned().map(|n| (n, 0)).collect();
    let labels = label_text
        .into_iter()
        .map(|text| {
            let key = if text.eq_ignore_ascii_case(BENIGN) && !class_names.is_empty() {
                class_names[0].clone()
            } else {
                text
            };
            *ids.entry(key.clone()).or_insert_with(|| {
                class_names.push(key);
                class_names.len() - 1
            })
        })
        .collect::<Vec<_>>();

    let schema: Vec<Column> = raw.schema.clone();
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row width fixed");
    Dataset::new(features, labels, class_names, schema)
}

/// Per-feature min-max normalization to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.n_rows() == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty dataset".into()));
        }
        let mut min = vec![f64::INFINITY; train.n_features()];
        let mut max = vec![f64::NEG_INFINITY; train.n_features()];
        for row in train.features.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: d });
        }
        Ok(())
    }

    /// Maps each feature to `[0, 1]`; out-of-range values are clamped and
    /// constant training features map to 0.
    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data.n_features())?;
        let mut out = data.clone();
        for mut row in out.features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 { ((*v - self.min[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data.n_features())?;
        let mut out = data.clone();
        for mut row in out.features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.min[j] + *v * (self.max[j] - self.min[j]);
            }
        }
        Ok(out)
    }
}

fn shuffled(mut idx: Vec<usize>, rng: &mut crate::rng::Rng) -> Vec<usize> {
    idx.shuffle(rng);
    idx
}

/// Index-level stratified split; both index lists are sorted.
pub fn stratified_split_indices(
    labels: &[usize],
    n_classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, idx) in class_indices(labels, n_classes).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!("class {c} has fewer than 2 samples")));
        }
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        let idx = shuffled(idx, &mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits `data` into (train, test) preserving per-class proportions.
pub fn stratified_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split_indices(&data.labels, data.n_classes(), train_fraction, seed)?;
    Ok((data.select(&train), data.select(&test)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold partition of row indices. Each class is shuffled and
/// dealt round-robin over the folds, continuing where the previous class
/// stopped so fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![Vec::new(); k];
    let mut next = 0usize;
    for (c, idx) in class_indices(labels, n_classes).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::Data(format!("class {c} has {} samples, fewer than k = {k}", idx.len())));
        }
        for i in shuffled(idx, &mut rng) {
            assignment[next % k].push(i);
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut validation = assignment[f].clone();
            validation.sort_unstable();
            let mut train: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| assignment[g].iter().copied()).collect();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotMeta {
    class_names: Vec<String>,
    schema: Vec<Column>,
    scaler: Option<MinMaxScaler>,
}

/// Column holding class IDs in the features file of a snapshot.
pub const SNAPSHOT_LABEL_COLUMN: &str = "__label";

fn snapshot_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("csv"), stem.with_extension("json"))
}

/// Writes `<stem>.csv` (features plus a class-ID column) and `<stem>.json`
/// (class names, schema, optional scaler).
pub fn save_snapshot(data: &Dataset, scaler: Option<&MinMaxScaler>, stem: &Path) -> Result<()> {
    let (csv_path, json_path) = snapshot_paths(stem);
    if let Some(parent) = csv_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header: Vec<String> = data.feature_names().iter().map(|s| s.to_string()).collect();
    header.push(SNAPSHOT_LABEL_COLUMN.into());
    w.write_record(&header)?;
    for (row, label) in data.features.rows().into_iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = SnapshotMeta {
        class_names: data.class_names.clone(),
        schema: data.schema.clone(),
        scaler: scaler.cloned(),
    };
    fs::write(json_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_snapshot(stem: &Path) -> Result<(Dataset, Option<MinMaxScaler>)> {
    let (csv_path, json_path) = snapshot_paths(stem);
    for p in [&csv_path, &json_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
    let mut reader = csv::Reader::from_path(&csv_path)?;
    let width = reader.headers()?.len();
    if width == 0 {
        return Err(Error::Data("empty snapshot header".into()));
    }
    let d = width - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        for cell in record.iter().take(d) {
            values.push(parse_number(cell).ok_or_else(|| Error::Data(format!("bad number {cell:?}")))?);
        }
        let l = record.get(d).unwrap_or("");
        labels.push(l.trim().parse::<usize>().map_err(|_| Error::Data(format!("bad label {l:?}")))?);
    }
    let features = Array2::from_shape_vec((labels.len(), d), values)
        .map_err(|e| Error::Data(e.to_string()))?;
    let data = Dataset::new(features, labels, meta.class_names, meta.schema)?;
    Ok((data, meta.scaler))
}
