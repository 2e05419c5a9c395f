//! Scaling, outlier filtering, PCA analysis, windowing and chronological splits.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::track::{TrackError, TrackFrame};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("column `{0}` has no values")]
    EmptyColumn(String),
    #[error("column `{0}` is not present")]
    UnknownColumn(String),
    #[error("column `{0}` has missing values")]
    MissingValues(String),
    #[error("input has no rows")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least 2 windows to split, have {0}")]
    TooFewWindows(usize),
    #[error("bad artifact: {0}")]
    Artifact(String),
}

impl From<TrackError> for PreprocessError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::UnknownColumn(c) => Self::UnknownColumn(c),
            TrackError::MissingValues(c) => Self::MissingValues(c),
            other => Self::BadConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<ColumnRange>,
}

impl ScalerParams {
    pub fn get(&self, name: &str) -> Option<&ColumnRange> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn fit_minmax(frame: &TrackFrame, columns: &[String]) -> Result<ScalerParams, PreprocessError> {
    let columns = columns
        .iter()
        .map(|name| {
            let values = frame.dense_column(name)?;
            let (min, max) = values
                .iter()
                .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
                    None => Some((v, v)),
                    Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
                })
                .ok_or_else(|| PreprocessError::EmptyColumn(name.clone()))?;
            Ok(ColumnRange {
                name: name.clone(),
                min,
                max,
            })
        })
        .collect::<Result<_, PreprocessError>>()?;
    Ok(ScalerParams { columns })
}

/// Maps one value; a constant column (`max == min`) maps to `0.0` forward and
/// back to `min` inverse.
pub fn scale_value(x: f64, range: &ColumnRange, dir: Direction) -> f64 {
    let span = range.max - range.min;
    match dir {
        Direction::Forward if span == 0.0 => 0.0,
        Direction::Forward => (x - range.min) / span,
        Direction::Inverse => x * span + range.min,
    }
}

pub fn apply_minmax(
    frame: &TrackFrame,
    params: &ScalerParams,
    dir: Direction,
) -> Result<TrackFrame, PreprocessError> {
    let mut out = frame.clone();
    for range in &params.columns {
        let col = out
            .column_mut(&range.name)
            .ok_or_else(|| PreprocessError::UnknownColumn(range.name.clone()))?;
        for v in col.values.iter_mut().flatten() {
            *v = scale_value(*v, range, dir);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub subsample: usize,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            contamination: 0.01,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.n_trees == 0 {
            return Err(PreprocessError::BadConfig("n_trees must be >= 1".into()));
        }
        if self.subsample == 0 {
            return Err(PreprocessError::BadConfig("subsample must be > 0".into()));
        }
        if !(0.0..=0.5).contains(&self.contamination) {
            return Err(PreprocessError::BadConfig("contamination must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IsoNode {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: f64,
        /// Range of `feature` among the samples that reached this node.
        min: f64,
        max: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    /// Node 0 is the root.
    pub nodes: Vec<IsoNode>,
}

impl IsoTree {
    /// Depth of the leaf reached by `x` plus the average-path adjustment for
    /// the samples left unresolved in that leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                IsoNode::Leaf { size } => return depth as f64 + average_path_length(*size),
                IsoNode::Split {
                    feature,
                    value,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsoTree>,
    pub subsample_size: usize,
    pub n_features: usize,
}

fn harmonic(n: usize) -> f64 {
    const EXACT_UP_TO: usize = 4096;
    if n <= EXACT_UP_TO {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    } else {
        let n = n as f64;
        n.ln() + 0.577_215_664_901_532_9 + 1.0 / (2.0 * n) - 1.0 / (12.0 * n * n)
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// samples: `c(n) = 2 H(n-1) - 2 (n-1) / n`, with `c(0) = c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
}

fn grow(
    x: &[Vec<f64>],
    rows: &mut [usize],
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<IsoNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(IsoNode::Leaf { size: rows.len() });
    if depth >= max_depth || rows.len() <= 1 {
        return id;
    }
    let n_features = x[rows[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..n_features)
        .filter_map(|f| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(x[r][f]), hi.max(x[r][f]))
            });
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return id;
    }
    let (feature, min, max) = ranges[rng.random_range(0..ranges.len())];
    let value = rng.random_range(min..max);
    let split = partition(rows, |r| x[r][feature] < value);
    let (l, r) = rows.split_at_mut(split);
    let left = grow(x, l, depth + 1, max_depth, rng, nodes);
    let right = grow(x, r, depth + 1, max_depth, rng, nodes);
    nodes[id] = IsoNode::Split {
        feature,
        value,
        min,
        max,
        left,
        right,
    };
    id
}

fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

/// Fits an isolation forest. Each tree draws its own subsample without
/// replacement; tree `t` uses ChaCha stream `t` of `config.seed`, so the
/// forest is identical for a given seed.
pub fn fit_isolation_forest(
    x: &[Vec<f64>],
    config: &ForestConfig,
) -> Result<IsolationForest, PreprocessError> {
    config.validate()?;
    if x.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let n_features = x[0].len();
    if x.iter().any(|r| r.len() != n_features) {
        return Err(PreprocessError::BadConfig("ragged input rows".into()));
    }
    let psi = config.subsample.min(x.len());
    let max_depth = (psi as f64).log2().ceil() as usize;
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut rows = index::sample(&mut rng, x.len(), psi).into_vec();
            let mut nodes = Vec::new();
            grow(x, &mut rows, 0, max_depth, &mut rng, &mut nodes);
            IsoTree { nodes }
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample_size: psi,
        n_features,
    })
}

/// Anomaly scores `2^(-E[h(x)] / c(psi))`; higher means more anomalous.
pub fn iforest_scores(forest: &IsolationForest, x: &[Vec<f64>]) -> Vec<f64> {
    let norm = average_path_length(forest.subsample_size);
    x.iter()
        .map(|row| {
            if norm == 0.0 {
                return 0.5;
            }
            let mean = forest.trees.iter().map(|t| t.path_length(row)).sum::<f64>()
                / forest.trees.len() as f64;
            2f64.powf(-mean / norm)
        })
        .collect()
}

/// Number of rows removed for a contamination fraction, `ceil(c * n)`.
pub fn contamination_count(contamination: f64, n: usize) -> usize {
    // the epsilon keeps e.g. 0.07 * 100 from rounding up to 8
    (((contamination * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of the `ceil(contamination * n)` highest scores, lowest index first
/// among ties. Returned sorted ascending.
pub fn outlier_rows(scores: &[f64], contamination: f64) -> Vec<usize> {
    let k = contamination_count(contamination, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut removed: Vec<usize> = order.into_iter().take(k).collect();
    removed.sort_unstable();
    removed
}

pub fn filter_outliers(
    frame: &TrackFrame,
    scores: &[f64],
    contamination: f64,
) -> (TrackFrame, Vec<usize>) {
    let removed = outlier_rows(scores, contamination);
    let mut keep = vec![true; frame.n_rows()];
    for &r in &removed {
        keep[r] = false;
    }
    (frame.filter_rows(&keep), removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Features that entered the decomposition (zero-variance ones dropped).
    pub features: Vec<String>,
    pub dropped: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// One orthonormal loading vector per component, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub variance_target: f64,
    pub n_for_target: usize,
    /// Three largest-|loading| feature names for each of the first
    /// `n_for_target` components.
    pub top_features: Vec<Vec<String>>,
}

impl PcaResult {
    /// Standardises a row with the fitted means and deviations.
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn project(&self, standardized: &[f64], k: usize) -> Vec<f64> {
        self.components
            .iter()
            .take(k)
            .map(|c| c.iter().zip(standardized).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.features.len()];
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, l) in out.iter_mut().zip(c) {
                *o += s * l;
            }
        }
        out
    }

    pub fn cumulative_ratio(&self) -> Vec<f64> {
        self.explained_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

/// Principal component analysis of standardised columns.
///
/// `x` is row-major with one entry per name in `names`.
pub fn pca_analyze(
    x: &[Vec<f64>],
    names: &[String],
    variance_target: f64,
) -> Result<PcaResult, PreprocessError> {
    let n = x.len();
    if n < 2 {
        return Err(PreprocessError::DegenerateInput(format!("need >= 2 rows, have {n}")));
    }
    if !(0.0..=1.0).contains(&variance_target) {
        return Err(PreprocessError::BadConfig("variance target must lie in [0, 1]".into()));
    }
    let p = names.len();
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut kept = Vec::new();
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            warn!(feature = %names[j], "dropping zero-variance feature from PCA");
            dropped.push(names[j].clone());
            continue;
        }
        features.push(names[j].clone());
        means.push(mean);
        stds.push(std);
        kept.push(j);
    }
    let q = kept.len();
    if q == 0 {
        return Err(PreprocessError::DegenerateInput("every feature has zero variance".into()));
    }
    let z = DMatrix::from_fn(n, q, |i, k| (x[i][kept[k]] - means[k]) / stds[k]);
    let cov = (z.transpose() * &z) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..q)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // sign convention: the largest-magnitude loading is positive
            let lead = argmax_abs(&v);
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[k].max(0.0), v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        let tol = 1e-12 * a.0.abs().max(b.0.abs()).max(1.0);
        if (a.0 - b.0).abs() <= tol {
            argmax_abs(&a.1).cmp(&argmax_abs(&b.1))
        } else {
            b.0.total_cmp(&a.0)
        }
    });

    let total: f64 = pairs.iter().map(|(l, _)| l).sum();
    let explained_ratio: Vec<f64> = pairs.iter().map(|(l, _)| l / total).collect();
    let mut cum = 0.0;
    let mut n_for_target = q;
    for (k, r) in explained_ratio.iter().enumerate() {
        cum += r;
        if cum >= variance_target - 1e-12 {
            n_for_target = k + 1;
            break;
        }
    }
    let components: Vec<Vec<f64>> = pairs.iter().map(|(_, v)| v.clone()).collect();
    let top_features = components
        .iter()
        .take(n_for_target)
        .map(|c| {
            let mut idx: Vec<usize> = (0..q).collect();
            idx.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()).then(a.cmp(&b)));
            idx.into_iter().take(3).map(|i| features[i].clone()).collect()
        })
        .collect();
    Ok(PcaResult {
        features,
        dropped,
        means,
        stds,
        components,
        eigenvalues: pairs.iter().map(|(l, _)| *l).collect(),
        explained_ratio,
        variance_target,
        n_for_target,
        top_features,
    })
}

fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    best
}

/// Versioned document carrying fitted preprocessing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessArtifact {
    pub magic: String,
    pub scaler: Option<ScalerParams>,
    pub pca: Option<PcaResult>,
}

pub const PREPROCESS_MAGIC: &str = "twpp1";

impl PreprocessArtifact {
    pub fn new(scaler: Option<ScalerParams>, pca: Option<PcaResult>) -> Self {
        Self {
            magic: PREPROCESS_MAGIC.into(),
            scaler,
            pca,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let a: Self = serde_json::from_str(text).map_err(|e| PreprocessError::Artifact(e.to_string()))?;
        if a.magic != PREPROCESS_MAGIC {
            return Err(PreprocessError::Artifact(format!("unexpected magic {:?}", a.magic)));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
    /// 0 reconstructs the window; `h > 0` targets the window shifted by `h`.
    pub horizon: usize,
}

impl WindowSpec {
    pub fn reconstruction(length: usize) -> Self {
        Self {
            length,
            stride: 1,
            horizon: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.length == 0 || self.stride == 0 {
            return Err(PreprocessError::BadConfig("window length and stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn count(&self, n_rows: usize) -> usize {
        let need = self.length + self.horizon;
        if n_rows < need {
            0
        } else {
            (n_rows - need) / self.stride + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[window, step, feature]`.
    pub data: Array3<f32>,
    pub targets: Option<Array3<f32>>,
    /// Frame rows covered by each window.
    pub index_map: Vec<Range<usize>>,
    pub features: Vec<String>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_features(&self) -> usize {
        self.data.dim().2
    }

    pub fn select(&self, windows: &[usize]) -> WindowBatch {
        WindowBatch {
            data: self.data.select(Axis(0), windows),
            targets: self.targets.as_ref().map(|t| t.select(Axis(0), windows)),
            index_map: windows.iter().map(|&w| self.index_map[w].clone()).collect(),
            features: self.features.clone(),
        }
    }

    pub fn slice(&self, range: Range<usize>) -> WindowBatch {
        let idx: Vec<usize> = range.collect();
        self.select(&idx)
    }

    /// Drops every window whose rows include one of `rows` (sorted ascending).
    pub fn without_rows(&self, rows: &[usize]) -> WindowBatch {
        let keep: Vec<usize> = self
            .index_map
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                let i = rows.partition_point(|&x| x < r.start);
                !(i < rows.len() && rows[i] < r.end)
            })
            .map(|(w, _)| w)
            .collect();
        self.select(&keep)
    }
}

pub fn make_windows(
    frame: &TrackFrame,
    columns: &[String],
    spec: &WindowSpec,
) -> Result<WindowBatch, PreprocessError> {
    spec.validate()?;
    let cols = columns
        .iter()
        .map(|c| frame.dense_column(c))
        .collect::<Result<Vec<_>, _>>()?;
    let n_windows = spec.count(frame.n_rows());
    let (l, f) = (spec.length, columns.len());
    let fill = |offset: usize| {
        Array3::from_shape_fn((n_windows, l, f), |(w, t, j)| {
            cols[j][w * spec.stride + offset + t] as f32
        })
    };
    let data = fill(0);
    let targets = (spec.horizon > 0).then(|| fill(spec.horizon));
    let index_map = (0..n_windows)
        .map(|w| {
            let s = w * spec.stride;
            s..s + l
        })
        .collect();
    Ok(WindowBatch {
        data,
        targets,
        index_map,
        features: columns.to_vec(),
    })
}

/// First `floor(fraction * n)` windows train, the remainder test.
pub fn chrono_split(
    batch: &WindowBatch,
    train_fraction: f64,
) -> Result<(WindowBatch, WindowBatch), PreprocessError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(PreprocessError::BadConfig("train fraction must lie in (0, 1)".into()));
    }
    let n = batch.len();
    if n < 2 {
        return Err(PreprocessError::TooFewWindows(n));
    }
    let cut = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    Ok((batch.slice(0..cut), batch.slice(cut..n)))
}
