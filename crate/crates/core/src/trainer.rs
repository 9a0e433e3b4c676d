//! Imitation-trained branched regressors standing in for the CNNs: one
//! linear steering model per command over a selectable feature subset, with
//! L2 (closed-form ridge) or L1 (iteratively reweighted least squares) loss
//! and optional 8-bin steering balancing.

use crate::dataset::{Cameras, Dataset};
use crate::expert::{expert_longitudinal, FEATURES, FEATURE_NAMES, F_CURV_10, F_CURV_20, F_CURV_5, F_HEADING, F_LATERAL};
use crate::linalg::{LinalgError, SymMatrix};
use crate::policy::{Observation, Policy};
use crate::rng;
use crate::vehicle::Action;
use crate::world::Command;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Minibatch size used by the balanced resampler.
pub const BATCH_SIZE: usize = 120;
/// Steering-label bins for balancing.
pub const BALANCE_BINS: usize = 8;
/// Balancing solves on a resample of this many epochs of batches.
pub const BALANCING_EPOCHS: usize = 50;
/// Ridge floor applied when lambda = 0 to keep the normal equations
/// solvable.
pub const RIDGE_FLOOR: f64 = 1e-10;
/// IRLS smoothing: |e| is approximated by sqrt(e^2 + eps^2).
pub const IRLS_EPSILON: f64 = 1e-6;
pub const IRLS_MAX_ITERATIONS: usize = 200;
pub const IRLS_TOLERANCE: f64 = 1e-8;
/// Std of the additive feature-noise augmentation (variance 0.01).
pub const FEATURE_NOISE_STD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("singular system")]
    SingularSystem(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    L2,
    L1,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::L2 => "l2",
            Loss::L1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "mse" => Some(Loss::L2),
            "l1" => Some(Loss::L1),
            _ => None,
        }
    }
}

/// Capacity axis: which observation features the regressor may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDepth {
    /// offset, heading error, curvature at 10 m
    Shallow,
    /// all five geometric features
    Standard,
    /// all seven features
    Deep,
}

impl FeatureDepth {
    pub fn indices(self) -> &'static [usize] {
        const SHALLOW: [usize; 3] = [F_LATERAL, F_HEADING, F_CURV_10];
        const STANDARD: [usize; 5] = [F_LATERAL, F_HEADING, F_CURV_5, F_CURV_10, F_CURV_20];
        const DEEP: [usize; FEATURES] = [0, 1, 2, 3, 4, 5, 6];
        match self {
            FeatureDepth::Shallow => &SHALLOW,
            FeatureDepth::Standard => &STANDARD,
            FeatureDepth::Deep => &DEEP,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureDepth::Shallow => "shallow",
            FeatureDepth::Standard => "standard",
            FeatureDepth::Deep => "deep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shallow" => Some(FeatureDepth::Shallow),
            "standard" => Some(FeatureDepth::Standard),
            "deep" => Some(FeatureDepth::Deep),
            _ => None,
        }
    }
}

/// Which collected distribution the model trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataDistribution {
    #[serde(rename = "1cam")]
    OneCam,
    #[serde(rename = "1cam+noise")]
    OneCamNoise,
    #[serde(rename = "3cam")]
    ThreeCam,
    #[serde(rename = "3cam+noise")]
    ThreeCamNoise,
}

impl DataDistribution {
    pub fn cameras(self) -> Cameras {
        match self {
            DataDistribution::OneCam | DataDistribution::OneCamNoise => Cameras::One,
            DataDistribution::ThreeCam | DataDistribution::ThreeCamNoise => Cameras::Three,
        }
    }

    pub fn noise(self) -> bool {
        matches!(self, DataDistribution::OneCamNoise | DataDistribution::ThreeCamNoise)
    }

    pub fn name(self) -> &'static str {
        match self {
            DataDistribution::OneCam => "1cam",
            DataDistribution::OneCamNoise => "1cam+noise",
            DataDistribution::ThreeCam => "3cam",
            DataDistribution::ThreeCamNoise => "3cam+noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1cam" => Some(DataDistribution::OneCam),
            "1cam+noise" => Some(DataDistribution::OneCamNoise),
            "3cam" => Some(DataDistribution::ThreeCam),
            "3cam+noise" => Some(DataDistribution::ThreeCamNoise),
            _ => None,
        }
    }

    pub const ALL: [DataDistribution; 4] = [
        DataDistribution::OneCam,
        DataDistribution::OneCamNoise,
        DataDistribution::ThreeCam,
        DataDistribution::ThreeCamNoise,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    /// Ridge strength lambda (>= 0).
    pub ridge: f64,
    pub balancing: bool,
    pub feature_depth: FeatureDepth,
    /// Hours of driving footage the model trains on.
    pub data_hours: f64,
    pub data_distribution: DataDistribution,
    /// Additive feature-noise augmentation (the image-augmentation analog).
    #[serde(default)]
    pub feature_noise: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ridge < 0.0 {
            return Err(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if self.data_hours <= 0.0 {
            return Err(format!("data_hours must be > 0, got {}", self.data_hours));
        }
        Ok(())
    }
}

/// One per-command linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Head {
    fn predict(&self, features: &[f64; FEATURES], indices: &[usize]) -> f64 {
        let mut y = self.bias;
        for (w, ix) in self.weights.iter().zip(indices) {
            y += w * features[*ix];
        }
        y
    }
}

/// Branched linear steering regressor: one head per command over the
/// configured feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorPolicy {
    pub feature_indices: Vec<usize>,
    /// Heads indexed by `Command::index()`.
    pub heads: Vec<Head>,
    /// Commands absent from the training data, mapped to the head they
    /// fell back to.
    pub fallback: BTreeMap<String, String>,
}

impl RegressorPolicy {
    pub fn head(&self, command: Command) -> &Head {
        &self.heads[command.index()]
    }

    pub fn steering(&self, obs: &Observation) -> f64 {
        self.head(obs.command).predict(&obs.features, &self.feature_indices).clamp(-1.0, 1.0)
    }

    /// JSON export, `driveval-policy/1`: per-command weights plus the
    /// feature-name manifest.
    pub fn to_json(&self) -> String {
        let heads: BTreeMap<&str, &Head> = Command::ALL
            .iter()
            .map(|c| (c.name(), &self.heads[c.index()]))
            .collect();
        let export = PolicyExport {
            format: "driveval-policy/1",
            features: self.feature_indices.iter().map(|i| FEATURE_NAMES[*i]).collect(),
            feature_indices: self.feature_indices.clone(),
            heads,
            fallback: self.fallback.clone(),
        };
        serde_json::to_string_pretty(&export).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let import: PolicyImport = serde_json::from_str(text)?;
        let mut heads = Vec::with_capacity(4);
        for c in Command::ALL {
            heads.push(import.heads[c.name()].clone());
        }
        Ok(RegressorPolicy {
            feature_indices: import.feature_indices,
            heads,
            fallback: import.fallback,
        })
    }
}

#[derive(Serialize)]
struct PolicyExport<'a> {
    format: &'static str,
    features: Vec<&'static str>,
    feature_indices: Vec<usize>,
    heads: BTreeMap<&'a str, &'a Head>,
    fallback: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct PolicyImport {
    #[allow(dead_code)]
    format: String,
    feature_indices: Vec<usize>,
    heads: BTreeMap<String, Head>,
    #[serde(default)]
    fallback: BTreeMap<String, String>,
}

impl Policy for RegressorPolicy {
    fn begin_episode(&mut self, _episode: u64) {}

    fn predict(&mut self, obs: &Observation, _step: u64) -> Action<f64> {
        let steering = self.steering(obs);
        let (throttle, brake) = expert_longitudinal(&obs.features);
        Action::new(steering, throttle, brake)
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Bin index of a steering label in the uniform partition of [-1, 1].
fn steering_bin(label: f64, bins: usize) -> usize {
    let t = (label.clamp(-1.0, 1.0) + 1.0) / 2.0;
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Balanced index batches: the steering range is split into `bins` uniform
/// bins and every batch draws `batch / bins` samples uniformly with
/// replacement from each nonempty bin, with empty bins' quotas redistributed
/// round-robin.
pub fn balanced_minibatches(
    labels: &[f64],
    batch: usize,
    bins: usize,
    seed: u64,
    batches: usize,
) -> Result<Vec<Vec<usize>>, TrainError> {
    assert!(bins > 0 && batch % bins == 0, "batch must be divisible by bins");
    if labels.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, l) in labels.iter().enumerate() {
        members[steering_bin(*l, bins)].push(i);
    }
    let nonempty: Vec<usize> = (0..bins).filter(|b| !members[*b].is_empty()).collect();

    // Per-bin quotas: base for everyone, empty quotas redistributed
    // round-robin over the nonempty bins.
    let base = batch / bins;
    let mut quota = vec![0usize; bins];
    for b in &nonempty {
        quota[*b] = base;
    }
    let mut spare = base * (bins - nonempty.len());
    let mut rr = 0usize;
    while spare > 0 {
        quota[nonempty[rr % nonempty.len()]] += 1;
        rr += 1;
        spare -= 1;
    }

    let mut out = Vec::with_capacity(batches);
    for bi in 0..batches {
        let mut rng = rng::stream(seed, "balance-batch", &[bi as u64]);
        let mut batch_idx = Vec::with_capacity(batch);
        for b in &nonempty {
            let m = &members[*b];
            for _ in 0..quota[*b] {
                batch_idx.push(m[rng.random_range(0..m.len())]);
            }
        }
        out.push(batch_idx);
    }
    Ok(out)
}

/// Rows the head solves on: dataset sample indices with multiplicities.
/// Balancing draws 50 epochs of balanced batches; when feature noise is off
/// the resample collapses to (unique row, count), which solves the identical
/// weighted problem in far fewer passes. With feature noise every resampled
/// row keeps its own draw.
fn head_rows(
    labels: &[f64],
    subset: &[usize],
    balancing: bool,
    feature_noise: bool,
    seed: u64,
) -> Result<(Vec<usize>, Option<Vec<f64>>), TrainError> {
    if !balancing {
        return Ok((subset.to_vec(), None));
    }
    let batches = (BALANCING_EPOCHS * labels.len()).div_ceil(BATCH_SIZE);
    let drawn = balanced_minibatches(labels, BATCH_SIZE, BALANCE_BINS, seed, batches)?;
    if feature_noise {
        let mut rows = Vec::with_capacity(batches * BATCH_SIZE);
        for b in drawn {
            rows.extend(b.iter().map(|i| subset[*i]));
        }
        return Ok((rows, None));
    }
    let mut counts = vec![0u32; labels.len()];
    for b in drawn {
        for i in b {
            counts[i] += 1;
        }
    }
    let mut rows = Vec::new();
    let mut mults = Vec::new();
    for (i, c) in counts.iter().enumerate() {
        if *c > 0 {
            rows.push(subset[i]);
            mults.push(f64::from(*c));
        }
    }
    Ok((rows, Some(mults)))
}

struct HeadProblem<'a> {
    dataset: &'a Dataset,
    /// Flat dataset indices of the rows.
    rows: Vec<usize>,
    /// Row multiplicities (collapsed balanced resample); `None` = unit.
    multiplicity: Option<Vec<f64>>,
    feature_indices: &'a [usize],
    feature_noise: bool,
    noise_seed: u64,
    lambda: f64,
}

impl HeadProblem<'_> {
    fn dim(&self) -> usize {
        self.feature_indices.len() + 1
    }

    /// Total row weight (resample size under multiplicities).
    fn total_weight(&self) -> f64 {
        self.multiplicity
            .as_ref()
            .map_or(self.rows.len() as f64, |m| m.iter().sum())
    }

    /// One pass over the rows: calls `visit(x_row, y, multiplicity)` per row,
    /// with feature noise regenerated identically on every pass.
    fn for_each_row(&self, mut visit: impl FnMut(&[f64], f64, f64)) {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut noise_rng = rng::stream(self.noise_seed, "augment", &[]);
        for (k, &row) in self.rows.iter().enumerate() {
            let s = &self.dataset.samples[row];
            for (j, ix) in self.feature_indices.iter().enumerate() {
                x[j] = s.observation.features[*ix];
                if self.feature_noise {
                    let z: f64 = noise_rng.sample(StandardNormal);
                    x[j] += FEATURE_NOISE_STD * z;
                }
            }
            x[d - 1] = 1.0;
            let m = self.multiplicity.as_ref().map_or(1.0, |ms| ms[k]);
            visit(&x, s.action.steering, m);
        }
    }

    /// Weighted mean normal equations: A = (X^T W X) / n + lambda I,
    /// b = (X^T W y) / n, where W folds row multiplicities with the given
    /// per-row weights (`None` = unit weights) and n is the total row weight.
    fn normal_equations(&self, weights: Option<&[f64]>) -> (SymMatrix<f64>, Vec<f64>) {
        let d = self.dim();
        let n = self.total_weight();
        let mut a = SymMatrix::zeros(d);
        let mut b = vec![0.0; d];
        let mut k = 0usize;
        self.for_each_row(|x, y, m| {
            let w = m * weights.map_or(1.0, |ws| ws[k]);
            for i in 0..d {
                let wxi = w * x[i];
                for j in i..d {
                    a.add(i, j, wxi * x[j]);
                }
                b[i] += wxi * y;
            }
            k += 1;
        });
        // mirror + normalize
        let mut sym = SymMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let v = if j >= i { a.get(i, j) } else { a.get(j, i) };
                sym.set(i, j, v / n);
            }
        }
        for bi in b.iter_mut() {
            *bi /= n;
        }
        sym.add_diag(self.lambda);
        (sym, b)
    }

    fn solve_l2(&self) -> Result<Vec<f64>, TrainError> {
        let (a, b) = self.normal_equations(None);
        Ok(a.solve_spd(&b)?)
    }

    fn residuals(&self, w: &[f64]) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.rows.len());
        self.for_each_row(|x, y, _| {
            let pred: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            e.push(y - pred);
        });
        e
    }

    /// Smoothed mean absolute error plus the ridge term (the IRLS objective).
    #[cfg(test)]
    fn l1_objective(&self, w: &[f64]) -> f64 {
        let e = self.residuals(w);
        let n = self.total_weight();
        let mut smooth = 0.0;
        for (k, e) in e.iter().enumerate() {
            let m = self.multiplicity.as_ref().map_or(1.0, |ms| ms[k]);
            smooth += m * (e * e + IRLS_EPSILON * IRLS_EPSILON).sqrt();
        }
        let ridge: f64 = self.lambda * w.iter().map(|w| w * w).sum::<f64>();
        smooth / n + ridge
    }

    /// IRLS on the smoothed absolute error, warm-started from the L2
    /// solution, until the weight change drops below tolerance.
    fn solve_l1(&self) -> Result<Vec<f64>, TrainError> {
        let mut w = self.solve_l2()?;
        for _ in 0..IRLS_MAX_ITERATIONS {
            let e = self.residuals(&w);
            let irls_w: Vec<f64> = e
                .iter()
                .map(|e| 1.0 / (2.0 * (e * e + IRLS_EPSILON * IRLS_EPSILON).sqrt()))
                .collect();
            let (a, b) = self.normal_equations(Some(&irls_w));
            let next = a.solve_spd(&b)?;
            let delta = w
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            w = next;
            if delta < IRLS_TOLERANCE {
                break;
            }
        }
        Ok(w)
    }
}

/// Fit the branched regressor on a dataset. Commands absent from the data
/// fall back to the Continue head (recorded in the result); an absent
/// Continue head is fitted on all samples.
pub fn fit_regressor(dataset: &Dataset, config: &TrainConfig) -> Result<RegressorPolicy, TrainError> {
    if let Err(msg) = config.validate() {
        panic!("invalid train config: {msg}");
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let feature_indices = config.feature_depth.indices();
    let lambda = config.ridge.max(RIDGE_FLOOR);

    let mut by_cmd: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_cmd[s.command().index()].push(i);
    }

    let fit_on = |subset: &[usize], stream_tag: u64| -> Result<Head, TrainError> {
        let labels: Vec<f64> = subset.iter().map(|i| dataset.samples[*i].action.steering).collect();
        let (rows, multiplicity) = head_rows(
            &labels,
            subset,
            config.balancing,
            config.feature_noise,
            rng::stream_key(config.seed, "head", &[stream_tag]),
        )?;
        let problem = HeadProblem {
            dataset,
            rows,
            multiplicity,
            feature_indices,
            feature_noise: config.feature_noise,
            noise_seed: rng::stream_key(config.seed, "head-noise", &[stream_tag]),
            lambda,
        };
        let w = match config.loss {
            Loss::L2 => problem.solve_l2()?,
            Loss::L1 => problem.solve_l1()?,
        };
        let (weights, bias) = w.split_at(feature_indices.len());
        Ok(Head { weights: weights.to_vec(), bias: bias[0] })
    };

    let mut heads: Vec<Option<Head>> = vec![None; 4];
    for c in Command::ALL {
        let subset = &by_cmd[c.index()];
        if !subset.is_empty() {
            heads[c.index()] = Some(fit_on(subset, c.index() as u64)?);
        }
    }

    let mut fallback = BTreeMap::new();
    let continue_head = match heads[Command::Continue.index()].clone() {
        Some(h) => h,
        None => {
            // No Continue data at all: fit the fallback head on everything.
            let all: Vec<usize> = (0..dataset.len()).collect();
            fallback.insert(Command::Continue.name().to_string(), "all-data".to_string());
            fit_on(&all, 100)?
        }
    };
    let heads: Vec<Head> = Command::ALL
        .iter()
        .map(|c| match heads[c.index()].clone() {
            Some(h) => h,
            None => {
                fallback.insert(c.name().to_string(), Command::Continue.name().to_string());
                continue_head.clone()
            }
        })
        .collect();

    Ok(RegressorPolicy { feature_indices: feature_indices.to_vec(), heads, fallback })
}
