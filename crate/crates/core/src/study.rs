//! Study orchestration: builds the model family (trained regressors, the
//! perturbation zoo, the expert anchor), evaluates every model offline on
//! all validation variants and online in all towns, and emits study records.
//!
//! All randomness flows from the master seed through named sub-streams, and
//! models are evaluated independently, so records are byte-identical across
//! runs regardless of worker scheduling.

use crate::analysis::{ModelConfig, ParameterGroup, StudyRecord};
use crate::dataset::{collect, Cameras, Condition, Dataset};
use crate::offline::{evaluate_offline, OfflineParams, OfflineReport};
use crate::online::{run_suite, standard_suite, OnlineReport, SuiteSpec};
use crate::policy::{make_perturbed, ExpertPolicy, PerturbationSpec, Policy};
use crate::rng;
use crate::trainer::{fit_regressor, DataDistribution, FeatureDepth, Loss, TrainConfig};
use crate::world::{build_town, TownId, TownMap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

pub const STUDY_FORMAT: &str = "driveval-study/1";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown town `{0}`")]
    UnknownTown(String),
    #[error("unknown condition `{0}` (expected `clear` or `softshift`)")]
    UnknownCondition(String),
    #[error("duplicate model id `{0}`")]
    DuplicateModelId(String),
    #[error("training failed for `{model}`: {source}")]
    Train {
        model: String,
        #[source]
        source: crate::trainer::TrainError,
    },
    #[error("offline evaluation failed for `{model}`: {source}")]
    Offline {
        model: String,
        #[source]
        source: crate::offline::MetricError,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// One trained-model entry of the study grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEntry {
    pub id: String,
    pub loss: Loss,
    pub ridge: f64,
    pub balancing: bool,
    pub feature_depth: FeatureDepth,
    pub data_hours: f64,
    pub data_distribution: DataDistribution,
    #[serde(default)]
    pub feature_noise: bool,
}

/// One perturbation-zoo entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedEntry {
    pub id: String,
    pub spec: PerturbationSpec,
}

/// Parameter-axis group definition (model ids sharing all but one axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub axis: String,
    pub models: Vec<String>,
}

/// Frozen study configuration; the TOML schema of `study --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub format: String,
    pub master_seed: u64,
    /// Towns to evaluate online; the first is the training town.
    pub towns: Vec<String>,
    /// Condition profile per town (`clear` or `softshift`).
    pub conditions: BTreeMap<String, String>,
    /// Hours per validation master collection (desk default 0.2 h).
    pub validation_hours: f64,
    /// Hours of the training master collections.
    pub train_hours: f64,
    /// Navigation trials per online evaluation.
    pub trials: usize,
    pub offline_params: OfflineParams<f64>,
    pub include_expert: bool,
    pub trained: Vec<TrainedEntry>,
    pub perturbed: Vec<PerturbedEntry>,
    pub groups: Vec<GroupEntry>,
}

impl StudyConfig {
    pub fn model_count(&self) -> usize {
        self.trained.len() + self.perturbed.len() + usize::from(self.include_expert)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.model_count() == 0 {
            return Err(StudyError::InvalidConfig("model grid is empty".into()));
        }
        if self.towns.is_empty() {
            return Err(StudyError::InvalidConfig("no towns listed".into()));
        }
        for t in &self.towns {
            if TownId::parse(t).is_none() {
                return Err(StudyError::UnknownTown(t.clone()));
            }
            let c = self
                .conditions
                .get(t)
                .ok_or_else(|| StudyError::InvalidConfig(format!("no condition for town {t}")))?;
            condition_by_name(c)?;
        }
        if self.validation_hours <= 0.0 || self.train_hours <= 0.0 {
            return Err(StudyError::InvalidConfig("collection hours must be positive".into()));
        }
        if self.trials == 0 {
            return Err(StudyError::InvalidConfig("trials must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self
            .trained
            .iter()
            .map(|t| &t.id)
            .chain(self.perturbed.iter().map(|p| &p.id))
        {
            if !seen.insert(id.clone()) {
                return Err(StudyError::DuplicateModelId(id.clone()));
            }
        }
        for t in &self.trained {
            if t.ridge < 0.0 || t.data_hours <= 0.0 {
                return Err(StudyError::InvalidConfig(format!("bad trained entry `{}`", t.id)));
            }
            if t.data_hours > self.train_hours {
                return Err(StudyError::InvalidConfig(format!(
                    "`{}` wants {} h but the training master holds {} h",
                    t.id, t.data_hours, self.train_hours
                )));
            }
        }
        for p in &self.perturbed {
            p.spec.validate().map_err(StudyError::InvalidConfig)?;
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON serialization; stamped on every
    /// artifact the study produces.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

pub fn condition_by_name(name: &str) -> Result<Condition, StudyError> {
    match name {
        "clear" => Ok(Condition::clear()),
        "softshift" => Ok(Condition::soft_shift()),
        other => Err(StudyError::UnknownCondition(other.to_string())),
    }
}

/// The default desk-scale study: 45 models spanning data amount,
/// distribution, balancing, regularization, capacity, and loss, plus the
/// perturbation zoo over the expert, with six parameter-axis groups.
pub fn default_config() -> StudyConfig {
    let base = TrainedEntry {
        id: "t-base".into(),
        loss: Loss::L2,
        ridge: 1e-3,
        balancing: true,
        feature_depth: FeatureDepth::Standard,
        data_hours: 1.0,
        data_distribution: DataDistribution::ThreeCamNoise,
        feature_noise: false,
    };
    let with = |id: &str, f: &dyn Fn(&mut TrainedEntry)| {
        let mut e = base.clone();
        e.id = id.into();
        f(&mut e);
        e
    };

    let trained = vec![
        base.clone(),
        // amount axis
        with("t-h0.05", &|e| e.data_hours = 0.05),
        with("t-h0.2", &|e| e.data_hours = 0.2),
        with("t-h4", &|e| e.data_hours = 4.0),
        // distribution axis
        with("t-d1cam", &|e| e.data_distribution = DataDistribution::OneCam),
        with("t-d1cam-noise", &|e| e.data_distribution = DataDistribution::OneCamNoise),
        with("t-d3cam", &|e| e.data_distribution = DataDistribution::ThreeCam),
        // balancing axis
        with("t-nobal", &|e| e.balancing = false),
        // regularization axis
        with("t-reg0", &|e| e.ridge = 0.0),
        with("t-reg0.1", &|e| e.ridge = 1e-1),
        with("t-regaug", &|e| {
            e.ridge = 1e-1;
            e.feature_noise = true;
        }),
        // capacity axis
        with("t-shallow", &|e| e.feature_depth = FeatureDepth::Shallow),
        with("t-deep", &|e| e.feature_depth = FeatureDepth::Deep),
        // loss axis
        with("t-l1", &|e| e.loss = Loss::L1),
        // off-axis crosses; the single-forward-camera family mirrors the
        // setup of most prior work and carries the covariate-shift story.
        with("t-l1-1cam", &|e| {
            e.loss = Loss::L1;
            e.data_distribution = DataDistribution::OneCam;
        }),
        with("t-l1-h4", &|e| {
            e.loss = Loss::L1;
            e.data_hours = 4.0;
        }),
        with("t-l1-nobal", &|e| {
            e.loss = Loss::L1;
            e.balancing = false;
        }),
        with("t-1cam-h0.05", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.data_hours = 0.05;
        }),
        with("t-1cam-h0.2", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.data_hours = 0.2;
        }),
        with("t-1cam-h4", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.data_hours = 4.0;
        }),
        with("t-1cam-reg0", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.ridge = 0.0;
        }),
        with("t-1cam-reg0.1", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.ridge = 1e-1;
        }),
        with("t-1cam-deep", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.feature_depth = FeatureDepth::Deep;
        }),
        with("t-1cam-shallow", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.feature_depth = FeatureDepth::Shallow;
        }),
        with("t-1cam-nobal", &|e| {
            e.data_distribution = DataDistribution::OneCam;
            e.balancing = false;
        }),
        with("t-3cam-h0.05", &|e| {
            e.data_distribution = DataDistribution::ThreeCam;
            e.data_hours = 0.05;
        }),
    ];

    let mut perturbed = Vec::new();
    for std in [0.02, 0.1, 0.2, 0.7] {
        perturbed.push(PerturbedEntry {
            id: format!("z-white-{std}"),
            spec: PerturbationSpec::WhiteNoise { std },
        });
    }
    for magnitude in [0.02, 0.1, 0.7] {
        perturbed.push(PerturbedEntry {
            id: format!("z-bias-{magnitude}"),
            spec: PerturbationSpec::EpisodeBias { magnitude },
        });
    }
    perturbed.push(PerturbedEntry {
        id: "z-ou-1-0.3".into(),
        spec: PerturbationSpec::OuNoise { theta: 1.0, std: 0.3 },
    });
    for prob in [0.1, 0.15, 0.25, 0.5, 1.0] {
        perturbed.push(PerturbedEntry {
            id: format!("z-flip-{prob}"),
            spec: PerturbationSpec::TurnFlip { prob },
        });
    }
    for step in [0.1, 0.2, 0.3, 0.5, 0.8] {
        perturbed.push(PerturbedEntry {
            id: format!("z-quant-{step}"),
            spec: PerturbationSpec::Quantize { step },
        });
    }

    let group = |axis: &str, ids: &[&str]| GroupEntry {
        axis: axis.into(),
        models: ids.iter().map(|s| s.to_string()).collect(),
    };
    let groups = vec![
        group("amount", &["t-h0.05", "t-h0.2", "t-base", "t-h4"]),
        group("distribution", &["t-d1cam", "t-d1cam-noise", "t-d3cam", "t-base"]),
        group("balancing", &["t-nobal", "t-base"]),
        group("regularization", &["t-reg0", "t-base", "t-reg0.1", "t-regaug"]),
        group("depth", &["t-shallow", "t-base", "t-deep"]),
        group("loss", &["t-base", "t-l1"]),
    ];

    let mut conditions = BTreeMap::new();
    conditions.insert("A".to_string(), "clear".to_string());
    conditions.insert("B".to_string(), "softshift".to_string());

    StudyConfig {
        format: STUDY_FORMAT.into(),
        master_seed: 7,
        towns: vec!["A".into(), "B".into()],
        conditions,
        validation_hours: 0.2,
        train_hours: 4.0,
        trials: 25,
        offline_params: OfflineParams::default(),
        include_expert: true,
        trained,
        perturbed,
        groups,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub format: String,
    pub config_hash: String,
    pub models: usize,
    pub towns: Vec<String>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub manifest: StudyManifest,
    pub records: Vec<StudyRecord>,
    /// Parameter-axis groups materialized per town (offline metric scored on
    /// the town's basic 1cam no-noise validation set).
    pub groups: Vec<ParameterGroup>,
}

/// Shared evaluation environment: towns, suites, and validation sets.
struct Environment {
    towns: Vec<(String, Arc<TownMap>, Condition, SuiteSpec)>,
    validations: BTreeMap<String, Arc<Dataset>>,
    /// Full-length training sets per distribution (training town).
    training: BTreeMap<DataDistribution, Arc<Dataset>>,
}

fn build_environment(config: &StudyConfig) -> Result<Environment, StudyError> {
    let seed = config.master_seed;
    let mut towns = Vec::new();
    for (i, name) in config.towns.iter().enumerate() {
        let id = TownId::parse(name).ok_or_else(|| StudyError::UnknownTown(name.clone()))?;
        let map = Arc::new(build_town(id, seed));
        let condition = condition_by_name(&config.conditions[name])?;
        let suite = standard_suite(&map, config.trials, rng::stream_key(seed, "suite", &[i as u64]));
        towns.push((name.clone(), map, condition, suite));
    }

    // Validation masters: 3cam with and without action noise per town, under
    // the town's condition; 1cam variants are the central subsets.
    let mut validations = BTreeMap::new();
    for (i, (name, map, condition, _)) in towns.iter().enumerate() {
        for (noise, tag) in [(true, 0u64), (false, 1u64)] {
            let master = collect(
                map,
                config.validation_hours,
                Cameras::Three,
                noise,
                condition,
                rng::stream_key(seed, "validation", &[i as u64, tag]),
            );
            let central = master.central_subset();
            validations.insert(master.manifest.variant(), Arc::new(master));
            validations.insert(central.manifest.variant(), Arc::new(central));
        }
        let _ = name;
    }

    // Training masters in the training town (first listed), clear of
    // observation shift at collection time per the training condition.
    let (_, train_map, train_condition, _) = &towns[0];
    let noise_master = Arc::new(collect(
        train_map,
        config.train_hours,
        Cameras::Three,
        true,
        train_condition,
        rng::stream_key(seed, "train-collect", &[0]),
    ));
    let clean_master = Arc::new(collect(
        train_map,
        config.train_hours,
        Cameras::Three,
        false,
        train_condition,
        rng::stream_key(seed, "train-collect", &[1]),
    ));
    let mut training = BTreeMap::new();
    training.insert(DataDistribution::ThreeCamNoise, noise_master.clone());
    training.insert(DataDistribution::ThreeCam, clean_master.clone());
    training.insert(DataDistribution::OneCamNoise, Arc::new(noise_master.central_subset()));
    training.insert(DataDistribution::OneCam, Arc::new(clean_master.central_subset()));

    Ok(Environment { towns, validations, training })
}

enum ModelEntry {
    Expert,
    Trained(usize),
    Perturbed(usize),
}

/// Run the full study: build every model, evaluate it offline on all
/// validation variants and online in all towns.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutput, StudyError> {
    config.validate()?;
    let env = build_environment(config)?;
    let seed = config.master_seed;

    let mut entries: Vec<ModelEntry> = Vec::with_capacity(config.model_count());
    if config.include_expert {
        entries.push(ModelEntry::Expert);
    }
    entries.extend((0..config.trained.len()).map(ModelEntry::Trained));
    entries.extend((0..config.perturbed.len()).map(ModelEntry::Perturbed));

    let records: Result<Vec<StudyRecord>, StudyError> = entries
        .par_iter()
        .map(|entry| evaluate_model(config, &env, entry, seed))
        .collect();
    let records = records?;

    let groups = config
        .groups
        .iter()
        .flat_map(|g| {
            config.towns.iter().map(move |town| ParameterGroup {
                axis: g.axis.clone(),
                town: town.clone(),
                variant: format!("{town}:1cam"),
                model_ids: g.models.clone(),
            })
        })
        .collect();

    Ok(StudyOutput {
        manifest: StudyManifest {
            format: STUDY_FORMAT.into(),
            config_hash: config.config_hash(),
            models: records.len(),
            towns: config.towns.clone(),
            trials: config.trials,
        },
        records,
        groups,
    })
}

fn evaluate_model(
    config: &StudyConfig,
    env: &Environment,
    entry: &ModelEntry,
    seed: u64,
) -> Result<StudyRecord, StudyError> {
    let (model_id, model_config, policy): (String, ModelConfig, Box<dyn Policy>) = match entry {
        ModelEntry::Expert => ("expert".into(), ModelConfig::Expert, Box::new(ExpertPolicy)),
        ModelEntry::Trained(i) => {
            let e = &config.trained[*i];
            let train_config = TrainConfig {
                loss: e.loss,
                ridge: e.ridge,
                balancing: e.balancing,
                feature_depth: e.feature_depth,
                data_hours: e.data_hours,
                data_distribution: e.data_distribution,
                feature_noise: e.feature_noise,
                seed: rng::stream_key(seed, "train-seed", &[*i as u64]),
            };
            let master = &env.training[&e.data_distribution];
            let data = master.prefix_hours(e.data_hours);
            let policy = fit_regressor(&data, &train_config)
                .map_err(|source| StudyError::Train { model: e.id.clone(), source })?;
            (e.id.clone(), ModelConfig::Trained { config: train_config }, Box::new(policy))
        }
        ModelEntry::Perturbed(i) => {
            let e = &config.perturbed[*i];
            let zoo_seed = rng::stream_key(seed, "zoo-seed", &[*i as u64]);
            let policy = make_perturbed(Box::new(ExpertPolicy), e.spec, zoo_seed);
            (
                e.id.clone(),
                ModelConfig::Perturbed { spec: e.spec, seed: zoo_seed },
                Box::new(policy),
            )
        }
    };

    let mut offline: BTreeMap<String, OfflineReport<f64>> = BTreeMap::new();
    for (variant, set) in &env.validations {
        let report = evaluate_offline(policy.as_ref(), set, &config.offline_params)
            .map_err(|source| StudyError::Offline { model: model_id.clone(), source })?;
        offline.insert(variant.clone(), report);
    }

    let mut online: BTreeMap<String, OnlineReport> = BTreeMap::new();
    for (town, map, condition, suite) in &env.towns {
        let (_, report) = run_suite(map, policy.as_ref(), suite, condition);
        online.insert(town.clone(), report);
    }

    Ok(StudyRecord { model_id, config: model_config, offline, online })
}

/// Serialize study records as JSON lines (one record per line).
pub fn records_to_jsonl(records: &[StudyRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<StudyRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
