//! Expert-driving data collection (central and lateral virtual viewpoints,
//! optional action noise), condition profiles, and on-disk persistence.
//!
//! A dataset is one or more temporally ordered driving sequences. With three
//! cameras every logged step carries a viewpoint triple sharing the step's
//! sequence id, step index, command, and speed; each (sequence, viewpoint)
//! stream is temporally ordered on its own.

use crate::expert::{
    expert_action_from_features, feature_vector, NoiseSchedule, FEATURES, F_CURV_10, F_CURV_20,
    F_CURV_5, NOISY_EPISODE_PROB,
};
use crate::policy::Observation;
use crate::rng;
use crate::vehicle::{step_control_period, Action, Pose, VehicleState, CONTROL_DT};
use crate::world::{command_at, lane_frame, plan_route, NodeId, Route, TownMap, WorldError};
use crate::BicycleParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_FORMAT: &str = "driveval-dataset/1";
/// Logging rate: 10 samples per second of driving.
pub const SAMPLES_PER_HOUR: f64 = 3600.0 / CONTROL_DT;
/// Collection episodes are re-drawn until the route is at least this long.
const MIN_COLLECTION_ROUTE: f64 = 160.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format version mismatch: found `{found}`, expected `{expected}`")]
    FormatVersionMismatch { found: String, expected: &'static str },
    #[error("corrupt row {row}: {reason}")]
    CorruptRow { row: usize, reason: String },
}

/// Camera setup of a collection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cameras {
    #[serde(rename = "1cam")]
    One,
    #[serde(rename = "3cam")]
    Three,
}

impl Cameras {
    pub fn name(self) -> &'static str {
        match self {
            Cameras::One => "1cam",
            Cameras::Three => "3cam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1cam" | "1" => Some(Cameras::One),
            "3cam" | "3" => Some(Cameras::Three),
            _ => None,
        }
    }
}

/// Virtual camera viewpoint; lateral viewpoints are yaw-rotated 30 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    Center,
    Left30,
    Right30,
}

impl Viewpoint {
    pub fn yaw_offset(self) -> f64 {
        match self {
            Viewpoint::Center => 0.0,
            Viewpoint::Left30 => std::f64::consts::FRAC_PI_6,
            Viewpoint::Right30 => -std::f64::consts::FRAC_PI_6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Viewpoint::Center => "center",
            Viewpoint::Left30 => "left30",
            Viewpoint::Right30 => "right30",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "center" => Some(Viewpoint::Center),
            "left30" => Some(Viewpoint::Left30),
            "right30" => Some(Viewpoint::Right30),
            _ => None,
        }
    }

    /// Stable per-viewpoint offset used to derive episode noise streams for
    /// offline prediction.
    pub fn episode_stream(self) -> u64 {
        match self {
            Viewpoint::Center => 0,
            Viewpoint::Left30 => 1,
            Viewpoint::Right30 => 2,
        }
    }
}

/// Observation-time perturbation profile; the weather surrogate. A zero
/// profile is the identity on observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// Additive Gaussian noise std per observation feature.
    pub feature_noise_std: [f64; FEATURES],
    /// Additive bias on the curvature features, 1/m.
    pub curvature_bias: f64,
}

impl Condition {
    pub fn clear() -> Self {
        Self { name: "clear".into(), feature_noise_std: [0.0; FEATURES], curvature_bias: 0.0 }
    }

    /// The generalization profile: feature noise plus a slight curvature
    /// bias.
    pub fn soft_shift() -> Self {
        Self {
            name: "softshift".into(),
            feature_noise_std: [0.06, 0.012, 0.002, 0.002, 0.002, 1.2, 0.06],
            curvature_bias: 0.004,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.curvature_bias == 0.0 && self.feature_noise_std.iter().all(|s| *s == 0.0)
    }

    /// Apply the profile to a raw feature vector; `rng` supplies the noise
    /// draws. Identity profiles touch neither the features nor the stream.
    pub fn apply(&self, features: &mut [f64; FEATURES], rng: &mut ChaCha8Rng) {
        if self.is_identity() {
            return;
        }
        for k in [F_CURV_5, F_CURV_10, F_CURV_20] {
            features[k] += self.curvature_bias;
        }
        for (f, std) in features.iter_mut().zip(&self.feature_noise_std) {
            let z: f64 = rng.sample(StandardNormal);
            *f += std * z;
        }
    }
}

/// One logged tuple: observation, command, ground-truth action, speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sequence_id: u32,
    pub step_index: u32,
    pub viewpoint: Viewpoint,
    /// Whether a steering impulse was active when this step was executed.
    pub perturbed: bool,
    pub observation: Observation,
    /// Ground-truth label: the expert's unperturbed action at this state.
    pub action: Action<f64>,
}

impl Sample {
    pub fn command(&self) -> crate::world::Command {
        self.observation.command
    }

    pub fn speed(&self) -> f64 {
        self.observation.speed
    }
}

/// Collection settings shared by all samples of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub town: String,
    pub condition: Condition,
    pub cameras: Cameras,
    pub noise: bool,
    pub hours: f64,
    pub seed: u64,
    /// Hash of the producing command's configuration, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Manifest {
    /// Variant tag used in reports: e.g. `B:3cam+noise`.
    pub fn variant(&self) -> String {
        let noise = if self.noise { "+noise" } else { "" };
        format!("{}:{}{}", self.town, self.cameras.name(), noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub manifest: Manifest,
}

/// A validation set is a dataset used for offline evaluation.
pub type ValidationSet = Dataset;

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The (sequence_id, viewpoint) streams in order of first appearance,
    /// each a temporally ordered list of flat sample indices.
    pub fn streams(&self) -> Vec<(u32, Viewpoint, Vec<usize>)> {
        let mut groups: Vec<(u32, Viewpoint, Vec<usize>)> = Vec::new();
        let mut index: std::collections::HashMap<(u32, Viewpoint), usize> =
            std::collections::HashMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let key = (s.sequence_id, s.viewpoint);
            match index.get(&key) {
                Some(&g) => groups[g].2.push(i),
                None => {
                    index.insert(key, groups.len());
                    groups.push((s.sequence_id, s.viewpoint, vec![i]));
                }
            }
        }
        groups
    }

    /// Keep only central-viewpoint samples (derives the 1cam variant).
    pub fn central_subset(&self) -> Dataset {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.viewpoint == Viewpoint::Center)
            .cloned()
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.cameras = Cameras::One;
        Dataset { samples, manifest }
    }

    /// Keep the first `hours` of driving footage (by distinct logged steps,
    /// all viewpoints of a kept step included).
    pub fn prefix_hours(&self, hours: f64) -> Dataset {
        let budget = (hours * SAMPLES_PER_HOUR).round() as usize;
        let mut kept = Vec::new();
        let mut steps_seen = 0usize;
        let mut current: Option<(u32, u32)> = None;
        for s in &self.samples {
            let key = (s.sequence_id, s.step_index);
            if current != Some(key) {
                if steps_seen == budget {
                    break;
                }
                steps_seen += 1;
                current = Some(key);
            }
            kept.push(s.clone());
        }
        let mut manifest = self.manifest.clone();
        manifest.hours = hours;
        Dataset { samples: kept, manifest }
    }

    /// Fraction of samples that belong to episodes with at least one
    /// perturbed step.
    pub fn perturbed_episode_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mut noisy_seqs = std::collections::BTreeSet::new();
        for s in &self.samples {
            if s.perturbed {
                noisy_seqs.insert(s.sequence_id);
            }
        }
        let in_noisy =
            self.samples.iter().filter(|s| noisy_seqs.contains(&s.sequence_id)).count();
        in_noisy as f64 / self.samples.len() as f64
    }

    /// Ordering invariant: step_index strictly increasing within every
    /// (sequence, viewpoint) stream.
    fn validate(&self) -> Result<(), String> {
        let mut last: std::collections::HashMap<(u32, Viewpoint), u32> =
            std::collections::HashMap::new();
        for s in &self.samples {
            if let Some(prev) = last.get(&(s.sequence_id, s.viewpoint)) {
                if s.step_index <= *prev {
                    return Err(format!(
                        "step_index not increasing in sequence {} ({})",
                        s.sequence_id,
                        s.viewpoint.name()
                    ));
                }
            }
            last.insert((s.sequence_id, s.viewpoint), s.step_index);
        }
        Ok(())
    }
}

/// Build the observation + label pair for a (possibly yaw-rotated) viewpoint
/// at the current state. The label is the privileged corrective action at
/// the virtual pose.
fn viewpoint_sample(
    map: &TownMap,
    route: &Route,
    state: &VehicleState<f64>,
    yaw_offset: f64,
) -> Result<(Observation, Action<f64>), WorldError> {
    assert!(yaw_offset.abs() <= std::f64::consts::FRAC_PI_4, "lateral yaw offset above pi/4");
    let pose = Pose::new(state.pose.x, state.pose.y, state.pose.yaw + yaw_offset);
    let command = command_at(map, route, &pose)?;
    let frame = lane_frame(map, route, &pose);
    let features = feature_vector(&frame, state.speed);
    let label = expert_action_from_features(&features, command);
    Ok((Observation::new(features, command), label))
}

/// Synthesize the off-trajectory sample seen by a lateral virtual camera:
/// same position, yaw rotated by `yaw_offset`, label recomputed by the
/// expert at the virtual pose.
pub fn synthesize_lateral_sample(
    map: &TownMap,
    route: &Route,
    state: &VehicleState<f64>,
    yaw_offset: f64,
) -> Result<Sample, WorldError> {
    let (observation, action) = viewpoint_sample(map, route, state, yaw_offset)?;
    let viewpoint = if yaw_offset > 0.0 {
        Viewpoint::Left30
    } else if yaw_offset < 0.0 {
        Viewpoint::Right30
    } else {
        Viewpoint::Center
    };
    Ok(Sample { sequence_id: 0, step_index: 0, viewpoint, perturbed: false, observation, action })
}

/// Run the expert over random routes and log a dataset of exactly
/// `hours * 36000` steps (times three samples per step with three cameras).
pub fn collect(
    map: &TownMap,
    hours: f64,
    cameras: Cameras,
    noise: bool,
    condition: &Condition,
    seed: u64,
) -> Dataset {
    assert!(hours > 0.0, "collection hours must be positive");
    let target_steps = (hours * SAMPLES_PER_HOUR).round() as usize;
    let params = BicycleParams::default();
    let mut samples = Vec::with_capacity(target_steps * if cameras == Cameras::Three { 3 } else { 1 });

    let viewpoints: &[Viewpoint] = match cameras {
        Cameras::One => &[Viewpoint::Center],
        Cameras::Three => &[Viewpoint::Center, Viewpoint::Left30, Viewpoint::Right30],
    };

    let mut steps_logged = 0usize;
    let mut episode: u32 = 0;
    'collection: loop {
        // Draw a route for this episode.
        let mut route_rng = rng::stream(seed, "collect-route", &[episode as u64]);
        let route = loop {
            let a = NodeId(route_rng.random_range(0..map.node_count() as u32));
            let b = NodeId(route_rng.random_range(0..map.node_count() as u32));
            if a == b {
                continue;
            }
            let r = plan_route(map, a, b).expect("built-in towns are strongly connected");
            if r.length >= MIN_COLLECTION_ROUTE {
                break r;
            }
        };

        let noisy = noise && {
            let mut rng = rng::stream(seed, "collect-noisy", &[episode as u64]);
            rng.random::<f64>() < NOISY_EPISODE_PROB
        };
        let path = route.path();
        let budget_s = path.total_length() / (10.0 / 3.6);
        let schedule = if noisy {
            let mut rng = rng::stream(seed, "collect-impulse", &[episode as u64]);
            NoiseSchedule::draw(&mut rng, budget_s)
        } else {
            NoiseSchedule::none()
        };

        let mut state = crate::online::spawn_state(&route);
        let budget_steps = (budget_s / CONTROL_DT) as usize;

        for k in 0..budget_steps {
            let t = k as f64 * CONTROL_DT;
            let mut label = Action::coast();
            let mut recorded = true;
            for (vi, vp) in viewpoints.iter().enumerate() {
                match viewpoint_sample(map, &route, &state, vp.yaw_offset()) {
                    Ok((mut obs, l)) => {
                        if !condition.is_identity() {
                            let mut crng = rng::stream(
                                seed,
                                "collect-cond",
                                &[episode as u64, k as u64, vi as u64],
                            );
                            condition.apply(&mut obs.features, &mut crng);
                        }
                        if *vp == Viewpoint::Center {
                            label = l;
                        }
                        samples.push(Sample {
                            sequence_id: episode,
                            step_index: k as u32,
                            viewpoint: *vp,
                            perturbed: schedule.offset_at(t) != 0.0,
                            observation: obs,
                            action: l,
                        });
                    }
                    Err(_) => {
                        // Blown far off route (possible under extreme noise):
                        // end the episode without logging this step.
                        recorded = false;
                        break;
                    }
                }
            }
            if !recorded {
                break;
            }
            steps_logged += 1;
            if steps_logged == target_steps {
                break 'collection;
            }

            // Execute: the label plus any active impulse offset.
            let executed = Action::new(
                label.steering + schedule.offset_at(t),
                label.throttle,
                label.brake,
            );
            state = step_control_period(&state, &executed, &params)
                .expect("collection states stay finite");

            let p = crate::world::Vec2::new(state.pose.x, state.pose.y);
            let proj = crate::world::project(path, p);
            if path.total_length() - proj.s + proj.distance < 2.0 {
                break; // goal reached
            }
        }
        episode += 1;
    }

    Dataset {
        samples,
        manifest: Manifest {
            format: DATASET_FORMAT.into(),
            town: map.town.to_string(),
            condition: condition.clone(),
            cameras,
            noise,
            hours,
            seed,
            config_hash: None,
        },
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension("manifest.json");
    p
}

/// Write the dataset as a CSV plus a JSON manifest sidecar
/// (`<stem>.manifest.json`).
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };

    let manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    let mpath = manifest_path(path);
    let mut mfile = std::fs::File::create(&mpath)
        .map_err(|source| DatasetError::Io { path: mpath.clone(), source })?;
    mfile
        .write_all(manifest.as_bytes())
        .map_err(|source| DatasetError::Io { path: mpath.clone(), source })?;

    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => DatasetError::CorruptRow { row: 0, reason: format!("{other:?}") },
    })?;
    w.write_record([
        "sequence_id",
        "step_index",
        "viewpoint",
        "perturbed",
        "command",
        "speed",
        "f1",
        "f2",
        "f3",
        "f4",
        "f5",
        "f6",
        "f7",
        "steer_label",
        "throttle_label",
        "brake_label",
    ])
    .map_err(|e| csv_err(e, 0, path))?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let f = &s.observation.features;
        let mut rec = Vec::with_capacity(16);
        rec.push(s.sequence_id.to_string());
        rec.push(s.step_index.to_string());
        rec.push(s.viewpoint.name().to_string());
        rec.push(if s.perturbed { "1".into() } else { "0".into() });
        rec.push(s.command().name().to_string());
        rec.push(fmt_f64(s.observation.speed));
        for v in f.iter() {
            rec.push(fmt_f64(*v));
        }
        rec.push(fmt_f64(s.action.steering));
        rec.push(fmt_f64(s.action.throttle));
        rec.push(fmt_f64(s.action.brake));
        w.write_record(&rec).map_err(|e| csv_err(e, i + 1, path))?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Shortest round-trip float formatting (bit-exact read-back); integral
/// values keep a trailing `.0` so columns stay visibly floating point.
fn fmt_f64(v: f64) -> String {
    let mut buf = format!("{v}");
    if !buf.contains('.') && !buf.contains('e') {
        buf.push_str(".0");
    }
    buf
}

fn csv_err(e: csv::Error, row: usize, path: &Path) -> DatasetError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io { path: path.to_path_buf(), source },
        other => DatasetError::CorruptRow { row, reason: format!("{other:?}") },
    }
}

/// Read a dataset written by [`write_dataset`]; the inverse is exact.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mpath = manifest_path(path);
    let mtext = std::fs::read_to_string(&mpath)
        .map_err(|source| DatasetError::Io { path: mpath.clone(), source })?;
    let manifest: Manifest = serde_json::from_str(&mtext)
        .map_err(|e| DatasetError::CorruptRow { row: 0, reason: format!("manifest: {e}") })?;
    if manifest.format != DATASET_FORMAT {
        return Err(DatasetError::FormatVersionMismatch {
            found: manifest.format,
            expected: DATASET_FORMAT,
        });
    }

    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(e, 0, path))?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(e, row, path))?;
        if rec.len() != 16 {
            return Err(DatasetError::CorruptRow {
                row,
                reason: format!("expected 16 columns, found {}", rec.len()),
            });
        }
        let field = |j: usize| rec.get(j).unwrap();
        let parse_f = |j: usize| -> Result<f64, DatasetError> {
            field(j).parse::<f64>().map_err(|e| DatasetError::CorruptRow {
                row,
                reason: format!("column {}: {e}", j + 1),
            })
        };
        let sequence_id = field(0).parse::<u32>().map_err(|e| DatasetError::CorruptRow {
            row,
            reason: format!("sequence_id: {e}"),
        })?;
        let step_index = field(1).parse::<u32>().map_err(|e| DatasetError::CorruptRow {
            row,
            reason: format!("step_index: {e}"),
        })?;
        let viewpoint = Viewpoint::parse(field(2)).ok_or_else(|| DatasetError::CorruptRow {
            row,
            reason: format!("unknown viewpoint `{}`", field(2)),
        })?;
        let perturbed = match field(3) {
            "0" => false,
            "1" => true,
            other => {
                return Err(DatasetError::CorruptRow {
                    row,
                    reason: format!("perturbed flag `{other}`"),
                })
            }
        };
        let command = crate::world::Command::parse(field(4)).ok_or_else(|| {
            DatasetError::CorruptRow { row, reason: format!("unknown command `{}`", field(4)) }
        })?;
        let speed = parse_f(5)?;
        let mut features = [0.0; FEATURES];
        for (k, f) in features.iter_mut().enumerate() {
            *f = parse_f(6 + k)?;
        }
        let action = Action::new(parse_f(13)?, parse_f(14)?, parse_f(15)?);
        let mut observation = Observation::new(features, command);
        observation.speed = speed;
        samples.push(Sample { sequence_id, step_index, viewpoint, perturbed, observation, action });
    }

    let dataset = Dataset { samples, manifest };
    dataset
        .validate()
        .map_err(|reason| DatasetError::CorruptRow { row: 0, reason })?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_town, TownId};

    fn town() -> TownMap {
        build_town(TownId::A, 0)
    }

    #[test]
    fn collect_sample_counts_are_exact() {
        let m = town();
        // 0.1 h at 10 Hz: 3600 steps; three cameras triple it.
        let d = collect(&m, 0.1, Cameras::One, false, &Condition::clear(), 1);
        assert_eq!(d.len(), 3600);
        let d3 = collect(&m, 0.1, Cameras::Three, false, &Condition::clear(), 1);
        assert_eq!(d3.len(), 10800);
    }

    #[test]
    fn three_cam_steps_come_in_triples_with_shared_speed() {
        let m = town();
        let d = collect(&m, 0.01, Cameras::Three, false, &Condition::clear(), 2);
        for chunk in d.samples.chunks(3) {
            assert_eq!(chunk.len(), 3);
            assert_eq!(chunk[0].viewpoint, Viewpoint::Center);
            assert_eq!(chunk[1].viewpoint, Viewpoint::Left30);
            assert_eq!(chunk[2].viewpoint, Viewpoint::Right30);
            for s in chunk {
                assert_eq!(s.sequence_id, chunk[0].sequence_id);
                assert_eq!(s.step_index, chunk[0].step_index);
                assert_eq!(s.speed(), chunk[0].speed());
            }
        }
    }

    #[test]
    fn lateral_sample_matches_central_at_zero_offset() {
        let m = town();
        let r = plan_route(&m, NodeId(0), NodeId(3)).unwrap();
        let path = r.path();
        let p = path.point_at(30.0);
        let state = VehicleState {
            pose: Pose::new(p.x, p.y, path.start_tangent().angle()),
            speed: 7.0,
        };
        let center = synthesize_lateral_sample(&m, &r, &state, 0.0).unwrap();
        let left = synthesize_lateral_sample(&m, &r, &state, std::f64::consts::FRAC_PI_6).unwrap();
        assert_eq!(center.viewpoint, Viewpoint::Center);
        assert_eq!(left.viewpoint, Viewpoint::Left30);
        // Heading error differs by exactly the yaw offset.
        let dh = left.observation.features[1] - center.observation.features[1];
        assert!((dh - std::f64::consts::FRAC_PI_6).abs() < 1e-12, "dh {dh}");
        // All other geometric features identical (same position).
        assert_eq!(left.observation.features[0], center.observation.features[0]);
        assert_eq!(left.observation.features[5], center.observation.features[5]);
        // Corrective label: pointing left of the lane on a straight means
        // steering back right (negative).
        assert!(left.action.steering < 0.0, "label {}", left.action.steering);
    }

    #[test]
    fn noisy_collection_marks_about_ten_percent_of_episodes() {
        let m = town();
        let d = collect(&m, 1.0, Cameras::One, true, &Condition::clear(), 7);
        let frac = d.perturbed_episode_fraction();
        assert!(
            (frac - NOISY_EPISODE_PROB).abs() <= 0.04,
            "perturbed-episode sample fraction {frac}"
        );
        // Labels on non-perturbed steps are the executed expert actions, so
        // some perturbed steps must exist at all.
        assert!(d.samples.iter().any(|s| s.perturbed));
    }

    #[test]
    fn zero_condition_profile_is_identity() {
        let m = town();
        let clear = collect(&m, 0.005, Cameras::One, false, &Condition::clear(), 3);
        let mut zero_named = Condition::clear();
        zero_named.name = "alsoclear".into();
        let again = collect(&m, 0.005, Cameras::One, false, &zero_named, 3);
        for (a, b) in clear.samples.iter().zip(&again.samples) {
            assert_eq!(a.observation, b.observation);
        }
    }

    #[test]
    fn nonzero_condition_changes_observations_not_labels() {
        let m = town();
        let clear = collect(&m, 0.005, Cameras::One, false, &Condition::clear(), 3);
        let shifted = collect(&m, 0.005, Cameras::One, false, &Condition::soft_shift(), 3);
        assert_eq!(clear.len(), shifted.len());
        let mut any_diff = false;
        for (a, b) in clear.samples.iter().zip(&shifted.samples) {
            assert_eq!(a.action, b.action);
            if a.observation.features != b.observation.features {
                any_diff = true;
            }
        }
        assert!(any_diff);
    }

    #[test]
    fn prefix_and_central_derivations() {
        let m = town();
        let d = collect(&m, 0.02, Cameras::Three, false, &Condition::clear(), 5);
        let central = d.central_subset();
        assert_eq!(central.len(), 720);
        assert!(central.samples.iter().all(|s| s.viewpoint == Viewpoint::Center));
        let half = d.prefix_hours(0.01);
        assert_eq!(half.len(), 3 * 360);
        assert_eq!(half.manifest.hours, 0.01);
        // Prefix preserves triple structure.
        assert_eq!(half.samples.last().unwrap().step_index, half.samples[half.len() - 3].step_index);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let m = town();
        let d = collect(&m, 0.004, Cameras::Three, true, &Condition::soft_shift(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&d, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(d.manifest, back.manifest);
        assert_eq!(d.samples.len(), back.samples.len());
        for (a, b) in d.samples.iter().zip(&back.samples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn read_missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.csv");
        assert!(matches!(read_dataset(&path), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn read_rejects_version_mismatch() {
        let m = town();
        let d = collect(&m, 0.002, Cameras::One, false, &Condition::clear(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&d, &path).unwrap();
        let mpath = manifest_path(&path);
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("driveval-dataset/1", "driveval-dataset/9")).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DatasetError::FormatVersionMismatch { .. })
        ));
    }

    #[test]
    fn read_reports_corrupt_row_index() {
        let m = town();
        let d = collect(&m, 0.002, Cameras::One, false, &Condition::clear(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&d, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        // Break the third data row's speed column.
        let lines: Vec<&str> = text.lines().collect();
        let mut broken: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        broken[3] = broken[3].replacen(',', ",oops", 1);
        text = broken.join("\n");
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(DatasetError::CorruptRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected CorruptRow, got {other:?}"),
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let m = town();
        let a = collect(&m, 0.01, Cameras::Three, true, &Condition::soft_shift(), 9);
        let b = collect(&m, 0.01, Cameras::Three, true, &Condition::soft_shift(), 9);
        assert_eq!(a, b);
    }
}
