//! Closed-loop episode execution with infraction detection and the three
//! online driving-quality metrics: success rate, average route completion,
//! and kilometers per infraction.

use crate::dataset::Condition;
use crate::policy::{Observation, Policy};
use crate::rng;
use crate::vehicle::{step_vehicle, Pose, VehicleState, CONTROL_DT, PHYSICS_DT, SUBSTEPS};
use crate::world::{
    command_at, lane_frame, plan_route, project, Command, NodeId, Route, TownMap, Vec2,
};
use crate::BicycleParams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Episode time budget corresponds to covering the route at 10 km/h.
pub const BUDGET_SPEED: f64 = 10.0 / 3.6;
/// Reaching within this along-route distance of the goal ends the episode.
pub const GOAL_RADIUS: f64 = 2.0;
/// Speed below this for [`STUCK_SECONDS`] terminates the episode.
pub const STUCK_SPEED: f64 = 0.1;
pub const STUCK_SECONDS: f64 = 10.0;
/// A violation must persist this long to count as an infraction.
const DEBOUNCE_STEPS: usize = 5; // 0.5 s at 10 Hz
/// After an event, this long clear of violation re-arms detection.
const REARM_STEPS: usize = 20; // 2 s
/// Built-in suite routes are kept within this length band (meters).
pub const SUITE_ROUTE_RANGE: (f64, f64) = (200.0, 1000.0);

#[derive(Debug, Error, PartialEq)]
pub enum OnlineError {
    #[error("no episode results to aggregate")]
    EmptyResults,
}

/// One navigation trial: a route plus run conditions.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub route: Route,
    pub time_budget: f64,
    pub goal_radius: f64,
    pub condition: Condition,
    pub seed: u64,
}

impl EpisodeSpec {
    /// Standard budget: route length over 10 km/h.
    pub fn standard(route: Route, condition: Condition, seed: u64) -> Self {
        let time_budget = route.length / BUDGET_SPEED;
        Self { route, time_budget, goal_radius: GOAL_RADIUS, condition, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    OffRoad,
    OppositeLane,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    /// Episode time of the violation onset, seconds.
    pub time: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Goal,
    Timeout,
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Fraction of the initial along-route distance covered; negative when
    /// the vehicle ends farther from the goal than it started.
    pub completion: f64,
    pub distance_driven_km: f64,
    pub infractions: Vec<InfractionEvent>,
    pub termination: Termination,
}

/// Aggregated driving-quality metrics over a trial suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub success_rate: f64,
    pub avg_completion: f64,
    /// Total km divided by total infractions; total km when no infraction
    /// occurred (see `zero_infractions`).
    pub km_per_infraction: f64,
    pub zero_infractions: bool,
    pub trials: usize,
}

/// Per-control-step trace used by infraction detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub pose: Pose<f64>,
    pub speed: f64,
    pub on_drivable: bool,
    pub on_opposing_lane: bool,
}

/// Along-route distance to the goal: remaining path length at the projection
/// plus the lateral distance to the path. Grows when the vehicle wanders
/// away, so completion can go negative.
fn distance_to_goal(route: &Route, p: Vec2) -> f64 {
    let path = route.path();
    let proj = project(path, p);
    (path.total_length() - proj.s) + proj.distance
}

/// Spawn arclength along the route: a few meters into the first block,
/// clear of the start intersection.
pub const SPAWN_OFFSET: f64 = 12.0;

/// Initial vehicle state for an episode on a route: at rest on the lane,
/// just clear of the start intersection, aligned with the path.
pub fn spawn_state(route: &Route) -> VehicleState<f64> {
    let path = route.path();
    let s = SPAWN_OFFSET.min(0.2 * path.total_length());
    let p = path.point_at(s);
    let ahead = path.point_at(s + 1.0);
    let yaw = (ahead - p).angle();
    VehicleState::at_rest(Pose::new(p.x, p.y, yaw))
}

/// Run one closed-loop episode. All failure modes are results, not errors.
pub fn run_episode(map: &TownMap, policy: &dyn Policy, spec: &EpisodeSpec) -> EpisodeResult {
    let (result, _) = run_episode_traced(map, policy, spec);
    result
}

/// Run one episode and return the 10 Hz trajectory trace with it.
pub fn run_episode_traced(
    map: &TownMap,
    policy: &dyn Policy,
    spec: &EpisodeSpec,
) -> (EpisodeResult, Vec<TrajectoryPoint>) {
    let params = BicycleParams::default();
    let mut state = spawn_state(&spec.route);

    let mut policy = policy.clone_box();
    policy.begin_episode(spec.seed);

    let d0 = distance_to_goal(&spec.route, Vec2::new(state.pose.x, state.pose.y));
    let max_steps = (spec.time_budget / CONTROL_DT).ceil() as usize;
    let mut trajectory = Vec::with_capacity(max_steps);
    let mut odometer_m = 0.0;
    let mut slow_steps = 0usize;
    let stuck_limit = (STUCK_SECONDS / CONTROL_DT) as usize;
    let mut termination = Termination::Timeout;

    for k in 0..max_steps {
        let t = k as f64 * CONTROL_DT;
        let frame = lane_frame(map, &spec.route, &state.pose);
        trajectory.push(TrajectoryPoint {
            time: t,
            pose: state.pose,
            speed: state.speed,
            on_drivable: frame.on_drivable,
            on_opposing_lane: frame.on_opposing_lane,
        });

        let p = Vec2::new(state.pose.x, state.pose.y);
        if distance_to_goal(&spec.route, p) <= spec.goal_radius {
            termination = Termination::Goal;
            break;
        }
        if state.speed < STUCK_SPEED {
            slow_steps += 1;
            if slow_steps > stuck_limit {
                termination = Termination::Stuck;
                break;
            }
        } else {
            slow_steps = 0;
        }

        // Observation: lane frame + condition profile + command.
        let command = command_at(map, &spec.route, &state.pose).unwrap_or(Command::Continue);
        let mut obs = Observation::from_frame(&frame, command, state.speed);
        if !spec.condition.is_identity() {
            let mut crng = rng::stream(spec.seed, "obs-cond", &[k as u64]);
            spec.condition.apply(&mut obs.features, &mut crng);
        }
        let action = policy.predict(&obs, k as u64);

        for _ in 0..SUBSTEPS {
            state = step_vehicle(&state, &action, PHYSICS_DT, &params)
                .expect("episode states stay finite");
            odometer_m += state.speed * PHYSICS_DT;
        }
    }

    let p = Vec2::new(state.pose.x, state.pose.y);
    let d_end = distance_to_goal(&spec.route, p);
    let completion = (d0 - d_end) / d0;
    let infractions = detect_infractions(map, &trajectory);
    let result = EpisodeResult {
        success: termination == Termination::Goal,
        completion,
        distance_driven_km: odometer_m / 1000.0,
        infractions,
        termination,
    };
    (result, trajectory)
}

/// Scan a trajectory for sustained violations: one event per continuous
/// violation of at least 0.5 s, re-armed after 2 s clear.
pub fn detect_infractions(map: &TownMap, trajectory: &[TrajectoryPoint]) -> Vec<InfractionEvent> {
    let _ = map;
    let mut events = Vec::new();
    for (kind, flag) in [
        (InfractionKind::OffRoad, &(|p: &TrajectoryPoint| !p.on_drivable) as &dyn Fn(&TrajectoryPoint) -> bool),
        (InfractionKind::OppositeLane, &|p: &TrajectoryPoint| p.on_opposing_lane),
    ] {
        let mut armed = true;
        let mut violation_start: Option<usize> = None;
        let mut clear_since: Option<usize> = None;
        for (k, point) in trajectory.iter().enumerate() {
            if flag(point) {
                clear_since = None;
                let start = *violation_start.get_or_insert(k);
                if armed && k - start >= DEBOUNCE_STEPS {
                    let onset = &trajectory[start];
                    events.push(InfractionEvent {
                        kind,
                        time: onset.time,
                        position: [onset.pose.x, onset.pose.y],
                    });
                    armed = false;
                }
            } else {
                violation_start = None;
                if !armed {
                    let since = *clear_since.get_or_insert(k);
                    if k - since >= REARM_STEPS {
                        armed = true;
                        clear_since = None;
                    }
                }
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    events
}

/// Aggregate per-trial results into the three online metrics.
pub fn aggregate_online(results: &[EpisodeResult]) -> Result<OnlineReport, OnlineError> {
    if results.is_empty() {
        return Err(OnlineError::EmptyResults);
    }
    let n = results.len() as f64;
    let successes = results.iter().filter(|r| r.success).count() as f64;
    let avg_completion = results.iter().map(|r| r.completion).sum::<f64>() / n;
    let total_km: f64 = results.iter().map(|r| r.distance_driven_km).sum();
    let total_infractions: usize = results.iter().map(|r| r.infractions.len()).sum();
    let (km_per_infraction, zero_infractions) = if total_infractions == 0 {
        (total_km, true)
    } else {
        (total_km / total_infractions as f64, false)
    };
    Ok(OnlineReport {
        success_rate: successes / n,
        avg_completion,
        km_per_infraction,
        zero_infractions,
        trials: results.len(),
    })
}

/// Suite definition: (start, goal, seed) triples, exported as
/// `driveval-suite/1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub format: String,
    pub town: String,
    pub trials: Vec<SuiteTrial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteTrial {
    pub start: NodeId,
    pub goal: NodeId,
    pub seed: u64,
}

pub const SUITE_FORMAT: &str = "driveval-suite/1";

/// Draw the standard goal-directed suite: `trials` routes with lengths in
/// the suite band, deterministic in the suite seed.
pub fn standard_suite(map: &TownMap, trials: usize, seed: u64) -> SuiteSpec {
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let mut rng = rng::stream(seed, "suite-route", &[i as u64]);
        let (start, goal) = loop {
            let a = NodeId(rng.random_range(0..map.node_count() as u32));
            let b = NodeId(rng.random_range(0..map.node_count() as u32));
            if a == b {
                continue;
            }
            let r = plan_route(map, a, b).expect("built-in towns are strongly connected");
            if r.length >= SUITE_ROUTE_RANGE.0 && r.length <= SUITE_ROUTE_RANGE.1 {
                break (a, b);
            }
        };
        out.push(SuiteTrial { start, goal, seed: rng::stream_key(seed, "episode", &[i as u64]) });
    }
    SuiteSpec { format: SUITE_FORMAT.into(), town: map.town.to_string(), trials: out }
}

/// Materialize episode specs for a suite under a condition profile.
pub fn suite_episodes(map: &TownMap, suite: &SuiteSpec, condition: &Condition) -> Vec<EpisodeSpec> {
    suite
        .trials
        .iter()
        .map(|t| {
            let route = plan_route(map, t.start, t.goal).expect("suite routes plan");
            EpisodeSpec::standard(route, condition.clone(), t.seed)
        })
        .collect()
}

/// Run a policy over a full suite and aggregate.
pub fn run_suite(
    map: &TownMap,
    policy: &dyn Policy,
    suite: &SuiteSpec,
    condition: &Condition,
) -> (Vec<EpisodeResult>, OnlineReport) {
    let episodes = suite_episodes(map, suite, condition);
    let results: Vec<EpisodeResult> =
        episodes.iter().map(|spec| run_episode(map, policy, spec)).collect();
    let report = aggregate_online(&results).expect("suite is nonempty");
    (results, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ConstantPolicy, ExpertPolicy};
    use crate::vehicle::Action;
    use crate::world::{build_town, TownId};

    fn town() -> TownMap {
        build_town(TownId::A, 0)
    }

    fn spec_for(map: &TownMap, start: u32, goal: u32, seed: u64) -> EpisodeSpec {
        let route = plan_route(map, NodeId(start), NodeId(goal)).unwrap();
        EpisodeSpec::standard(route, Condition::clear(), seed)
    }

    #[test]
    fn expert_completes_with_no_infractions() {
        let m = town();
        let spec = spec_for(&m, 0, 15, 1);
        let r = run_episode(&m, &ExpertPolicy, &spec);
        assert!(r.success, "termination {:?}", r.termination);
        assert!(r.completion >= 0.99, "completion {}", r.completion);
        assert!(r.infractions.is_empty(), "{:?}", r.infractions);
    }

    #[test]
    fn full_left_policy_fails_with_off_road() {
        let m = town();
        let spec = spec_for(&m, 0, 15, 2);
        let policy = ConstantPolicy { action: Action::new(1.0, 0.5, 0.0) };
        let r = run_episode(&m, &policy, &spec);
        assert!(!r.success);
        assert!(
            r.infractions.iter().any(|i| i.kind == InfractionKind::OffRoad),
            "{:?}",
            r.infractions
        );
    }

    #[test]
    fn zero_throttle_policy_gets_stuck() {
        let m = town();
        let spec = spec_for(&m, 0, 15, 3);
        let policy = ConstantPolicy { action: Action::coast() };
        let r = run_episode(&m, &policy, &spec);
        assert_eq!(r.termination, Termination::Stuck);
        assert!(r.completion.abs() < 0.01, "completion {}", r.completion);
    }

    #[test]
    fn success_implies_goal_radius_completion() {
        let m = town();
        for (a, b) in [(0u32, 15u32), (3, 12), (5, 10)] {
            let spec = spec_for(&m, a, b, 4);
            let r = run_episode(&m, &ExpertPolicy, &spec);
            if r.success {
                let bound = 1.0 - spec.goal_radius / spec.route.length;
                assert!(r.completion >= bound, "completion {} < {bound}", r.completion);
            }
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let m = town();
        let spec = spec_for(&m, 0, 15, 9);
        let p = crate::policy::make_perturbed(
            Box::new(ExpertPolicy),
            crate::policy::PerturbationSpec::WhiteNoise { std: 0.2 },
            13,
        );
        let a = run_episode(&m, &p, &spec);
        let b = run_episode(&m, &p, &spec);
        assert_eq!(a, b);
    }

    fn synthetic_point(t: f64, off_road: bool, opposing: bool) -> TrajectoryPoint {
        TrajectoryPoint {
            time: t,
            pose: Pose::new(0.0, 0.0, 0.0),
            speed: 5.0,
            on_drivable: !off_road,
            on_opposing_lane: opposing,
        }
    }

    #[test]
    fn clean_trajectory_has_no_events() {
        let m = town();
        let tr: Vec<TrajectoryPoint> =
            (0..100).map(|k| synthetic_point(k as f64 * 0.1, false, false)).collect();
        assert!(detect_infractions(&m, &tr).is_empty());
    }

    #[test]
    fn continuous_excursion_is_one_event() {
        let m = town();
        // 3 s continuous off-road inside a clean run.
        let tr: Vec<TrajectoryPoint> = (0..100)
            .map(|k| synthetic_point(k as f64 * 0.1, (20..50).contains(&k), false))
            .collect();
        let events = detect_infractions(&m, &tr);
        assert_eq!(events.len(), 1, "{events:?}");
        assert_eq!(events[0].kind, InfractionKind::OffRoad);
        assert!((events[0].time - 2.0).abs() < 1e-9);
    }

    #[test]
    fn separated_excursions_re_arm() {
        let m = town();
        // Two 1 s excursions separated by 5 s on-road.
        let tr: Vec<TrajectoryPoint> = (0..200)
            .map(|k| {
                let off = (20..30).contains(&k) || (80..90).contains(&k);
                synthetic_point(k as f64 * 0.1, off, false)
            })
            .collect();
        let events = detect_infractions(&m, &tr);
        assert_eq!(events.len(), 2, "{events:?}");
    }

    #[test]
    fn brief_blips_are_debounced() {
        let m = town();
        // 0.3 s violations never fire.
        let tr: Vec<TrajectoryPoint> = (0..100)
            .map(|k| synthetic_point(k as f64 * 0.1, (20..23).contains(&k) || (50..53).contains(&k), false))
            .collect();
        assert!(detect_infractions(&m, &tr).is_empty());
    }

    #[test]
    fn opposite_lane_events_are_detected() {
        let m = town();
        let tr: Vec<TrajectoryPoint> = (0..60)
            .map(|k| synthetic_point(k as f64 * 0.1, false, (10..30).contains(&k)))
            .collect();
        let events = detect_infractions(&m, &tr);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, InfractionKind::OppositeLane);
    }

    fn result(success: bool, completion: f64, km: f64, infractions: usize) -> EpisodeResult {
        EpisodeResult {
            success,
            completion,
            distance_driven_km: km,
            infractions: (0..infractions)
                .map(|i| InfractionEvent {
                    kind: InfractionKind::OffRoad,
                    time: i as f64,
                    position: [0.0, 0.0],
                })
                .collect(),
            termination: if success { Termination::Goal } else { Termination::Timeout },
        }
    }

    #[test]
    fn aggregate_success_rate() {
        let results: Vec<EpisodeResult> =
            (0..25).map(|i| result(i < 20, 1.0, 0.4, 0)).collect();
        let r = aggregate_online(&results).unwrap();
        assert!((r.success_rate - 0.8).abs() < 1e-12);
        assert_eq!(r.trials, 25);
        assert!(r.zero_infractions);
    }

    #[test]
    fn aggregate_mean_completion_allows_negative() {
        let results = vec![result(false, 0.75, 0.2, 0), result(false, -0.2, 0.2, 0)];
        let r = aggregate_online(&results).unwrap();
        assert!((r.avg_completion - 0.275).abs() < 1e-12);
    }

    #[test]
    fn aggregate_km_per_infraction() {
        let results = vec![
            result(true, 1.0, 5.0, 1),
            result(true, 1.0, 4.0, 2),
            result(true, 1.0, 3.0, 0),
        ];
        let r = aggregate_online(&results).unwrap();
        assert!((r.km_per_infraction - 4.0).abs() < 1e-12);
        assert!(!r.zero_infractions);
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_rejects_empty() {
        assert_eq!(aggregate_online(&[]), Err(OnlineError::EmptyResults));
        let a = vec![result(true, 1.0, 1.0, 1), result(false, 0.3, 0.5, 0)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(aggregate_online(&a).unwrap().success_rate, aggregate_online(&b).unwrap().success_rate);
    }

    #[test]
    fn standard_suite_is_deterministic_and_in_range() {
        for town_id in [TownId::A, TownId::B] {
            let m = build_town(town_id, 0);
            let s1 = standard_suite(&m, 25, 77);
            let s2 = standard_suite(&m, 25, 77);
            assert_eq!(s1, s2);
            assert_eq!(s1.trials.len(), 25);
            for t in &s1.trials {
                let r = plan_route(&m, t.start, t.goal).unwrap();
                assert!(r.length >= SUITE_ROUTE_RANGE.0 && r.length <= SUITE_ROUTE_RANGE.1);
            }
        }
    }

    #[test]
    fn suite_spec_round_trips_as_json() {
        let m = town();
        let s = standard_suite(&m, 5, 3);
        let json = serde_json::to_string(&s).unwrap();
        let back: SuiteSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        assert_eq!(back.format, SUITE_FORMAT);
    }
}
