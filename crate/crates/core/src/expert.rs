//! Privileged expert driver and the training-time steering-noise injector.
//!
//! The expert is pure pursuit on the route centerline. The target point is
//! reconstructed from the lane-relative features (offset, heading error, and
//! the piecewise curvature profile ahead), so the controller is a pure
//! function of the observation vector: the privileged `expert_action` and a
//! feature-space policy evaluated on logged observations produce identical
//! steering, which keeps recorded labels self-consistent with offline
//! evaluation.

use crate::float::Float;
use crate::vehicle::{Action, VehicleState};
use crate::world::{
    command_at, lane_frame, Command, LaneFrame, Route, TownMap, WorldError, CONNECTOR_RADIUS,
    CURVATURE_LOOKAHEADS, TURN_ARC_LENGTH,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Cruise speed on straights: 35 km/h.
pub const CRUISE_SPEED: f64 = 35.0 / 3.6;
/// Target speed in turns: 20 km/h.
pub const TURN_SPEED: f64 = 20.0 / 3.6;
/// Curvature (at the 10 m lookahead) above which the expert slows for a turn.
pub const TURN_CURVATURE: f64 = 0.02;
/// Longitudinal proportional gain.
pub const SPEED_GAIN: f64 = 0.5;
/// Pure-pursuit lookahead: max(4 m, 0.5 s * speed).
pub const MIN_LOOKAHEAD: f64 = 4.0;
pub const LOOKAHEAD_TIME: f64 = 0.5;

/// Feature vector layout shared by the expert controller and observations.
pub const FEATURES: usize = 7;
pub const F_LATERAL: usize = 0;
pub const F_HEADING: usize = 1;
pub const F_CURV_5: usize = 2;
pub const F_CURV_10: usize = 3;
pub const F_CURV_20: usize = 4;
pub const F_DIST_INTERSECTION: usize = 5;
pub const F_SPEED: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURES] = [
    "lateral_offset",
    "heading_error",
    "curvature_5m",
    "curvature_10m",
    "curvature_20m",
    "dist_to_intersection",
    "speed",
];

/// Pack a lane frame and speed into the feature vector.
pub fn feature_vector(frame: &LaneFrame, speed: f64) -> [f64; FEATURES] {
    [
        frame.lateral_offset,
        frame.heading_error,
        frame.curvature_ahead[0],
        frame.curvature_ahead[1],
        frame.curvature_ahead[2],
        frame.dist_to_intersection,
        speed,
    ]
}

/// Advance a unit pose along a constant-curvature arc for `ds` meters.
fn advance_arc(x: &mut f64, y: &mut f64, heading: &mut f64, kappa: f64, ds: f64) {
    if kappa.abs() < 1e-12 {
        *x += ds * heading.cos();
        *y += ds * heading.sin();
    } else {
        let h1 = *heading + kappa * ds;
        *x += (h1.sin() - heading.sin()) / kappa;
        *y += -(h1.cos() - heading.cos()) / kappa;
        *heading = h1;
    }
}

/// Pure-pursuit steering from the lane-relative feature vector and the
/// navigation command.
///
/// The centerline ahead is reconstructed at piecewise-constant curvature and
/// the rear-axle pure-pursuit law maps the bearing of the lookahead point to
/// a wheel angle. During turns the command plus `dist_to_intersection`
/// describe the connector arc exactly (all turns are quarter circles of the
/// town's connector radius ending at the junction marker); away from turns
/// the reconstruction falls back to the sampled curvature profile.
pub fn expert_steering(features: &[f64; FEATURES], command: Command) -> f64 {
    let params = crate::BicycleParams::default();
    let d = features[F_LATERAL];
    let psi = features[F_HEADING];
    let speed = features[F_SPEED];
    let lookahead = MIN_LOOKAHEAD.max(LOOKAHEAD_TIME * speed);

    // Piecewise-constant curvature ahead of the projection point:
    // (piece end, curvature) with implicit start at the previous end.
    let pieces: [(f64, f64); 3] = match command {
        Command::Left | Command::Right => {
            let sign = if command == Command::Left { 1.0 } else { -1.0 };
            let exit = features[F_DIST_INTERSECTION];
            let entry = (exit - TURN_ARC_LENGTH).max(0.0);
            [(entry, 0.0), (exit, sign / CONNECTOR_RADIUS), (f64::INFINITY, 0.0)]
        }
        Command::Continue | Command::Straight => [
            (CURVATURE_LOOKAHEADS[0] + 2.5, features[F_CURV_5]),
            (CURVATURE_LOOKAHEADS[1] + 5.0, features[F_CURV_10]),
            (f64::INFINITY, features[F_CURV_20]),
        ],
    };

    // Reconstruct the target point in the lane frame (origin at the
    // projection point, x along the path tangent).
    let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0);
    let mut s = 0.0;
    for (piece_end, kappa) in pieces {
        let ds = piece_end.min(lookahead) - s;
        if ds <= 0.0 {
            continue;
        }
        advance_arc(&mut x, &mut y, &mut heading, kappa, ds);
        s += ds;
        if s >= lookahead {
            break;
        }
    }

    // Vehicle sits at (0, d) heading psi in the lane frame.
    let dx = x;
    let dy = y - d;
    let vx = psi.cos() * dx + psi.sin() * dy;
    let vy = -psi.sin() * dx + psi.cos() * dy;
    let alpha = vy.atan2(vx);
    let chord = (dx * dx + dy * dy).sqrt().max(1.0);
    let delta = (2.0 * params.wheelbase * alpha.sin() / chord).atan();
    (delta / params.max_wheel_angle).clamp(-1.0, 1.0)
}

/// Longitudinal proportional control mapped to throttle/brake; slows to
/// 20 km/h when the 10 m curvature lookahead announces a turn.
pub fn expert_longitudinal(features: &[f64; FEATURES]) -> (f64, f64) {
    let target = if features[F_CURV_10].abs() > TURN_CURVATURE { TURN_SPEED } else { CRUISE_SPEED };
    let u = SPEED_GAIN * (target - features[F_SPEED]);
    if u >= 0.0 {
        (u.min(1.0), 0.0)
    } else {
        (0.0, (-u).min(1.0))
    }
}

/// Full expert action from the feature vector and command.
pub fn expert_action_from_features(features: &[f64; FEATURES], command: Command) -> Action<f64> {
    let steering = expert_steering(features, command);
    let (throttle, brake) = expert_longitudinal(features);
    Action::new(steering, throttle, brake)
}

/// Privileged expert action for a vehicle state on a route.
pub fn expert_action(
    map: &TownMap,
    route: &Route,
    state: &VehicleState<f64>,
) -> Result<Action<f64>, WorldError> {
    let command = command_at(map, route, &state.pose)?;
    let frame = lane_frame(map, route, &state.pose);
    Ok(expert_action_from_features(&feature_vector(&frame, state.speed), command))
}

/// One triangular steering perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSpec<F> {
    pub t0: F,
    pub duration: F,
    /// Steering offset at the apex, in [-0.5, 0.5].
    pub peak: F,
}

impl<F: Float> ImpulseSpec<F> {
    pub fn new(t0: F, duration: F, peak: F) -> Self {
        assert!(duration > F::zero(), "impulse duration must be positive");
        assert!(peak.abs() <= F::from_f(0.5), "impulse peak bounded by 0.5");
        Self { t0, duration, peak }
    }
}

/// Triangular impulse value at time `t`: zero outside the support, rising
/// linearly to the peak at the midpoint and back.
pub fn triangular_impulse<F: Float>(t: F, spec: &ImpulseSpec<F>) -> F {
    let rel = t - spec.t0;
    if rel <= F::zero() || rel >= spec.duration {
        return F::zero();
    }
    let half = spec.duration / F::from_f(2.0);
    if rel <= half {
        spec.peak * (rel / half)
    } else {
        spec.peak * ((spec.duration - rel) / half)
    }
}

/// Probability that a collection episode is noisy.
pub const NOISY_EPISODE_PROB: f64 = 0.1;
/// Impulse arrival rate within a noisy episode (Poisson, per second).
pub const IMPULSE_RATE: f64 = 1.0 / 20.0;
pub const IMPULSE_DURATION_RANGE: (f64, f64) = (0.5, 2.0);
pub const IMPULSE_PEAK_RANGE: (f64, f64) = (0.15, 0.5);

/// The steering-noise schedule of one noisy collection episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    impulses: Vec<ImpulseSpec<f64>>,
}

impl NoiseSchedule {
    pub fn none() -> Self {
        Self { impulses: Vec::new() }
    }

    /// Draw impulse arrivals as a Poisson process over the episode horizon.
    pub fn draw(rng: &mut ChaCha8Rng, horizon_s: f64) -> Self {
        let mut impulses = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t -= u.ln() / IMPULSE_RATE;
            if t >= horizon_s {
                break;
            }
            let duration = rng.random_range(IMPULSE_DURATION_RANGE.0..IMPULSE_DURATION_RANGE.1);
            let magnitude = rng.random_range(IMPULSE_PEAK_RANGE.0..IMPULSE_PEAK_RANGE.1);
            let peak = if rng.random::<bool>() { magnitude } else { -magnitude };
            impulses.push(ImpulseSpec::new(t, duration, peak));
        }
        Self { impulses }
    }

    /// Summed impulse offset at episode time `t`.
    pub fn offset_at(&self, t: f64) -> f64 {
        self.impulses.iter().map(|i| triangular_impulse(t, i)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.impulses.is_empty()
    }
}
