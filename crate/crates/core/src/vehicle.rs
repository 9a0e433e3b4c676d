//! Deterministic kinematic bicycle model advanced at a fixed physics step.
//!
//! The pose is the rear-axle reference point: `yaw_rate = v * tan(delta) / L`.
//! Control runs at 10 Hz; each control period is integrated as five 0.02 s
//! physics substeps with the action held constant.

use crate::float::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physics substep (seconds).
pub const PHYSICS_DT: f64 = 0.02;
/// Control period (seconds), i.e. the 10 Hz logging/decision rate.
pub const CONTROL_DT: f64 = 0.1;
/// Substeps per control period.
pub const SUBSTEPS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum VehicleError {
    #[error("non-finite input in {context}")]
    NonFiniteInput { context: &'static str },
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle<F: Float>(a: F) -> F {
    let tau = F::from_f(std::f64::consts::TAU);
    let pi = F::from_f(std::f64::consts::PI);
    let mut r = a % tau;
    if r <= -pi {
        r += tau;
    } else if r > pi {
        r -= tau;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<F> {
    pub x: F,
    pub y: F,
    /// Heading, radians in (-pi, pi], counter-clockwise from +x.
    pub yaw: F,
}

impl<F: Float> Pose<F> {
    pub fn new(x: F, y: F, yaw: F) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState<F> {
    pub pose: Pose<F>,
    /// Forward speed, m/s, never negative.
    pub speed: F,
}

impl<F: Float> VehicleState<F> {
    pub fn at_rest(pose: Pose<F>) -> Self {
        Self { pose, speed: F::zero() }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.speed.is_finite()
    }
}

/// Control input; each component is clamped to its legal range on
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action<F> {
    /// Dimensionless steering in [-1, 1]; positive turns left (CCW).
    pub steering: F,
    /// Throttle in [0, 1].
    pub throttle: F,
    /// Brake in [0, 1].
    pub brake: F,
}

impl<F: Float> Action<F> {
    pub fn new(steering: F, throttle: F, brake: F) -> Self {
        let one = F::one();
        Self {
            steering: clamp(steering, -one, one),
            throttle: clamp(throttle, F::zero(), one),
            brake: clamp(brake, F::zero(), one),
        }
    }

    pub fn coast() -> Self {
        Self { steering: F::zero(), throttle: F::zero(), brake: F::zero() }
    }

    pub fn is_finite(&self) -> bool {
        self.steering.is_finite() && self.throttle.is_finite() && self.brake.is_finite()
    }
}

fn clamp<F: Float>(v: F, lo: F, hi: F) -> F {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Bicycle parameters. Chosen so a 35 km/h cruise and 8 m turn radii are
/// feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams<F> {
    /// Wheelbase, meters.
    pub wheelbase: F,
    /// Maximum wheel angle, radians; `steering` scales linearly into it.
    pub max_wheel_angle: F,
    /// Throttle-to-acceleration gain, m/s^2 at full throttle.
    pub throttle_gain: F,
    /// Brake-to-deceleration gain, m/s^2 at full brake.
    pub brake_gain: F,
    /// Linear drag coefficient, 1/s.
    pub drag: F,
}

impl<F: Float> Default for BicycleParams<F> {
    fn default() -> Self {
        Self {
            wheelbase: F::from_f(2.5),
            max_wheel_angle: F::from_f(0.6109),
            throttle_gain: F::from_f(3.0),
            brake_gain: F::from_f(8.0),
            drag: F::from_f(0.05),
        }
    }
}

impl<F: Float> BicycleParams<F> {
    /// Turn radius at a constant steering command: `L / tan(delta_max * s)`.
    pub fn turn_radius(&self, steering: F) -> F {
        self.wheelbase / (self.max_wheel_angle * steering).tan()
    }
}

/// Advance the state by one physics step of `dt` seconds (semi-implicit:
/// speed first, then heading, then position under the updated heading).
pub fn step_vehicle<F: Float>(
    state: &VehicleState<F>,
    action: &Action<F>,
    dt: F,
    params: &BicycleParams<F>,
) -> Result<VehicleState<F>, VehicleError> {
    if !state.is_finite() {
        return Err(VehicleError::NonFiniteInput { context: "state" });
    }
    if !action.is_finite() {
        return Err(VehicleError::NonFiniteInput { context: "action" });
    }
    if !dt.is_finite() {
        return Err(VehicleError::NonFiniteInput { context: "dt" });
    }
    debug_assert!(dt > F::zero() && dt <= F::from_f(CONTROL_DT));
    let action = Action::new(action.steering, action.throttle, action.brake);

    let accel = params.throttle_gain * action.throttle - params.brake_gain * action.brake
        - params.drag * state.speed;
    let speed = (state.speed + accel * dt).max(F::zero());
    let yaw_rate = speed * (params.max_wheel_angle * action.steering).tan() / params.wheelbase;
    let yaw = wrap_angle(state.pose.yaw + yaw_rate * dt);
    let x = state.pose.x + speed * dt * yaw.cos();
    let y = state.pose.y + speed * dt * yaw.sin();

    Ok(VehicleState { pose: Pose { x, y, yaw }, speed })
}

/// Advance one full 10 Hz control period (five substeps, action held).
pub fn step_control_period<F: Float>(
    state: &VehicleState<F>,
    action: &Action<F>,
    params: &BicycleParams<F>,
) -> Result<VehicleState<F>, VehicleError> {
    let dt = F::from_f(PHYSICS_DT);
    let mut s = *state;
    for _ in 0..SUBSTEPS {
        s = step_vehicle(&s, action, dt, params)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> BicycleParams<f64> {
        BicycleParams::default()
    }

    /// Independent least-squares circle fit (Kasa method): minimizes the
    /// algebraic distance, solved by a 3x3 normal system.
    fn fit_circle(points: &[(f64, f64)]) -> (f64, f64, f64) {
        let n = points.len() as f64;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
        for &(x, y) in points {
            let z = x * x + y * y;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            sxz += x * z;
            syz += y * z;
            sz += z;
        }
        // Solve [sxx sxy sx; sxy syy sy; sx sy n] [a b c] = [sxz; syz; sz]
        let m = [[sxx, sxy, sx], [sxy, syy, sy], [sx, sy, n]];
        let rhs = [sxz, syz, sz];
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(&m);
        let mut sol = [0.0; 3];
        for k in 0..3 {
            let mut mk = m;
            for r in 0..3 {
                mk[r][k] = rhs[r];
            }
            sol[k] = det3(&mk) / d;
        }
        let (a, b, c) = (sol[0], sol[1], sol[2]);
        let cx = a / 2.0;
        let cy = b / 2.0;
        let r = (c + cx * cx + cy * cy).sqrt();
        (cx, cy, r)
    }

    #[test]
    fn straight_line_displacement() {
        // Throttle exactly balancing drag at 10 m/s: 0.05*10 / 3.0.
        let mut s = VehicleState {
            pose: Pose::new(0.0, 0.0, 0.0),
            speed: 10.0,
        };
        let a = Action::new(0.0, 0.05 * 10.0 / 3.0, 0.0);
        for _ in 0..10 {
            s = step_vehicle(&s, &a, 0.1, &params()).unwrap();
        }
        assert!((s.pose.x - 10.0).abs() < 1e-9, "x = {}", s.pose.x);
        assert_eq!(s.pose.y, 0.0);
        assert_eq!(s.pose.yaw, 0.0);
        assert!((s.speed - 10.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_rate_matches_model_equation() {
        // steering chosen so tan(delta_max * s) / L = 0.1 -> yaw rate 1.0 at 10 m/s.
        let p = params();
        let steering = (0.1f64 * p.wheelbase).atan() / p.max_wheel_angle;
        let s = VehicleState { pose: Pose::new(0.0, 0.0, 0.0), speed: 10.0 };
        // Hold speed constant by cancelling drag so the small-dt limit is exact.
        let a = Action::new(steering, 0.05 * 10.0 / 3.0, 0.0);
        let dt = 1e-7;
        let out = step_vehicle(&s, &a, dt, &p).unwrap();
        let rate = (out.pose.yaw - s.pose.yaw) / dt;
        assert!((rate - 1.0).abs() < 1e-6, "rate = {rate}");
    }

    #[test]
    fn constant_steering_traces_circle_of_model_radius() {
        let p = params();
        let steering = 0.5;
        let expected_r = p.turn_radius(steering);
        let speed = 6.0;
        let mut s = VehicleState { pose: Pose::new(0.0, 0.0, 0.0), speed };
        let a = Action::new(steering, 0.05 * speed / 3.0, 0.0);
        let mut pts = Vec::new();
        for _ in 0..100 {
            s = step_vehicle(&s, &a, 0.02, &p).unwrap();
            pts.push((s.pose.x, s.pose.y));
        }
        let (_, _, r) = fit_circle(&pts);
        let rel = (r - expected_r).abs() / expected_r;
        assert!(rel < 0.01, "fit radius {r}, model radius {expected_r}, rel {rel}");
    }

    #[test]
    fn full_brake_reaches_zero_and_stays() {
        let mut s = VehicleState { pose: Pose::new(0.0, 0.0, 1.0), speed: 12.0 };
        let a = Action::new(0.0, 0.0, 1.0);
        for _ in 0..200 {
            s = step_vehicle(&s, &a, 0.02, &params()).unwrap();
        }
        assert_eq!(s.speed, 0.0);
    }

    #[test]
    fn rejects_non_finite_input() {
        let s = VehicleState { pose: Pose::new(f64::NAN, 0.0, 0.0), speed: 1.0 };
        let a = Action::coast();
        assert!(matches!(
            step_vehicle(&s, &a, 0.02, &params()),
            Err(VehicleError::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn action_constructor_clamps() {
        let a = Action::new(1.5, -0.3, 2.0);
        assert_eq!(a.steering, 1.0);
        assert_eq!(a.throttle, 0.0);
        assert_eq!(a.brake, 1.0);
    }

    #[test]
    fn wrap_angle_is_half_open() {
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert!((wrap_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn speed_never_negative(speed in 0.0..15.0f64, throttle in 0.0..1.0f64, brake in 0.0..1.0f64) {
            let mut s = VehicleState { pose: Pose::new(0.0, 0.0, 0.0), speed };
            let a = Action::new(0.0, throttle, brake);
            for _ in 0..50 {
                s = step_vehicle(&s, &a, 0.02, &params()).unwrap();
                prop_assert!(s.speed >= 0.0);
            }
        }

        #[test]
        fn mirror_symmetry_about_initial_heading(
            steering in 0.05..1.0f64,
            throttle in 0.0..1.0f64,
            speed in 0.0..12.0f64,
        ) {
            let p = params();
            let mut a_state = VehicleState { pose: Pose::new(0.0, 0.0, 0.0), speed };
            let mut b_state = a_state;
            let a = Action::new(steering, throttle, 0.0);
            let b = Action::new(-steering, throttle, 0.0);
            for _ in 0..100 {
                a_state = step_vehicle(&a_state, &a, 0.02, &p).unwrap();
                b_state = step_vehicle(&b_state, &b, 0.02, &p).unwrap();
            }
            // Initial heading is +x, so mirroring flips y.
            prop_assert!((a_state.pose.x - b_state.pose.x).abs() < 1e-9);
            prop_assert!((a_state.pose.y + b_state.pose.y).abs() < 1e-9);
        }

        #[test]
        fn determinism_bitwise(steering in -1.0..1.0f64, speed in 0.0..12.0f64) {
            let p = params();
            let s = VehicleState { pose: Pose::new(1.0, -2.0, 0.5), speed };
            let a = Action::new(steering, 0.4, 0.0);
            let out1 = step_vehicle(&s, &a, 0.02, &p).unwrap();
            let out2 = step_vehicle(&s, &a, 0.02, &p).unwrap();
            prop_assert!(out1 == out2);
        }
    }
}
