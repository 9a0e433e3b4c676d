//! Lane-relative geometry queries and high-level command generation.

use super::geom::{point_segment_distance, Vec2};
use super::route::{Route, RoutePath, Turn};
use super::town::{TownMap, DEFAULT_LANE_WIDTH, DRIVABLE_MARGIN};
use super::{Command, WorldError};
use crate::vehicle::{wrap_angle, Pose};

/// Route lookaheads (meters) at which curvature is sampled.
pub const CURVATURE_LOOKAHEADS: [f64; 3] = [5.0, 10.0, 20.0];
/// Turn commands are issued within this distance of the junction.
pub const COMMAND_WINDOW: f64 = 25.0;
/// Poses farther than this from the route are off-route.
pub const OFF_ROUTE_DISTANCE: f64 = 20.0;
/// Upper clip for the distance-to-intersection feature.
pub const DIST_TO_INTERSECTION_CLIP: f64 = 50.0;

/// Lane-relative state features; the observation surrogate for a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneFrame {
    /// Signed offset from the route path, meters; left of the path positive.
    pub lateral_offset: f64,
    /// Heading minus path tangent, wrapped to (-pi, pi].
    pub heading_error: f64,
    /// Signed curvature (1/m) sampled at the route lookaheads.
    pub curvature_ahead: [f64; 3],
    /// Along-path distance to the next intersection, clipped to [0, 50].
    pub dist_to_intersection: f64,
    pub on_drivable: bool,
    pub on_opposing_lane: bool,
}

/// Projection of a point onto a route path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    /// Arclength of the nearest path point.
    pub s: f64,
    pub point: Vec2,
    pub tangent: Vec2,
    pub kappa: f64,
    /// Route-segment index the projection falls on.
    pub seg_index: usize,
    /// Unsigned distance from the query point to the path.
    pub distance: f64,
}

/// Nearest-point projection onto the path (linear scan over intervals; ties
/// resolve to the earliest interval).
pub fn project(path: &RoutePath, p: Vec2) -> PathProjection {
    let mut best_d = f64::INFINITY;
    let mut best = (0usize, 0.0f64);
    for i in 0..path.points.len() - 1 {
        let (d, t) = point_segment_distance(p, path.points[i], path.points[i + 1]);
        if d < best_d {
            best_d = d;
            best = (i, t);
        }
    }
    let (i, t) = best;
    let a = path.points[i];
    let b = path.points[i + 1];
    let tangent = (b - a).normalized();
    let len = a.dist(b);
    PathProjection {
        s: path.cum[i] + t * len,
        point: a + (b - a) * t,
        tangent,
        kappa: path.kappa[i],
        seg_index: path.seg[i],
        distance: best_d,
    }
}

/// Along-path distance to the next intersection (internal junction or the
/// final goal node), before clipping.
fn distance_to_next_intersection(path: &RoutePath, s: f64) -> f64 {
    for j in &path.junctions {
        if j.s >= s {
            return j.s - s;
        }
    }
    (path.total_length() - s).max(0.0)
}

/// Lane-relative observation features for a pose. Never fails: far-off-map
/// poses report `on_drivable = false` with offsets relative to the nearest
/// route point.
pub fn lane_frame(map: &TownMap, route: &Route, pose: &Pose<f64>) -> LaneFrame {
    debug_assert!(pose.is_finite());
    let p = Vec2::new(pose.x, pose.y);
    let path = route.path();
    let proj = project(path, p);

    let side = proj.tangent.cross(p - proj.point);
    let lateral_offset = if side >= 0.0 { proj.distance } else { -proj.distance };
    let heading_error = wrap_angle(pose.yaw - proj.tangent.angle());
    let curvature_ahead = [
        path.kappa_at(proj.s + CURVATURE_LOOKAHEADS[0]),
        path.kappa_at(proj.s + CURVATURE_LOOKAHEADS[1]),
        path.kappa_at(proj.s + CURVATURE_LOOKAHEADS[2]),
    ];
    let dist_to_intersection =
        distance_to_next_intersection(path, proj.s).clamp(0.0, DIST_TO_INTERSECTION_CLIP);

    let (nearest_seg, nearest_dist) = map.nearest_lane(p);
    let on_drivable = map.is_drivable(p);
    let current = map.segment(route.segments[proj.seg_index]);
    let on_opposing_lane = nearest_seg == current.opposing
        && nearest_dist <= DEFAULT_LANE_WIDTH / 2.0 + DRIVABLE_MARGIN;

    LaneFrame {
        lateral_offset,
        heading_error,
        curvature_ahead,
        dist_to_intersection,
        on_drivable,
        on_opposing_lane,
    }
}

/// High-level command for a pose on a route: a turn direction when within
/// 25 m of the next junction, `Continue` otherwise.
pub fn command_at(map: &TownMap, route: &Route, pose: &Pose<f64>) -> Result<Command, WorldError> {
    let _ = map;
    let p = Vec2::new(pose.x, pose.y);
    let path = route.path();
    let proj = project(path, p);
    if proj.distance > OFF_ROUTE_DISTANCE {
        return Err(WorldError::OffRoute { distance: proj.distance });
    }
    for j in &path.junctions {
        if j.s >= proj.s {
            if j.s - proj.s <= COMMAND_WINDOW {
                return Ok(match j.turn {
                    Turn::Left => Command::Left,
                    Turn::Straight => Command::Straight,
                    Turn::Right => Command::Right,
                });
            }
            break;
        }
    }
    Ok(Command::Continue)
}
