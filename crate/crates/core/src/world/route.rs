//! Route planning and route-path geometry.
//!
//! A route is an ordered list of directed lane segments. Its drivable path
//! concatenates the lane centerlines, replacing each turn at a junction by a
//! circular connector arc of radius 8 m tangent to both lanes (straight-
//! through junctions join exactly and need no connector).

use super::geom::Vec2;
use super::town::{Handedness, NodeId, Segment, SegmentId, TownMap, CONNECTOR_RADIUS, POLYLINE_STEP};
use super::WorldError;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Arclength of every turn connector (quarter circle of radius 8 m).
pub const TURN_ARC_LENGTH: f64 = CONNECTOR_RADIUS * std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    /// Classify the junction between two axis-ish travel directions.
    pub fn classify(dir_in: Vec2, dir_out: Vec2) -> Turn {
        let cross = dir_in.cross(dir_out);
        if cross > 0.5 {
            Turn::Left
        } else if cross < -0.5 {
            Turn::Right
        } else {
            Turn::Straight
        }
    }
}

/// A connector arc between an incoming and an outgoing lane at a node.
#[derive(Debug, Clone)]
pub(crate) struct ConnectorArc {
    pub points: Vec<Vec2>,
    /// Cut-back from the incoming lane's end point.
    pub trim_in: f64,
    /// Cut-back from the outgoing lane's start point.
    pub trim_out: f64,
    /// Signed curvature along the arc (+ left).
    pub kappa: f64,
}

/// Build the turn connector between two lanes meeting at `node`. The caller
/// guarantees the junction is an actual turn.
pub(crate) fn connector_arc(
    node: Vec2,
    seg_in: &Segment,
    seg_out: &Segment,
    handedness: Handedness,
) -> ConnectorArc {
    let d_in = seg_in.dir();
    let d_out = seg_out.dir();
    let turn = Turn::classify(d_in, d_out);
    debug_assert!(turn != Turn::Straight);

    let half = seg_in.width / 2.0;
    let in_end = node + handedness.lane_side(d_in) * half;
    let out_start = node + handedness.lane_side(d_out) * half;

    // Intersection of the two lane lines.
    let denom = d_in.cross(d_out);
    let t = (out_start - in_end).cross(d_out) / denom;
    let corner = in_end + d_in * t;

    let r = CONNECTOR_RADIUS;
    let trim_in = r - t;
    let u = (corner - out_start).dot(d_out);
    let trim_out = r + u;

    let p1 = corner - d_in * r;
    let p2 = corner + d_out * r;
    let (normal, sweep, kappa) = match turn {
        Turn::Left => (d_in.perp_left(), std::f64::consts::FRAC_PI_2, 1.0 / r),
        Turn::Right => (-d_in.perp_left(), -std::f64::consts::FRAC_PI_2, -1.0 / r),
        Turn::Straight => unreachable!(),
    };
    let center = p1 + normal * r;
    let a1 = (p1 - center).angle();

    let arc_len = r * std::f64::consts::FRAC_PI_2;
    let steps = (arc_len / 2.0).ceil() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let theta = a1 + sweep * (k as f64 / steps as f64);
        points.push(center + Vec2::new(theta.cos(), theta.sin()) * r);
    }
    debug_assert!(points.last().unwrap().dist(p2) < 1e-6);

    ConnectorArc { points, trim_in, trim_out, kappa }
}

/// An internal junction of a route: the along-path position of the
/// intersection and what the route does there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Junction {
    /// Along-path arclength where the junction region ends: the turn-arc
    /// exit point, or the node point for straight-through junctions.
    pub s: f64,
    pub turn: Turn,
    pub node: NodeId,
}

/// Drivable path geometry derived from a route's segment list.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    pub(crate) points: Vec<Vec2>,
    /// Cumulative arclength per point; `cum[0] == 0`.
    pub(crate) cum: Vec<f64>,
    /// Signed curvature per interval.
    pub(crate) kappa: Vec<f64>,
    /// Route-segment index per interval.
    pub(crate) seg: Vec<usize>,
    pub(crate) junctions: Vec<Junction>,
}

impl RoutePath {
    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn start_point(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end_point(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    pub fn start_tangent(&self) -> Vec2 {
        (self.points[1] - self.points[0]).normalized()
    }

    /// Curvature of the interval containing arclength `s` (0 beyond the
    /// ends).
    pub fn kappa_at(&self, s: f64) -> f64 {
        if s < 0.0 || s >= self.total_length() {
            return 0.0;
        }
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        self.kappa[i.min(self.kappa.len() - 1)]
    }

    /// Point at arclength `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let total = self.total_length();
        let s = s.clamp(0.0, total);
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 1),
            Err(i) => i - 1,
        };
        if i + 1 >= self.points.len() {
            return *self.points.last().unwrap();
        }
        let seg_len = self.cum[i + 1] - self.cum[i];
        let t = if seg_len > 0.0 { (s - self.cum[i]) / seg_len } else { 0.0 };
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }
}

/// Ordered segment ids from start to goal; `length` is the sum of segment
/// lengths (node-center to node-center), while the drivable path is slightly
/// shorter where turn arcs cut corners.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub segments: Vec<SegmentId>,
    pub length: f64,
    pub(crate) path: RoutePath,
}

impl Route {
    /// Assemble a route from an explicit segment chain.
    pub fn from_segments(map: &TownMap, segments: Vec<SegmentId>) -> Route {
        assert!(!segments.is_empty(), "route needs at least one segment");
        for w in segments.windows(2) {
            let a = map.segment(w[0]);
            let b = map.segment(w[1]);
            assert_eq!(a.to, b.from, "consecutive route segments must share an intersection");
        }
        let length = segments.iter().map(|id| map.segment(*id).length()).sum();
        let path = build_path(map, &segments);
        Route { segments, length, path }
    }

    pub fn path(&self) -> &RoutePath {
        &self.path
    }

    pub fn start_node(&self, map: &TownMap) -> NodeId {
        map.segment(self.segments[0]).from
    }

    pub fn goal_node(&self, map: &TownMap) -> NodeId {
        map.segment(*self.segments.last().unwrap()).to
    }
}

fn push_point(
    points: &mut Vec<Vec2>,
    kappa: &mut Vec<f64>,
    seg: &mut Vec<usize>,
    p: Vec2,
    interval_kappa: f64,
    interval_seg: usize,
) {
    if let Some(last) = points.last() {
        if last.dist(p) < 1e-9 {
            return;
        }
        kappa.push(interval_kappa);
        seg.push(interval_seg);
    }
    points.push(p);
}

fn build_path(map: &TownMap, segments: &[SegmentId]) -> RoutePath {
    let n = segments.len();
    // Per internal junction: the connector (None for straight-through).
    let mut arcs: Vec<Option<ConnectorArc>> = Vec::with_capacity(n.saturating_sub(1));
    for w in segments.windows(2) {
        let a = map.segment(w[0]);
        let b = map.segment(w[1]);
        let turn = Turn::classify(a.dir(), b.dir());
        if turn == Turn::Straight {
            arcs.push(None);
        } else {
            let node = map.node(a.to).position;
            arcs.push(Some(connector_arc(node, a, b, map.handedness)));
        }
    }

    let mut points = Vec::new();
    let mut kappa = Vec::new();
    let mut seg_of = Vec::new();
    // (point-index range of each junction region, turn, node)
    let mut junction_marks: Vec<(usize, usize, Turn, NodeId)> = Vec::new();

    for (i, id) in segments.iter().enumerate() {
        let s = map.segment(*id);
        let trim_start = if i > 0 {
            arcs[i - 1].as_ref().map_or(0.0, |a| a.trim_out)
        } else {
            0.0
        };
        let trim_end = if i < n - 1 {
            arcs[i].as_ref().map_or(0.0, |a| a.trim_in)
        } else {
            0.0
        };
        debug_assert!(trim_start + trim_end < s.length());
        let a = s.start() + s.dir() * trim_start;
        let b = s.end() - s.dir() * trim_end;
        let len = a.dist(b);
        let steps = (len / POLYLINE_STEP).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            push_point(&mut points, &mut kappa, &mut seg_of, a + (b - a) * t, 0.0, i);
        }

        if i < n - 1 {
            match &arcs[i] {
                Some(arc) => {
                    let first = points.len() - 1;
                    let mid = arc.points.len() / 2;
                    for (k, p) in arc.points.iter().enumerate() {
                        // Attribute the first half of the arc to the incoming
                        // segment, the rest to the outgoing one.
                        let owner = if k <= mid { i } else { i + 1 };
                        push_point(&mut points, &mut kappa, &mut seg_of, *p, arc.kappa, owner);
                    }
                    let last = points.len() - 1;
                    let turn = if arc.kappa > 0.0 { Turn::Left } else { Turn::Right };
                    junction_marks.push((first, last, turn, s.to));
                }
                None => {
                    let idx = points.len() - 1;
                    junction_marks.push((idx, idx, Turn::Straight, s.to));
                }
            }
        }
    }

    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += w[0].dist(w[1]);
        cum.push(acc);
    }

    let junctions = junction_marks
        .into_iter()
        .map(|(_, last, turn, node)| Junction { s: cum[last], turn, node })
        .collect();

    RoutePath { points, cum, kappa, seg: seg_of, junctions }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: NodeId,
    via: SegmentId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (dist, node, via) through BinaryHeap's max semantics.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.via.cmp(&self.via))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path by segment length; equal-length alternatives resolve to the
/// smallest incoming segment id at each node.
pub fn plan_route(map: &TownMap, start: NodeId, goal: NodeId) -> Result<Route, WorldError> {
    assert!((start.0 as usize) < map.node_count(), "start node out of range");
    assert!((goal.0 as usize) < map.node_count(), "goal node out of range");
    if start == goal {
        return Err(WorldError::SameNode { node: start });
    }

    const TIE_EPS: f64 = 1e-9;
    let n = map.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<SegmentId>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[start.0 as usize] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: start, via: SegmentId(u32::MAX) });

    while let Some(e) = heap.pop() {
        if e.dist > dist[e.node.0 as usize] + TIE_EPS {
            continue;
        }
        for seg_id in map.outgoing(e.node) {
            let s = map.segment(*seg_id);
            let nd = e.dist + s.length();
            let v = s.to.0 as usize;
            if nd < dist[v] - TIE_EPS {
                dist[v] = nd;
                pred[v] = Some(s.id);
                heap.push(HeapEntry { dist: nd, node: s.to, via: s.id });
            } else if (nd - dist[v]).abs() <= TIE_EPS {
                if let Some(p) = pred[v] {
                    if s.id < p {
                        pred[v] = Some(s.id);
                    }
                }
            }
        }
    }

    if pred[goal.0 as usize].is_none() {
        return Err(WorldError::Unreachable { start, goal });
    }
    let mut chain = Vec::new();
    let mut at = goal;
    while at != start {
        let seg = pred[at.0 as usize].expect("predecessor chain is complete");
        chain.push(seg);
        at = map.segment(seg).from;
    }
    chain.reverse();
    Ok(Route::from_segments(map, chain))
}
