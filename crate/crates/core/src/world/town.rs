//! Procedural grid towns: directed lane graph with centerline geometry.
//!
//! Town A is a 4x4 grid with 100 m blocks and right-hand traffic; Town B is a
//! 3x5 grid with 80 m blocks and mirrored (left-hand) turn geometry, serving
//! as the generalization environment. Corridors carry one directed lane per
//! direction, offset half a lane width to the driving side; intersections are
//! entered over circular-arc lane connectors of radius 8 m.

use super::geom::Vec2;
use super::route::{connector_arc, Turn};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
pub const CONNECTOR_RADIUS: f64 = 8.0;
/// Lane polylines are subdivided at this spacing (< 5 m contract).
pub const POLYLINE_STEP: f64 = 4.0;
/// Margin beyond the lane half-width that still counts as drivable.
pub const DRIVABLE_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TownId {
    A,
    B,
}

impl TownId {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "A" | "a" => Some(Self::A),
            "B" | "b" => Some(Self::B),
            _ => None,
        }
    }
}

impl fmt::Display for TownId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::A => write!(f, "A"),
            Self::B => write!(f, "B"),
        }
    }
}

/// Driving side; Town B mirrors Town A's turn geometry by driving on the
/// left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Handedness {
    Right,
    Left,
}

impl Handedness {
    /// Unit normal pointing to the driving side of a travel direction.
    pub fn lane_side(self, dir: Vec2) -> Vec2 {
        match self {
            Handedness::Right => -dir.perp_left(),
            Handedness::Left => dir.perp_left(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: NodeId,
    pub position: Vec2,
}

/// One directed lane between two intersections. Grid corridors are straight,
/// so the polyline is a straight chain from the `from` side to the `to` side.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: SegmentId,
    pub from: NodeId,
    pub to: NodeId,
    pub width: f64,
    pub polyline: Vec<Vec2>,
    pub opposing: SegmentId,
    length: f64,
    dir: Vec2,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Unit travel direction along the corridor axis.
    pub fn dir(&self) -> Vec2 {
        self.dir
    }

    pub fn start(&self) -> Vec2 {
        self.polyline[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.polyline.last().unwrap()
    }
}

/// Turn connector arc kept for drivable-area queries.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Connector {
    pub points: Vec<Vec2>,
    bb_min: Vec2,
    bb_max: Vec2,
}

impl Connector {
    fn new(points: Vec<Vec2>) -> Self {
        let mut bb_min = points[0];
        let mut bb_max = points[0];
        for p in &points {
            bb_min = Vec2::new(bb_min.x.min(p.x), bb_min.y.min(p.y));
            bb_max = Vec2::new(bb_max.x.max(p.x), bb_max.y.max(p.y));
        }
        Self { points, bb_min, bb_max }
    }

    fn lower_bound_distance(&self, p: Vec2) -> f64 {
        let dx = (self.bb_min.x - p.x).max(0.0).max(p.x - self.bb_max.x);
        let dy = (self.bb_min.y - p.y).max(0.0).max(p.y - self.bb_max.y);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        super::geom::point_polyline_distance(p, &self.points)
    }

    pub fn distance_if_below(&self, p: Vec2, bound: f64) -> Option<f64> {
        if self.lower_bound_distance(p) > bound {
            return None;
        }
        Some(self.distance(p))
    }
}

/// The driving environment: immutable after construction, safe to share
/// across concurrent episode runners.
#[derive(Debug, Clone, PartialEq)]
pub struct TownMap {
    pub town: TownId,
    pub seed: u64,
    pub block_length: f64,
    pub handedness: Handedness,
    pub intersections: Vec<Intersection>,
    pub segments: Vec<Segment>,
    /// Outgoing segments per node, sorted by segment id.
    outgoing: Vec<Vec<SegmentId>>,
    pub(crate) connectors: Vec<Connector>,
}

/// Build one of the built-in towns. Geometry is fully determined by the town
/// id; the seed is recorded for manifest provenance and reserved for future
/// procedural variation.
pub fn build_town(town: TownId, seed: u64) -> TownMap {
    let (cols, rows, block, handedness) = match town {
        TownId::A => (4usize, 4usize, 100.0, Handedness::Right),
        TownId::B => (3usize, 5usize, 80.0, Handedness::Left),
    };

    let mut intersections = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            intersections.push(Intersection {
                id: NodeId((j * cols + i) as u32),
                position: Vec2::new(i as f64 * block, j as f64 * block),
            });
        }
    }

    // Corridors in canonical order: per node, +x neighbor then +y neighbor.
    let mut corridors: Vec<(usize, usize)> = Vec::new();
    for j in 0..rows {
        for i in 0..cols {
            let n = j * cols + i;
            if i + 1 < cols {
                corridors.push((n, n + 1));
            }
            if j + 1 < rows {
                corridors.push((n, n + cols));
            }
        }
    }

    let mut segments = Vec::with_capacity(corridors.len() * 2);
    for (k, (a, b)) in corridors.iter().enumerate() {
        let fwd = SegmentId((2 * k) as u32);
        let rev = SegmentId((2 * k + 1) as u32);
        segments.push(make_lane(&intersections, *a, *b, fwd, rev, handedness));
        segments.push(make_lane(&intersections, *b, *a, rev, fwd, handedness));
    }

    let mut outgoing = vec![Vec::new(); intersections.len()];
    for s in &segments {
        outgoing[s.from.0 as usize].push(s.id);
    }
    for list in &mut outgoing {
        list.sort();
    }

    let mut map = TownMap {
        town,
        seed,
        block_length: block,
        handedness,
        intersections,
        segments,
        outgoing,
        connectors: Vec::new(),
    };
    map.connectors = build_connectors(&map);
    map
}

fn make_lane(
    intersections: &[Intersection],
    from: usize,
    to: usize,
    id: SegmentId,
    opposing: SegmentId,
    handedness: Handedness,
) -> Segment {
    let pa = intersections[from].position;
    let pb = intersections[to].position;
    let dir = (pb - pa).normalized();
    let offset = handedness.lane_side(dir) * (DEFAULT_LANE_WIDTH / 2.0);
    let length = pa.dist(pb);
    let steps = (length / POLYLINE_STEP).ceil() as usize;
    let mut polyline = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        polyline.push(pa + offset + (pb - pa) * t);
    }
    Segment {
        id,
        from: NodeId(from as u32),
        to: NodeId(to as u32),
        width: DEFAULT_LANE_WIDTH,
        polyline,
        opposing,
        length,
        dir,
    }
}

/// All legal turn arcs at every node (straight-through connections stay on
/// the lane lines and need no connector).
fn build_connectors(map: &TownMap) -> Vec<Connector> {
    let mut connectors = Vec::new();
    for node in &map.intersections {
        for seg_in in map.segments.iter().filter(|s| s.to == node.id) {
            for out_id in map.outgoing(node.id) {
                let seg_out = map.segment(*out_id);
                if seg_out.id == seg_in.opposing {
                    continue; // no U-turns
                }
                let turn = Turn::classify(seg_in.dir(), seg_out.dir());
                if turn == Turn::Straight {
                    continue;
                }
                let arc = connector_arc(node.position, seg_in, seg_out, map.handedness);
                connectors.push(Connector::new(arc.points));
            }
        }
    }
    connectors
}

impl TownMap {
    pub fn segment(&self, id: SegmentId) -> &Segment {
        &self.segments[id.0 as usize]
    }

    pub fn node(&self, id: NodeId) -> &Intersection {
        &self.intersections[id.0 as usize]
    }

    pub fn node_count(&self) -> usize {
        self.intersections.len()
    }

    /// Outgoing segment ids at a node, ascending.
    pub fn outgoing(&self, node: NodeId) -> &[SegmentId] {
        &self.outgoing[node.0 as usize]
    }

    /// Nearest lane segment to a point: (segment id, distance to its
    /// centerline).
    pub fn nearest_lane(&self, p: Vec2) -> (SegmentId, f64) {
        let mut best = (SegmentId(0), f64::INFINITY);
        for s in &self.segments {
            let (d, _) = super::geom::point_segment_distance(p, s.start(), s.end());
            if d < best.1 {
                best = (s.id, d);
            }
        }
        best
    }

    /// Distance to the nearest drivable centerline (lane or turn connector).
    pub fn drivable_distance(&self, p: Vec2) -> f64 {
        let (_, mut best) = self.nearest_lane(p);
        for c in &self.connectors {
            if let Some(d) = c.distance_if_below(p, best) {
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// Whether a point lies on the drivable surface (within half a lane
    /// width plus margin of some lane or connector centerline).
    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.drivable_distance(p) <= DEFAULT_LANE_WIDTH / 2.0 + DRIVABLE_MARGIN
    }

    /// JSON export, `driveval-town/1`.
    pub fn to_json(&self) -> String {
        let export = TownExport {
            format: "driveval-town/1",
            intersections: self
                .intersections
                .iter()
                .map(|i| IntersectionExport { id: i.id, x: i.position.x, y: i.position.y })
                .collect(),
            segments: self
                .segments
                .iter()
                .map(|s| SegmentExport {
                    id: s.id,
                    from: s.from,
                    to: s.to,
                    width: s.width,
                    polyline: s.polyline.iter().map(|p| [p.x, p.y]).collect(),
                    opposing: s.opposing,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&export).expect("town export serializes")
    }
}

#[derive(Serialize)]
struct TownExport {
    format: &'static str,
    intersections: Vec<IntersectionExport>,
    segments: Vec<SegmentExport>,
}

#[derive(Serialize)]
struct IntersectionExport {
    id: NodeId,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct SegmentExport {
    id: SegmentId,
    from: NodeId,
    to: NodeId,
    width: f64,
    polyline: Vec<[f64; 2]>,
    opposing: SegmentId,
}
