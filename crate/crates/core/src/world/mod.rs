//! Procedural town road network, route planning, high-level commands, and
//! lane-relative geometry queries. Maps and routes are immutable after
//! construction; every operation here is pure.

pub mod frame;
pub mod geom;
pub mod route;
pub mod town;

pub use frame::{command_at, lane_frame, project, LaneFrame, PathProjection};
pub use frame::{COMMAND_WINDOW, CURVATURE_LOOKAHEADS, DIST_TO_INTERSECTION_CLIP, OFF_ROUTE_DISTANCE};
pub use geom::Vec2;
pub use route::{plan_route, Junction, Route, RoutePath, Turn, TURN_ARC_LENGTH};
pub use town::{
    build_town, Handedness, Intersection, NodeId, Segment, SegmentId, TownId, TownMap,
    CONNECTOR_RADIUS, DEFAULT_LANE_WIDTH, DRIVABLE_MARGIN,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("start and goal are the same node ({node})")]
    SameNode { node: NodeId },
    #[error("no path from node {start} to node {goal}")]
    Unreachable { start: NodeId, goal: NodeId },
    #[error("pose is {distance:.1} m from the route (limit 20 m)")]
    OffRoute { distance: f64 },
}

/// High-level navigation command issued by the planner ahead of
/// intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Continue,
    Straight,
    Left,
    Right,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Continue, Command::Straight, Command::Left, Command::Right];

    pub fn index(self) -> usize {
        match self {
            Command::Continue => 0,
            Command::Straight => 1,
            Command::Left => 2,
            Command::Right => 3,
        }
    }

    /// One-hot encoding as a 4-vector.
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Continue => "continue",
            Command::Straight => "straight",
            Command::Left => "left",
            Command::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        match s {
            "continue" => Some(Command::Continue),
            "straight" => Some(Command::Straight),
            "left" => Some(Command::Left),
            "right" => Some(Command::Right),
            _ => None,
        }
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_one_hot_is_single_one() {
        for c in Command::ALL {
            let v = c.one_hot();
            assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 1);
            assert_eq!(v.iter().filter(|x| **x == 0.0).count(), 3);
            assert_eq!(v[c.index()], 1.0);
        }
    }

    #[test]
    fn command_parse_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::parse(c.name()), Some(c));
        }
        assert_eq!(Command::parse("u-turn"), None);
    }
}
