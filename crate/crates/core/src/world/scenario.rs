//! Scenario snapshot types.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geometry::{norm, sub, Obb, Polygon, Pose, Vec2};
use crate::error::{Error, Result};
use crate::traj::{HORIZON, DT};
use crate::Trajectory;

/// Ego vehicle half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoFootprint {
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for EgoFootprint {
    fn default() -> Self {
        Self {
            half_length: 2.3,
            half_width: 1.0,
        }
    }
}

impl EgoFootprint {
    pub fn at(&self, pose: &Pose) -> Obb {
        Obb::new(pose.position, pose.heading, self.half_length, self.half_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Left,
    Straight,
    Right,
    Unknown,
}

impl Intent {
    pub const ALL: [Intent; 4] = [Intent::Left, Intent::Straight, Intent::Right, Intent::Unknown];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Light {
    Green,
    Red,
    None,
}

impl Light {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Scenario family produced by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    StraightFollow,
    LaneChange,
    Intersection,
    ObstacleAvoid,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::StraightFollow,
        Archetype::LaneChange,
        Archetype::Intersection,
        Archetype::ObstacleAvoid,
    ];

    /// Families with more than one feasible route; these receive
    /// route-level (inter-intent) expansion.
    pub fn is_challenging(self) -> bool {
        matches!(self, Archetype::LaneChange | Archetype::Intersection)
    }
}

/// Lane centerline. `route` names the manoeuvre that ends on this lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub points: Vec<Vec2>,
    pub open: bool,
    pub route: Intent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    /// `[half_length, half_width]`.
    pub extent: [f64; 2],
}

impl AgentState {
    /// Box after `t` seconds of constant-velocity motion.
    pub fn box_at(&self, t: f64) -> Obb {
        Obb::new(
            [
                self.position[0] + self.velocity[0] * t,
                self.position[1] + self.velocity[1] * t,
            ],
            self.heading,
            self.extent[0],
            self.extent[1],
        )
    }

    pub fn speed(&self) -> f64 {
        norm(self.velocity)
    }
}

/// Synthetic driving snapshot. The world frame coincides with the ego frame
/// at the current instant: ego at the origin heading along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub archetype: Archetype,
    pub ego_speed: f64,
    pub ego_accel: f64,
    pub intent: Intent,
    pub drivable: Polygon,
    pub centerlines: Vec<Centerline>,
    pub agents: Vec<AgentState>,
    pub light: Light,
    /// Stop line enforced while the light is red.
    pub stop_line: Option<[Vec2; 2]>,
    pub gt: Trajectory,
}

impl Scenario {
    pub fn validate(&self, footprint: &EgoFootprint) -> Result<()> {
        self.drivable.validate()?;
        if !super::inside_drivable(&Pose::default(), footprint, &self.drivable) {
            return Err(Error::invalid(format!(
                "scenario {}: ego origin footprint outside drivable area",
                self.id
            )));
        }
        if self.centerlines.is_empty() {
            return Err(Error::invalid("scenario needs at least one centerline"));
        }
        if self.centerlines.iter().any(|c| c.points.len() < 2) {
            return Err(Error::invalid("centerline needs at least 2 vertices"));
        }
        if !self.centerlines.iter().any(|c| c.open) {
            return Err(Error::invalid("scenario needs an open centerline"));
        }
        for a in &self.agents {
            if !(a.extent[0] > 0.0 && a.extent[1] > 0.0) {
                return Err(Error::invalid("agent extent must be positive"));
            }
            if !(a.heading > -PI && a.heading <= PI) {
                return Err(Error::invalid("agent heading must lie in (-pi, pi]"));
            }
        }
        if !(self.ego_speed.is_finite() && self.ego_accel.is_finite()) {
            return Err(Error::invalid("ego state must be finite"));
        }
        Ok(())
    }

    /// Open centerline whose route matches `intent`; falls back to the first
    /// centerline (the default route).
    pub fn route_for(&self, intent: Intent) -> &Centerline {
        self.centerlines
            .iter()
            .find(|c| c.open && c.route == intent && intent != Intent::Unknown)
            .unwrap_or(&self.centerlines[0])
    }

    pub fn open_centerlines(&self) -> impl Iterator<Item = &Centerline> {
        self.centerlines.iter().filter(|c| c.open)
    }
}

/// Ego poses at the `HORIZON` waypoint timestamps. Heading follows the
/// segment entering each waypoint; the first pose keeps heading 0, and a
/// (near) zero-length segment repeats the previous heading.
pub fn ego_poses(traj: &Trajectory) -> [Pose; HORIZON] {
    let pts = traj.with_origin();
    let mut poses = [Pose::default(); HORIZON];
    let mut heading = 0.0;
    for i in 1..=HORIZON {
        let p = [pts[i].x, pts[i].y];
        if i > 1 {
            let seg = sub(p, [pts[i - 1].x, pts[i - 1].y]);
            if norm(seg) > 1e-6 {
                heading = seg[1].atan2(seg[0]);
            }
        }
        poses[i - 1] = Pose {
            position: p,
            heading,
        };
    }
    poses
}

/// Timestamp of waypoint `i` (0-based).
pub fn waypoint_time(i: usize) -> f64 {
    (i + 1) as f64 * DT
}
