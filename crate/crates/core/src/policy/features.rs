use serde::{Deserialize, Serialize};

use crate::world::geometry::{point_at_arclength, project_onto_polyline, wrap_angle, Vec2};
use crate::world::{Intent, Light, Scenario};

pub const N_FEATURES: usize = 16;

/// Corridor half-width used to decide whether an agent is ahead of the ego.
const CORRIDOR: f64 = 2.5;
/// Offset beyond which a lane counts as an adjacent lane.
const ADJACENT: f64 = 1.75;

/// Structured context fed to the policy in place of camera input.
///
/// Layout: speed/10, accel/4, intent one-hot (4), light one-hot (3),
/// distance to nearest blocker ahead/50, closing speed/10, left open,
/// right open, curvature·10 at 5 m and 15 m along the route, bias.
/// A red light's stop line counts as a stationary blocker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextFeatures(pub [f64; N_FEATURES]);

impl ContextFeatures {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self::with_intent(s, s.intent)
    }

    /// Features with the intent prompt replaced by `intent`.
    pub fn with_intent(s: &Scenario, intent: Intent) -> Self {
        let mut f = [0.0; N_FEATURES];
        f[0] = s.ego_speed / 10.0;
        f[1] = s.ego_accel / 4.0;
        f[2 + intent.index()] = 1.0;
        f[6 + s.light.index()] = 1.0;

        let (dist, closing) = blocker_ahead(s);
        f[9] = (dist / 50.0).clamp(0.0, 1.0);
        f[10] = closing / 10.0;

        let (left, right) = adjacent_open(s);
        f[11] = left as u8 as f64;
        f[12] = right as u8 as f64;

        let route = &s.route_for(intent).points;
        f[13] = 10.0 * curvature_at(route, 5.0);
        f[14] = 10.0 * curvature_at(route, 15.0);
        f[15] = 1.0;
        Self(f)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Nearest agent (or red stop line) in the ego corridor ahead:
/// `(distance, closing speed)`; `(50, 0)` when nothing blocks.
fn blocker_ahead(s: &Scenario) -> (f64, f64) {
    let mut best = (50.0, 0.0);
    for a in &s.agents {
        let [x, y] = a.position;
        if x > 0.0 && y.abs() < CORRIDOR && x < best.0 {
            best = (x, s.ego_speed - a.velocity[0]);
        }
    }
    if let (Light::Red, Some([p, q])) = (s.light, s.stop_line) {
        let x = 0.5 * (p[0] + q[0]);
        if x > 0.0 && x < best.0 {
            best = (x, s.ego_speed);
        }
    }
    best
}

fn adjacent_open(s: &Scenario) -> (bool, bool) {
    let mut left = false;
    let mut right = false;
    for c in s.open_centerlines() {
        match c.route {
            Intent::Left => left = true,
            Intent::Right => right = true,
            _ => {}
        }
        let foot = project_onto_polyline(&c.points, [0.0, 0.0]);
        let (p, _) = point_at_arclength(&c.points, foot.s);
        if p[1] > ADJACENT {
            left = true;
        } else if p[1] < -ADJACENT {
            right = true;
        }
    }
    (left, right)
}

/// Signed curvature of a polyline around `ahead` meters past the origin's
/// projection (heading change over a 4 m chord).
fn curvature_at(points: &[Vec2], ahead: f64) -> f64 {
    let s0 = project_onto_polyline(points, [0.0, 0.0]).s;
    let (_, t0) = point_at_arclength(points, s0 + ahead - 2.0);
    let (_, t1) = point_at_arclength(points, s0 + ahead + 2.0);
    wrap_angle(t1[1].atan2(t1[0]) - t0[1].atan2(t0[0])) / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenarios, Archetype, Mix};

    #[test]
    fn one_hots_and_bias() {
        for s in generate_scenarios(3, 40, &Mix::default()).unwrap() {
            let f = ContextFeatures::from_scenario(&s).0;
            assert!(f.iter().all(|v| v.is_finite()));
            assert_eq!(f[2..6].iter().sum::<f64>(), 1.0);
            assert_eq!(f[6..9].iter().sum::<f64>(), 1.0);
            assert!(f[11] == 0.0 || f[11] == 1.0);
            assert!(f[12] == 0.0 || f[12] == 1.0);
            assert_eq!(f[15], 1.0);
        }
    }

    #[test]
    fn lane_change_sees_adjacent_lane() {
        for s in generate_scenarios(4, 10, &Mix::only(Archetype::LaneChange)).unwrap() {
            let f = ContextFeatures::from_scenario(&s).0;
            assert_eq!(f[11] + f[12], 1.0);
            assert_eq!(f[11] == 1.0, s.gt.last().y > 0.0);
        }
    }

    #[test]
    fn turn_routes_have_curvature() {
        for s in generate_scenarios(6, 10, &Mix::only(Archetype::Intersection)).unwrap() {
            let l = ContextFeatures::with_intent(&s, Intent::Left).0;
            let st = ContextFeatures::with_intent(&s, Intent::Straight).0;
            assert_eq!(st[13], 0.0);
            assert_eq!(st[14], 0.0);
            if s.route_for(Intent::Left).route == Intent::Left {
                assert!(l[14] > 0.3, "{:?}", l);
            }
        }
    }
}
