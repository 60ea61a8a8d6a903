//! Seeded scenario generator.
//!
//! Four families are produced: car following on a single lane (optionally
//! with a signalized stop line), discretionary lane changes on a two-lane
//! road, multi-branch intersections, and swerving around a parked vehicle.
//! Every ground truth is a smooth kinematic trajectory; candidates that do
//! not score a perfect PDMS are redrawn.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{point_at_arclength, project_onto_polyline, Polygon, Vec2};
use super::scenario::{AgentState, Archetype, Centerline, Intent, Light, Scenario};
use crate::error::{Error, Result};
use crate::scoring::{pdms_of, ScoringParams};
use crate::traj::{Waypoint, DT, HORIZON};
use crate::Trajectory;

pub const LANE_WIDTH: f64 = 3.5;
const ROAD_MARGIN: f64 = 1.0;
const TURN_RADIUS: f64 = 14.0;
const JUNCTION_HALF_WIDTH: f64 = 6.5;
const MAX_ATTEMPTS: usize = 200;

/// Fractions of each scenario family; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    pub straight_follow: f64,
    pub lane_change: f64,
    pub intersection: f64,
    pub obstacle_avoid: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Self {
            straight_follow: 0.3,
            lane_change: 0.25,
            intersection: 0.25,
            obstacle_avoid: 0.2,
        }
    }
}

impl Mix {
    pub fn only(a: Archetype) -> Self {
        let mut m = Self {
            straight_follow: 0.0,
            lane_change: 0.0,
            intersection: 0.0,
            obstacle_avoid: 0.0,
        };
        match a {
            Archetype::StraightFollow => m.straight_follow = 1.0,
            Archetype::LaneChange => m.lane_change = 1.0,
            Archetype::Intersection => m.intersection = 1.0,
            Archetype::ObstacleAvoid => m.obstacle_avoid = 1.0,
        }
        m
    }

    fn fractions(&self) -> [f64; 4] {
        [self.straight_follow, self.lane_change, self.intersection, self.obstacle_avoid]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("mix fractions must be finite and non-negative"));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mix fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> Archetype {
        let mut acc = 0.0;
        for (a, f) in Archetype::ALL.iter().zip(self.fractions()) {
            acc += f;
            if u < acc && f > 0.0 {
                return *a;
            }
        }
        // u landed in rounding slack at the top: last family with mass
        *Archetype::ALL
            .iter()
            .zip(self.fractions())
            .rev()
            .find(|(_, f)| *f > 0.0)
            .map(|(a, _)| a)
            .expect("validated mix has mass")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub mix: Mix,
}

/// Stable 64-bit mix of a base seed and a stream index (splitmix64).
pub fn scenario_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n` scenarios; output depends only on `(seed, n, mix)`.
pub fn generate_scenarios(seed: u64, n: usize, mix: &Mix) -> Result<Vec<Scenario>> {
    generate_scenarios_with(seed, n, mix, &ScoringParams::default())
}

/// As [`generate_scenarios`], accepting ground truths under `params`.
pub fn generate_scenarios_with(seed: u64, n: usize, mix: &Mix, params: &ScoringParams) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(Error::invalid("scenario count must be at least 1"));
    }
    mix.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, i as u64));
            let archetype = mix.pick(rng.random());
            let id = format!("s{seed:x}-{i:05}");
            for _ in 0..MAX_ATTEMPTS {
                let s = match archetype {
                    Archetype::StraightFollow => straight_follow(&mut rng, &id),
                    Archetype::LaneChange => lane_change(&mut rng, &id),
                    Archetype::Intersection => intersection(&mut rng, &id),
                    Archetype::ObstacleAvoid => obstacle_avoid(&mut rng, &id),
                };
                if accept(&s, params) {
                    return Ok(s);
                }
            }
            Err(Error::invalid(format!("could not build a feasible {archetype:?} scenario for {id}")))
        })
        .collect()
}

fn accept(s: &Scenario, params: &ScoringParams) -> bool {
    if s.validate(&params.footprint).is_err() || pdms_of(&s.gt, s, params) < 100.0 {
        return false;
    }
    if s.archetype.is_challenging() {
        let feasible_alternatives = alternative_routes(s)
            .iter()
            .filter(|(_, tr)| pdms_of(tr, s, params) >= 100.0)
            .count();
        return feasible_alternatives >= 1;
    }
    true
}

/// Arc length travelled after `t` seconds at initial speed `v0` and constant
/// acceleration `a`, stopping (not reversing) once speed reaches zero.
pub(crate) fn arc_length(v0: f64, a: f64, t: f64) -> f64 {
    if a < 0.0 {
        let t_stop = v0 / -a;
        if t >= t_stop {
            return v0 * v0 / (2.0 * -a);
        }
    }
    v0 * t + 0.5 * a * t * t
}

/// Waypoints following a polyline from the origin's projection, with the
/// travelled arc length at each timestamp given by `arc`.
pub(crate) fn follow_polyline(points: &[Vec2], arc: impl Fn(f64) -> f64) -> Trajectory {
    let s0 = project_onto_polyline(points, [0.0, 0.0]).s;
    let pts = (1..=HORIZON)
        .map(|i| {
            let (p, _) = point_at_arclength(points, s0 + arc(i as f64 * DT));
            Waypoint::new(p[0], p[1])
        })
        .collect();
    Trajectory::new(pts).expect("route waypoints are finite")
}

/// Arc length covered by the ground truth at each waypoint, interpolated
/// linearly in time (origin at `t = 0`).
pub(crate) fn gt_arc_profile(gt: &Trajectory) -> [f64; HORIZON + 1] {
    let pts = gt.with_origin();
    let mut prof = [0.0; HORIZON + 1];
    for i in 1..=HORIZON {
        prof[i] = prof[i - 1] + pts[i].dist(&pts[i - 1]);
    }
    prof
}

/// Trajectories that follow every other open route at the ground truth's
/// pace (2% faster, so progress never ties below the ground truth), tagged
/// with the route's intent.
pub(crate) fn alternative_routes(s: &Scenario) -> Vec<(Intent, Trajectory)> {
    let gt_last = s.gt.last();
    let gt_lane = crate::world::nearest_open_centerline(s, [gt_last.x, gt_last.y]).map(|(i, _)| i);
    let prof = gt_arc_profile(&s.gt);
    s.centerlines
        .iter()
        .enumerate()
        .filter(|(i, c)| c.open && Some(*i) != gt_lane)
        .map(|(_, c)| {
            let tr = follow_polyline(&c.points, |t| {
                let k = ((t / DT).round() as usize).min(HORIZON);
                prof[k] * 1.02
            });
            (c.route, tr)
        })
        // routes sharing the ground truth's geometry are not alternatives
        .filter(|(_, tr)| crate::traj::fde(tr, &s.gt).map(|d| d > 1.0).unwrap_or(false))
        .collect()
}

/// Quintic smoothstep on `[0, 1]`.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

fn lateral_shift(v0: f64, a: f64, offset: f64, t0: f64, dur: f64) -> Trajectory {
    let pts = (1..=HORIZON)
        .map(|i| {
            let t = i as f64 * DT;
            Waypoint::new(arc_length(v0, a, t), offset * smoothstep((t - t0) / dur))
        })
        .collect();
    Trajectory::new(pts).expect("finite")
}

fn straight_line(y: f64, x0: f64, x1: f64) -> Vec<Vec2> {
    vec![[x0, y], [x1, y]]
}

fn vehicle(position: Vec2, heading: f64, speed: f64) -> AgentState {
    let (s, c) = heading.sin_cos();
    AgentState {
        position,
        heading,
        velocity: [speed * c, speed * s],
        extent: [2.3, 1.0],
    }
}

fn straight_follow(rng: &mut ChaCha8Rng, id: &str) -> Scenario {
    let half = LANE_WIDTH / 2.0 + ROAD_MARGIN;
    let v0: f64 = rng.random_range(6.5..9.0);
    let light = match rng.random::<f64>() {
        u if u < 0.6 => Light::None,
        u if u < 0.8 => Light::Green,
        _ => Light::Red,
    };
    let mut agents = Vec::new();
    let mut stop_line = None;
    let accel;
    if light == Light::Red {
        let decel: f64 = rng.random_range(1.2..2.4);
        let stop = v0 * v0 / (2.0 * decel) + rng.random_range(2.5..4.0);
        stop_line = Some([[stop, -half], [stop, half]]);
        accel = -decel;
    } else {
        if light == Light::Green {
            let at = rng.random_range(15.0..40.0);
            stop_line = Some([[at, -half], [at, half]]);
        }
        if rng.random_bool(0.7) {
            let gap = rng.random_range(16.0..40.0);
            let lead_speed = (v0 + rng.random_range(-3.0..1.0)).max(0.0);
            agents.push(vehicle([gap, 0.0], 0.0, lead_speed));
            accel = if lead_speed < v0 {
                (-(v0 - lead_speed) / 4.0).max(-1.5)
            } else {
                rng.random_range(0.0..0.5)
            };
        } else {
            accel = rng.random_range(-0.3..0.6);
        }
    }
    if rng.random_bool(0.3) {
        // parked car well behind
        agents.push(vehicle([rng.random_range(-25.0..-10.0), 0.0], 0.0, 0.0));
    }
    let gt = lateral_shift(v0, accel, 0.0, 0.0, 1.0);
    Scenario {
        id: id.to_string(),
        archetype: Archetype::StraightFollow,
        ego_speed: v0,
        ego_accel: accel,
        intent: Intent::Straight,
        drivable: Polygon::rect(-30.0, 250.0, -half, half),
        centerlines: vec![Centerline {
            points: straight_line(0.0, -30.0, 250.0),
            open: true,
            route: Intent::Straight,
        }],
        agents,
        light,
        stop_line,
        gt,
    }
}

fn two_lane_road(side: f64) -> (Polygon, Vec<Centerline>) {
    let outer = LANE_WIDTH / 2.0 + ROAD_MARGIN;
    let (lo, hi) = if side > 0.0 {
        (-outer, LANE_WIDTH + outer)
    } else {
        (-LANE_WIDTH - outer, outer)
    };
    let lanes = vec![
        Centerline {
            points: straight_line(0.0, -30.0, 250.0),
            open: true,
            route: Intent::Straight,
        },
        Centerline {
            points: straight_line(side * LANE_WIDTH, -30.0, 250.0),
            open: true,
            route: Intent::Straight,
        },
    ];
    (Polygon::rect(-30.0, 250.0, lo, hi), lanes)
}

fn lane_change(rng: &mut ChaCha8Rng, id: &str) -> Scenario {
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let v0: f64 = rng.random_range(7.0..9.0);
    let accel: f64 = rng.random_range(-0.2..0.3);
    let (drivable, centerlines) = two_lane_road(side);
    let mut agents = Vec::new();
    if rng.random_bool(0.5) {
        // slower traffic far behind in the target lane
        agents.push(vehicle([rng.random_range(-28.0..-18.0), side * LANE_WIDTH], 0.0, v0 - 2.0));
    }
    if rng.random_bool(0.5) {
        // traffic far ahead in the current lane at matching speed
        agents.push(vehicle([rng.random_range(45.0..70.0), 0.0], 0.0, v0 + 1.0));
    }
    let gt = lateral_shift(v0, accel, side * LANE_WIDTH, rng.random_range(0.0..0.3), rng.random_range(3.2..3.6));
    Scenario {
        id: id.to_string(),
        archetype: Archetype::LaneChange,
        ego_speed: v0,
        ego_accel: accel,
        intent: Intent::Straight,
        drivable,
        centerlines,
        agents,
        light: Light::None,
        stop_line: None,
        gt,
    }
}

fn obstacle_avoid(rng: &mut ChaCha8Rng, id: &str) -> Scenario {
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let v0: f64 = rng.random_range(6.5..8.5);
    let (drivable, centerlines) = two_lane_road(side);
    let gap = rng.random_range(24.0..32.0);
    let agents = vec![vehicle([gap, rng.random_range(-0.3..0.3) - side * 0.2], 0.0, 0.0)];
    let gt = lateral_shift(v0, 0.0, side * LANE_WIDTH, 0.0, rng.random_range(3.0..3.5));
    Scenario {
        id: id.to_string(),
        archetype: Archetype::ObstacleAvoid,
        ego_speed: v0,
        ego_accel: 0.0,
        intent: Intent::Straight,
        drivable,
        centerlines,
        agents,
        light: Light::None,
        stop_line: None,
        gt,
    }
}

fn arc_points(center: Vec2, radius: f64, from: f64, to: f64) -> Vec<Vec2> {
    let n = 24;
    (0..=n)
        .map(|k| {
            let a = from + (to - from) * k as f64 / n as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect()
}

fn turn_route(c: f64, dir: f64) -> Vec<Vec2> {
    let r = TURN_RADIUS;
    let mut pts = vec![[-30.0, 0.0]];
    let center = [c - r, dir * r];
    // left: from -π/2 to 0 around (c-r, r); right: from π/2 to 0 around (c-r, -r)
    pts.extend(arc_points(center, r, -dir * FRAC_PI_2, 0.0));
    pts.push([c, dir * 60.0]);
    pts
}

fn intersection(rng: &mut ChaCha8Rng, id: &str) -> Scenario {
    let c: f64 = rng.random_range(20.0..28.0);
    let a = JUNCTION_HALF_WIDTH;
    let drivable = Polygon {
        vertices: vec![
            [-30.0, -a],
            [c - a, -a],
            [c - a, -60.0],
            [c + a, -60.0],
            [c + a, -a],
            [c + 60.0, -a],
            [c + 60.0, a],
            [c + a, a],
            [c + a, 60.0],
            [c - a, 60.0],
            [c - a, a],
            [-30.0, a],
        ],
    };
    let mut left_open = rng.random_bool(0.6);
    let right_open = rng.random_bool(0.6);
    if !left_open && !right_open {
        left_open = true;
    }
    let centerlines = vec![
        Centerline {
            points: straight_line(0.0, -30.0, c + 60.0),
            open: true,
            route: Intent::Straight,
        },
        Centerline {
            points: turn_route(c, 1.0),
            open: left_open,
            route: Intent::Left,
        },
        Centerline {
            points: turn_route(c, -1.0),
            open: right_open,
            route: Intent::Right,
        },
    ];
    let mut agents = Vec::new();
    if !left_open {
        agents.push(vehicle([c, rng.random_range(22.0..30.0)], -FRAC_PI_2, 0.0));
    }
    if !right_open {
        agents.push(vehicle([c, -rng.random_range(22.0..30.0)], FRAC_PI_2, 0.0));
    }
    let open_routes: Vec<Intent> = centerlines.iter().filter(|l| l.open).map(|l| l.route).collect();
    let route = open_routes[rng.random_range(0..open_routes.len())];
    let intent = if route == Intent::Straight && rng.random_bool(0.3) {
        Intent::Unknown
    } else {
        route
    };
    let light = if rng.random_bool(0.5) { Light::Green } else { Light::None };
    let v0: f64 = rng.random_range(4.5..5.5);
    let accel = if route == Intent::Straight { rng.random_range(0.0..0.5) } else { 0.0 };
    let lane = centerlines.iter().find(|l| l.route == route).expect("route exists");
    let gt = follow_polyline(&lane.points, |t| arc_length(v0, accel, t));
    Scenario {
        id: id.to_string(),
        archetype: Archetype::Intersection,
        ego_speed: v0,
        ego_accel: accel,
        intent,
        drivable,
        centerlines,
        agents,
        light,
        stop_line: None,
        gt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::pdms_of;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate_scenarios(9, 12, &Mix::default()).unwrap();
        let b = generate_scenarios(9, 12, &Mix::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_scenarios(10, 12, &Mix::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn straight_only_mix() {
        let s = generate_scenarios(1, 4, &Mix::only(Archetype::StraightFollow)).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|s| s.intent == Intent::Straight && s.archetype == Archetype::StraightFollow));
    }

    #[test]
    fn rejects_bad_mix_and_zero_count() {
        let mut m = Mix::default();
        m.lane_change += 0.1;
        assert!(generate_scenarios(1, 4, &m).is_err());
        assert!(generate_scenarios(1, 0, &Mix::default()).is_err());
    }

    #[test]
    fn every_ground_truth_scores_full_pdms() {
        let p = ScoringParams::default();
        for s in generate_scenarios(21, 120, &Mix::default()).unwrap() {
            assert!(s.validate(&p.footprint).is_ok());
            assert_eq!(pdms_of(&s.gt, &s, &p), 100.0, "{}", s.id);
        }
    }

    #[test]
    fn multi_route_families_have_distinct_feasible_routes() {
        let p = ScoringParams::default();
        for a in [Archetype::LaneChange, Archetype::Intersection] {
            for s in generate_scenarios(5, 20, &Mix::only(a)).unwrap() {
                let alts: Vec<_> = alternative_routes(&s)
                    .into_iter()
                    .filter(|(_, t)| pdms_of(t, &s, &p) >= 100.0)
                    .collect();
                assert!(!alts.is_empty(), "{}", s.id);
                assert!(alts.iter().all(|(_, t)| crate::traj::fde(t, &s.gt).unwrap() > 1.0));
            }
        }
    }

    #[test]
    fn seed_mixing_is_stable() {
        assert_eq!(scenario_seed(0, 0), scenario_seed(0, 0));
        assert_ne!(scenario_seed(0, 1), scenario_seed(1, 0));
    }
}
