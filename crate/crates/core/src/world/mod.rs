//! Synthetic driving world: scenarios plus the kinematic predicates the
//! scorer is built on (collision, containment, progress, time-to-collision).
//!
//! Agents follow a constant-velocity model. Collision checks use oriented
//! boxes with a separating-axis test; the drivable area is a simple CCW
//! polygon with boundary-inclusive containment.

pub(crate) mod generate;
pub mod geometry;
mod scenario;

pub use generate::{generate_scenarios, generate_scenarios_with, scenario_seed, Mix, WorldConfig};
pub use geometry::{Obb, Polygon, Pose, Vec2};
pub use scenario::{
    ego_poses, waypoint_time, AgentState, Archetype, Centerline, EgoFootprint, Intent, Light,
    Scenario,
};

use geometry::{norm, project_onto_polyline, sub};

use crate::traj::DT;
use crate::Trajectory;

/// Longest look-ahead of the time-to-collision scan, seconds.
pub const TTC_HORIZON: f64 = 3.0;
/// Spacing of the time-to-collision grid, seconds.
pub const TTC_STEP: f64 = 0.1;

/// Agent boxes after `t` seconds of constant-velocity motion.
pub fn propagate_agents(scenario: &Scenario, t: f64) -> Vec<Obb> {
    scenario.agents.iter().map(|a| a.box_at(t)).collect()
}

pub fn collides(ego: &Pose, footprint: &EgoFootprint, boxes: &[Obb]) -> bool {
    let ego_box = footprint.at(ego);
    boxes.iter().any(|b| ego_box.overlaps(b))
}

/// True iff all four footprint corners lie in the polygon (boundary counts).
pub fn inside_drivable(ego: &Pose, footprint: &EgoFootprint, drivable: &Polygon) -> bool {
    footprint
        .at(ego)
        .corners()
        .iter()
        .all(|&c| drivable.contains(c))
}

/// Signed arc-length advance of the final waypoint over the origin.
pub fn signed_progress(centerline: &[Vec2], traj: &Trajectory) -> f64 {
    let last = traj.last();
    project_onto_polyline(centerline, [last.x, last.y]).s - project_onto_polyline(centerline, [0.0, 0.0]).s
}

/// Arc-length advance along `centerline`, clamped at zero.
pub fn progress_along(centerline: &[Vec2], traj: &Trajectory) -> f64 {
    signed_progress(centerline, traj).max(0.0)
}

/// Time-to-collision: from every waypoint timestamp the ego is held at the
/// velocity of its entering segment while agents keep moving; returns the
/// smallest grid time at which the boxes meet, or `TTC_HORIZON` if none.
pub fn min_ttc(traj: &Trajectory, scenario: &Scenario, footprint: &EgoFootprint) -> f64 {
    first_collision_within(traj, scenario, footprint, TTC_HORIZON).unwrap_or(TTC_HORIZON)
}

/// As [`min_ttc`], but only scans grid times `<= max_tau`; `None` when no
/// collision is found in that window.
pub fn first_collision_within(
    traj: &Trajectory,
    scenario: &Scenario,
    footprint: &EgoFootprint,
    max_tau: f64,
) -> Option<f64> {
    if scenario.agents.is_empty() {
        return None;
    }
    let pts = traj.with_origin();
    let poses = ego_poses(traj);
    let steps = ((max_tau.min(TTC_HORIZON) / TTC_STEP) + 1e-9).floor() as usize;
    let ego_r = footprint.half_length.hypot(footprint.half_width);
    let mut best: Option<usize> = None;
    for (i, pose) in poses.iter().enumerate() {
        let v = [
            (pts[i + 1].x - pts[i].x) / DT,
            (pts[i + 1].y - pts[i].y) / DT,
        ];
        let t0 = waypoint_time(i);
        let limit = best.map_or(steps, |b| b.saturating_sub(1).min(steps));
        let horizon = limit as f64 * TTC_STEP;
        let candidates: Vec<&AgentState> = scenario
            .agents
            .iter()
            .filter(|a| {
                let c = a.box_at(t0).center;
                let gap = norm(sub(c, pose.position));
                let reach = (norm(v) + a.speed()) * horizon + ego_r + a.extent[0].hypot(a.extent[1]);
                gap <= reach
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        for k in 0..=limit {
            let tau = k as f64 * TTC_STEP;
            let ego = Pose {
                position: [pose.position[0] + v[0] * tau, pose.position[1] + v[1] * tau],
                heading: pose.heading,
            };
            let ego_box = footprint.at(&ego);
            if candidates.iter().any(|a| ego_box.overlaps(&a.box_at(t0 + tau))) {
                best = Some(best.map_or(k, |b| b.min(k)));
                break;
            }
        }
        if best == Some(0) {
            break;
        }
    }
    best.map(|k| k as f64 * TTC_STEP)
}

/// Nearest open centerline to a point; ties keep the lowest index.
pub fn nearest_open_centerline(scenario: &Scenario, p: Vec2) -> Option<(usize, f64)> {
    scenario
        .centerlines
        .iter()
        .enumerate()
        .filter(|(_, c)| c.open)
        .map(|(i, c)| (i, project_onto_polyline(&c.points, p).dist))
        .fold(None, |acc, (i, d)| match acc {
            Some((_, bd)) if bd <= d => acc,
            _ => Some((i, d)),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::Waypoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_scenario() -> Scenario {
        Scenario {
            id: "t".into(),
            archetype: Archetype::StraightFollow,
            ego_speed: 0.0,
            ego_accel: 0.0,
            intent: Intent::Straight,
            drivable: Polygon::rect(-50.0, 200.0, -10.0, 10.0),
            centerlines: vec![Centerline {
                points: vec![[-50.0, 0.0], [200.0, 0.0]],
                open: true,
                route: Intent::Straight,
            }],
            agents: vec![],
            light: Light::None,
            stop_line: None,
            gt: Trajectory::stationary(),
        }
    }

    fn agent(pos: Vec2, vel: Vec2) -> AgentState {
        AgentState {
            position: pos,
            heading: 0.0,
            velocity: vel,
            extent: [2.3, 1.0],
        }
    }

    fn straight(speed: f64) -> Trajectory {
        let xy: Vec<_> = (1..=8).map(|i| (speed * DT * i as f64, 0.0)).collect();
        Trajectory::from_xy(&xy).unwrap()
    }

    #[test]
    fn propagate_examples() {
        let mut s = empty_scenario();
        s.agents = vec![agent([5.0, 1.0], [0.0, 0.0]), agent([0.0, 0.0], [2.0, 0.0]), agent([0.0, 0.0], [1.0, 1.0])];
        assert_eq!(propagate_agents(&s, 7.0)[0].center, [5.0, 1.0]);
        assert_eq!(propagate_agents(&s, 0.5)[1].center, [1.0, 0.0]);
        assert_eq!(propagate_agents(&s, 2.0)[2].center, [2.0, 2.0]);
    }

    #[test]
    fn collides_examples() {
        let fp = EgoFootprint::default();
        let ego = Pose::default();
        assert!(!collides(&ego, &fp, &[]));
        assert!(collides(&ego, &fp, &[Obb::new([0.0, 0.0], 1.0, 2.0, 1.0)]));
        let unit = EgoFootprint {
            half_length: 0.5,
            half_width: 0.5,
        };
        assert!(!collides(&ego, &unit, &[Obb::new([10.0, 0.0], 0.0, 0.5, 0.5)]));
    }

    #[test]
    fn inside_drivable_examples() {
        let fp = EgoFootprint::default();
        let square = Polygon::rect(-50.0, 50.0, -50.0, 50.0);
        let c = square.centroid();
        assert!(inside_drivable(&Pose { position: c, heading: 0.3 }, &fp, &square));
        assert!(!inside_drivable(&Pose { position: [80.0, 0.0], heading: 0.0 }, &fp, &square));
        // rear-right corner exactly on the bottom edge
        let edge = Pose {
            position: [0.0, -50.0 + fp.half_width],
            heading: 0.0,
        };
        assert!(inside_drivable(&edge, &fp, &square));
    }

    #[test]
    fn progress_examples() {
        let cl = [[-10.0, 0.0], [100.0, 0.0]];
        assert_eq!(progress_along(&cl, &Trajectory::stationary()), 0.0);
        let mut xy: Vec<_> = (1..=8).map(|i| (1.5 * i as f64, 0.0)).collect();
        xy[7] = (12.0, 0.3);
        assert!((progress_along(&cl, &Trajectory::from_xy(&xy).unwrap()) - 12.0).abs() < 1e-12);
        let back: Vec<_> = (1..=8).map(|i| (-(i as f64), 0.0)).collect();
        assert_eq!(progress_along(&cl, &Trajectory::from_xy(&back).unwrap()), 0.0);
    }

    #[test]
    fn ttc_examples() {
        let fp = EgoFootprint::default();
        let mut s = empty_scenario();
        assert_eq!(min_ttc(&straight(5.0), &s, &fp), 3.0);
        s.agents = vec![agent([100.0, 0.0], [0.0, 0.0])];
        assert_eq!(min_ttc(&Trajectory::stationary(), &s, &fp), 3.0);
        // ego closes at 10 m/s on a parked car whose rear bumper sits 5 m
        // beyond the ego's front bumper at the final waypoint
        let tr = straight(10.0);
        let front = tr.last().x + fp.half_length;
        s.agents = vec![agent([front + 5.0 + 2.3, 0.0], [0.0, 0.0])];
        let ttc = min_ttc(&tr, &s, &fp);
        assert!((ttc - 0.5).abs() <= 0.1 + 1e-9, "ttc {ttc}");
    }

    #[test]
    fn ttc_monotone_in_head_on_gap() {
        let fp = EgoFootprint::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let speed = rng.random_range(0.0..12.0);
            let closing = rng.random_range(1.0..15.0);
            let mut gaps: Vec<f64> = (0..6).map(|_| rng.random_range(5.0..120.0)).collect();
            gaps.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut prev = f64::INFINITY;
            for g in gaps {
                let mut s = empty_scenario();
                s.agents = vec![agent([g, 0.0], [-closing, 0.0])];
                let ttc = min_ttc(&straight(speed), &s, &fp);
                assert!(ttc <= prev + 1e-12, "gap {g}: {ttc} > {prev}");
                prev = ttc;
            }
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> Obb {
        Obb::new(
            [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)],
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.3..3.0),
            rng.random_range(0.3..2.0),
        )
    }

    fn sample_points(b: &Obb, n: usize) -> impl Iterator<Item = Vec2> + '_ {
        let [u, v] = b.axes();
        (0..n).flat_map(move |i| {
            (0..n).map(move |j| {
                let a = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let c = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                [
                    b.center[0] + u[0] * a * b.half_length + v[0] * c * b.half_width,
                    b.center[1] + u[1] * a * b.half_length + v[1] * c * b.half_width,
                ]
            })
        })
    }

    #[test]
    fn separating_axis_matches_point_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            // thin slivers are below the sampling resolution
            if a.penetration(&b).abs() < 0.05 {
                continue;
            }
            let sat = a.overlaps(&b);
            assert_eq!(sat, b.overlaps(&a));
            let brute = sample_points(&a, 100).any(|p| b.contains(p)) || sample_points(&b, 100).any(|p| a.contains(p));
            assert_eq!(sat, brute, "{a:?} {b:?}");
            checked += 1;
        }
    }

    #[test]
    fn containment_consistent_with_complement_boxes() {
        let fp = EgoFootprint::default();
        let poly = Polygon::rect(-20.0, 20.0, -5.0, 5.0);
        let complement = [
            Obb::new([0.0, 505.0], 0.0, 1000.0, 500.0),
            Obb::new([0.0, -505.0], 0.0, 1000.0, 500.0),
            Obb::new([520.0, 0.0], 0.0, 500.0, 1000.0),
            Obb::new([-520.0, 0.0], 0.0, 500.0, 1000.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let pose = Pose {
                position: [rng.random_range(-25.0..25.0), rng.random_range(-8.0..8.0)],
                heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            };
            assert_eq!(inside_drivable(&pose, &fp, &poly), !collides(&pose, &fp, &complement));
        }
    }

    #[test]
    fn ego_poses_follow_segments() {
        let xy: Vec<_> = (1..=8).map(|i| (i as f64, if i >= 2 { (i - 1) as f64 } else { 0.0 })).collect();
        let poses = ego_poses(&Trajectory::from_xy(&xy).unwrap());
        assert_eq!(poses[0].heading, 0.0);
        assert!((poses[3].heading - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let still = ego_poses(&Trajectory::stationary());
        assert!(still.iter().all(|p| p.heading == 0.0));
        let _ = Waypoint::new(0.0, 0.0);
    }
}
