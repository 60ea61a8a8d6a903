//! Driving scores: PDMS, EPDMS and the focal-style spanning reward.
//!
//! Every score has the same shape: a product of binary safety constraints
//! times a weighted mean of graded objectives. The spanning reward passes
//! each objective through `1 - (1 - m)^γ` before averaging, which stretches
//! the reward range near the optimum when `γ < 1`.
//!
//! Sub-metric predicates are evaluated on the synthetic world:
//!
//! | metric | rule |
//! |--------|------|
//! | `nc`   | no ego/agent box overlap at any waypoint |
//! | `dac`  | all footprint corners inside the drivable polygon at every waypoint |
//! | `ddc`  | non-negative progress along the committed lane and heading within 90° of its tangent |
//! | `tlc`  | never crosses the stop line while the light is red |
//! | `ep`   | progress relative to the ground truth's progress (floored at 0.1 m), clipped to `[0, 1]` |
//! | `ttc`  | time-to-collision at least 0.95 s |
//! | `c`    | finite-difference acceleration ≤ 4 m/s² and jerk ≤ 8 m/s³ |
//! | `lk`   | fraction of waypoints within 1.75 m of an open centerline |
//! | `ec`   | absent (needs two planning frames) |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::traj::{DT, HORIZON};
use crate::world::geometry::{dot, project_onto_polyline, segments_intersect, Vec2};
use crate::world::{
    collides, ego_poses, first_collision_within, inside_drivable, nearest_open_centerline,
    propagate_agents, signed_progress, waypoint_time, EgoFootprint, Light, Scenario,
};
use crate::Trajectory;

/// PDMS and EPDMS are reported on `[0, 100]`; rewards live on `[0, 1]`.
pub const SCORE_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nc,
    Dac,
    Ddc,
    Tlc,
    Ep,
    Ttc,
    C,
    Lk,
    Ec,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Nc => "nc",
            Metric::Dac => "dac",
            Metric::Ddc => "ddc",
            Metric::Tlc => "tlc",
            Metric::Ep => "ep",
            Metric::Ttc => "ttc",
            Metric::C => "c",
            Metric::Lk => "lk",
            Metric::Ec => "ec",
        }
    }
}

/// Per-scenario constraint and objective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores<T: Scalar> {
    pub nc: T,
    pub dac: T,
    pub ddc: T,
    pub tlc: T,
    pub ep: T,
    pub ttc: T,
    pub c: T,
    pub lk: T,
    pub ec: Option<T>,
}

impl<T: Scalar> SubScores<T> {
    /// Every metric at its best value, `ec` absent.
    pub fn perfect() -> Self {
        let one = T::one();
        Self {
            nc: one,
            dac: one,
            ddc: one,
            tlc: one,
            ep: one,
            ttc: one,
            c: one,
            lk: one,
            ec: None,
        }
    }

    pub fn get(&self, m: Metric) -> Option<T> {
        match m {
            Metric::Nc => Some(self.nc),
            Metric::Dac => Some(self.dac),
            Metric::Ddc => Some(self.ddc),
            Metric::Tlc => Some(self.tlc),
            Metric::Ep => Some(self.ep),
            Metric::Ttc => Some(self.ttc),
            Metric::C => Some(self.c),
            Metric::Lk => Some(self.lk),
            Metric::Ec => self.ec,
        }
    }

    pub fn set(&mut self, m: Metric, v: T) {
        match m {
            Metric::Nc => self.nc = v,
            Metric::Dac => self.dac = v,
            Metric::Ddc => self.ddc = v,
            Metric::Tlc => self.tlc = v,
            Metric::Ep => self.ep = v,
            Metric::Ttc => self.ttc = v,
            Metric::C => self.c = v,
            Metric::Lk => self.lk = v,
            Metric::Ec => self.ec = Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Pdms,
    Epdms,
    Sdr,
}

/// Weight/exponent tables selecting one of the three scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: ScoreMode,
    pub weights: BTreeMap<Metric, f64>,
    /// Focal exponents; metrics without an entry are averaged untransformed.
    #[serde(default)]
    pub gammas: BTreeMap<Metric, f64>,
    pub constraints: Vec<Metric>,
    pub metrics: Vec<Metric>,
}

impl RewardConfig {
    pub fn pdms() -> Self {
        use Metric::*;
        Self {
            mode: ScoreMode::Pdms,
            weights: [(Ep, 5.0), (Ttc, 5.0), (C, 2.0)].into(),
            gammas: BTreeMap::new(),
            constraints: vec![Nc, Dac],
            metrics: vec![Ep, Ttc, C],
        }
    }

    /// EPDMS; with `include_ec = false` the two-frame comfort term is dropped
    /// and the weight denominator shrinks from 16 to 14.
    pub fn epdms(include_ec: bool) -> Self {
        use Metric::*;
        let mut metrics = vec![Ep, Ttc, C, Lk];
        let mut weights: BTreeMap<Metric, f64> = [(Ep, 5.0), (Ttc, 5.0), (C, 2.0), (Lk, 2.0)].into();
        if include_ec {
            metrics.push(Ec);
            weights.insert(Ec, 2.0);
        }
        Self {
            mode: ScoreMode::Epdms,
            weights,
            gammas: BTreeMap::new(),
            constraints: vec![Nc, Dac, Ddc, Tlc],
            metrics,
        }
    }

    /// Spanning driving reward: EPDMS structure without `ec`, focal
    /// exponents 0.5 on progress and time-to-collision.
    pub fn sdr() -> Self {
        use Metric::*;
        Self {
            mode: ScoreMode::Sdr,
            weights: [(Ep, 5.0), (Ttc, 5.0), (C, 2.0), (Lk, 2.0)].into(),
            gammas: [(Ep, 0.5), (Ttc, 0.5), (C, 1.0), (Lk, 1.0)].into(),
            constraints: vec![Nc, Dac, Ddc, Tlc],
            metrics: vec![Ep, Ttc, C, Lk],
        }
    }

    pub fn with_gammas(mut self, gamma: f64) -> Self {
        for m in self.metrics.clone() {
            self.gammas.insert(m, gamma);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.metrics {
            match self.weights.get(m) {
                Some(w) if *w > 0.0 && w.is_finite() => {}
                _ => return Err(Error::invalid(format!("weight for {} must be > 0", m.name()))),
            }
        }
        if self.gammas.values().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("focal exponents must be > 0"));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid("metric set is empty"));
        }
        Ok(())
    }
}

fn focal<T: Scalar>(m: T, gamma: Option<f64>) -> T {
    match gamma {
        Some(g) if g != 1.0 => T::one() - (T::one() - m).powf(T::lit(g)),
        Some(_) => T::one() - (T::one() - m),
        None => m,
    }
}

/// Constraint product times the (optionally focal-transformed) weighted
/// mean, on `[0, 1]`.
pub fn aggregate<T: Scalar>(sub: &SubScores<T>, cfg: &RewardConfig) -> Result<T> {
    cfg.validate()?;
    let mut product = T::one();
    for &m in &cfg.constraints {
        let v = sub.get(m).ok_or_else(|| Error::MissingMetric(m.name().into()))?;
        check_unit(m, v)?;
        product *= v;
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for &m in &cfg.metrics {
        let v = sub.get(m).ok_or_else(|| Error::MissingMetric(m.name().into()))?;
        check_unit(m, v)?;
        let w = T::lit(cfg.weights[&m]);
        num += w * focal(v, cfg.gammas.get(&m).copied());
        den += w;
    }
    Ok(product * num / den)
}

fn check_unit<T: Scalar>(m: Metric, v: T) -> Result<()> {
    if v.is_finite() && v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::invalid(format!("metric {} = {v} outside [0, 1]", m.name())))
    }
}

fn require_mode(cfg: &RewardConfig, mode: ScoreMode) -> Result<()> {
    if cfg.mode == mode {
        Ok(())
    } else {
        Err(Error::invalid(format!("expected {mode:?} config, got {:?}", cfg.mode)))
    }
}

/// PDMS on `[0, 100]`.
pub fn pdms<T: Scalar>(sub: &SubScores<T>, cfg: &RewardConfig) -> Result<T> {
    require_mode(cfg, ScoreMode::Pdms)?;
    Ok(aggregate(sub, cfg)? * T::lit(SCORE_SCALE))
}

/// EPDMS on `[0, 100]`.
pub fn epdms<T: Scalar>(sub: &SubScores<T>, cfg: &RewardConfig) -> Result<T> {
    require_mode(cfg, ScoreMode::Epdms)?;
    Ok(aggregate(sub, cfg)? * T::lit(SCORE_SCALE))
}

/// Spanning driving reward on `[0, 1]`.
pub fn sdr<T: Scalar>(sub: &SubScores<T>, cfg: &RewardConfig) -> Result<T> {
    require_mode(cfg, ScoreMode::Sdr)?;
    aggregate(sub, cfg)
}

/// Any mode mapped onto `[0, 1]` for use as an RL reward.
pub fn reward<T: Scalar>(sub: &SubScores<T>, cfg: &RewardConfig) -> Result<T> {
    aggregate(sub, cfg)
}

/// Thresholds behind the sub-metric predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringParams {
    pub footprint: EgoFootprint,
    pub ttc_threshold: f64,
    pub max_accel: f64,
    pub max_jerk: f64,
    pub lane_half_width: f64,
    pub ep_floor: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            footprint: EgoFootprint::default(),
            ttc_threshold: 0.95,
            max_accel: 4.0,
            max_jerk: 8.0,
            lane_half_width: 1.75,
            ep_floor: 0.1,
        }
    }
}

/// Progress along the open centerline nearest to the final waypoint.
pub fn committed_progress(traj: &Trajectory, scenario: &Scenario) -> f64 {
    let last = traj.last();
    match nearest_open_centerline(scenario, [last.x, last.y]) {
        Some((i, _)) => signed_progress(&scenario.centerlines[i].points, traj),
        None => 0.0,
    }
}

/// Finite-difference comfort check, seeded with the ego's current velocity.
pub fn comfortable(traj: &Trajectory, ego_speed: f64, max_accel: f64, max_jerk: f64) -> bool {
    let pts = traj.with_origin();
    let mut vel: Vec<Vec2> = Vec::with_capacity(HORIZON + 1);
    vel.push([ego_speed, 0.0]);
    for w in pts.windows(2) {
        vel.push([(w[1].x - w[0].x) / DT, (w[1].y - w[0].y) / DT]);
    }
    let acc: Vec<Vec2> = vel
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / DT, (w[1][1] - w[0][1]) / DT])
        .collect();
    if acc.iter().any(|a| a[0].hypot(a[1]) > max_accel) {
        return false;
    }
    acc.windows(2).all(|w| {
        let j = [(w[1][0] - w[0][0]) / DT, (w[1][1] - w[0][1]) / DT];
        j[0].hypot(j[1]) <= max_jerk
    })
}

/// Evaluates every sub-metric of `traj` in `scenario`.
pub fn evaluate_subscores(traj: &Trajectory, scenario: &Scenario, p: &ScoringParams) -> SubScores<f64> {
    let poses = ego_poses(traj);
    let fp = &p.footprint;
    let b = |ok: bool| if ok { 1.0 } else { 0.0 };

    let nc = poses.iter().enumerate().all(|(i, pose)| {
        scenario.agents.is_empty() || !collides(pose, fp, &propagate_agents(scenario, waypoint_time(i)))
    });
    let dac = poses.iter().all(|pose| inside_drivable(pose, fp, &scenario.drivable));

    let last = traj.last();
    let committed = nearest_open_centerline(scenario, [last.x, last.y]).map(|(i, _)| &scenario.centerlines[i]);
    let ddc = match committed {
        Some(cl) => {
            signed_progress(&cl.points, traj) >= 0.0
                && poses.iter().all(|pose| {
                    let pr = project_onto_polyline(&cl.points, pose.position);
                    let (s, c) = pose.heading.sin_cos();
                    dot([c, s], pr.tangent) >= 0.0
                })
        }
        None => false,
    };

    let tlc = match (scenario.light, scenario.stop_line) {
        (Light::Red, Some([a, bb])) => {
            let pts = traj.with_origin();
            !pts.windows(2).any(|w| segments_intersect([w[0].x, w[0].y], [w[1].x, w[1].y], a, bb))
        }
        _ => true,
    };

    let reference = committed_progress(&scenario.gt, scenario).max(p.ep_floor);
    let ep = (committed_progress(traj, scenario).max(0.0) / reference).clamp(0.0, 1.0);

    let ttc = first_collision_within(traj, scenario, fp, p.ttc_threshold - 1e-9).is_none();
    let c = comfortable(traj, scenario.ego_speed, p.max_accel, p.max_jerk);

    let within = poses
        .iter()
        .filter(|pose| {
            nearest_open_centerline(scenario, pose.position).is_some_and(|(_, d)| d <= p.lane_half_width)
        })
        .count();
    let lk = within as f64 / HORIZON as f64;

    SubScores {
        nc: b(nc),
        dac: b(dac),
        ddc: b(ddc),
        tlc: b(tlc),
        ep,
        ttc: b(ttc),
        c: b(c),
        lk,
        ec: None,
    }
}

/// PDMS of a trajectory in a scenario, `[0, 100]`.
pub fn pdms_of(traj: &Trajectory, scenario: &Scenario, p: &ScoringParams) -> f64 {
    pdms(&evaluate_subscores(traj, scenario, p), &RewardConfig::pdms()).expect("pdms config is valid")
}

/// One row of a score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scenario_id: String,
    pub sub: SubScores<f64>,
    pub pdms: f64,
    /// EPDMS with the two-frame comfort term excluded.
    pub epdms: f64,
    pub sdr: f64,
}

pub fn score_record(traj: &Trajectory, scenario: &Scenario, p: &ScoringParams) -> ScoreRecord {
    let sub = evaluate_subscores(traj, scenario, p);
    ScoreRecord {
        scenario_id: scenario.id.clone(),
        pdms: pdms(&sub, &RewardConfig::pdms()).expect("valid"),
        epdms: epdms(&sub, &RewardConfig::epdms(false)).expect("valid"),
        sdr: sdr(&sub, &RewardConfig::sdr()).expect("valid"),
        sub,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Archetype, Centerline, Intent, Polygon};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subs(f: impl FnOnce(&mut SubScores<f64>)) -> SubScores<f64> {
        let mut s = SubScores::perfect();
        f(&mut s);
        s
    }

    #[test]
    fn pdms_examples() {
        let cfg = RewardConfig::pdms();
        assert!((pdms(&SubScores::<f64>::perfect(), &cfg).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(pdms(&subs(|s| s.nc = 0.0), &cfg).unwrap(), 0.0);
        let human = subs(|s| {
            s.ep = 0.875;
            s.c = 0.999;
        });
        let v = pdms(&human, &cfg).unwrap();
        assert!((v - 94.775).abs() < 1e-9, "{v}");
        assert!((v - 94.8).abs() < 0.1);
    }

    #[test]
    fn pdms_rejects_other_mode_and_missing() {
        assert!(pdms(&SubScores::<f64>::perfect(), &RewardConfig::sdr()).is_err());
        let mut cfg = RewardConfig::pdms();
        cfg.metrics.push(Metric::Ec);
        cfg.weights.insert(Metric::Ec, 2.0);
        assert!(matches!(pdms(&SubScores::<f64>::perfect(), &cfg), Err(Error::MissingMetric(_))));
    }

    #[test]
    fn epdms_examples() {
        let with_ec = RewardConfig::epdms(true);
        let full = subs(|s| s.ec = Some(1.0));
        assert!((epdms(&full, &with_ec).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(epdms(&subs(|s| {
            s.ec = Some(1.0);
            s.tlc = 0.0;
        }), &with_ec).unwrap(), 0.0);
        assert!(matches!(epdms(&SubScores::<f64>::perfect(), &with_ec), Err(Error::MissingMetric(_))));
        let v = epdms(&subs(|s| s.ep = 0.5), &RewardConfig::epdms(false)).unwrap();
        assert!((v - 100.0 * 11.5 / 14.0).abs() < 1e-9);
        assert!((v - 82.14).abs() < 0.01);
    }

    #[test]
    fn sdr_examples() {
        let cfg = RewardConfig::sdr();
        assert!((sdr(&SubScores::<f64>::perfect(), &cfg).unwrap() - 1.0).abs() < 1e-12);
        let v = sdr(&subs(|s| s.ep = 0.5), &cfg).unwrap();
        let expect = (5.0 * (1.0 - 0.5f64.sqrt()) + 9.0) / 14.0;
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.7475).abs() < 1e-4);
        assert!(sdr(&subs(|s| s.ep = 1.2), &cfg).is_err());
        assert!(sdr(&subs(|s| s.lk = -0.1), &cfg).is_err());
    }

    #[test]
    fn sdr_with_unit_gamma_is_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sdr1 = RewardConfig::sdr().with_gammas(1.0);
        let mean = RewardConfig::epdms(false);
        for _ in 0..1000 {
            let mut s = SubScores::<f64>::perfect();
            for m in [Metric::Ep, Metric::Ttc, Metric::C, Metric::Lk] {
                s.set(m, rng.random());
            }
            for m in [Metric::Nc, Metric::Dac, Metric::Ddc, Metric::Tlc] {
                s.set(m, if rng.random_bool(0.8) { 1.0 } else { 0.0 });
            }
            let a = sdr(&s, &sdr1).unwrap();
            let b = epdms(&s, &mean).unwrap() / SCORE_SCALE;
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn scores_are_monotone_in_every_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfgs = [RewardConfig::pdms(), RewardConfig::epdms(false), RewardConfig::sdr()];
        let all = [Metric::Nc, Metric::Dac, Metric::Ddc, Metric::Tlc, Metric::Ep, Metric::Ttc, Metric::C, Metric::Lk];
        for _ in 0..2000 {
            let mut s = SubScores::<f64>::perfect();
            for m in all {
                s.set(m, rng.random());
            }
            let m = all[rng.random_range(0..all.len())];
            let mut raised = s;
            raised.set(m, s.get(m).unwrap() + (1.0 - s.get(m).unwrap()) * rng.random::<f64>());
            for cfg in &cfgs {
                assert!(aggregate(&raised, cfg).unwrap() >= aggregate(&s, cfg).unwrap() - 1e-15);
            }
        }
    }

    #[test]
    fn zero_constraint_zeroes_every_score() {
        for m in [Metric::Nc, Metric::Dac, Metric::Ddc, Metric::Tlc] {
            let s = subs(|s| s.set(m, 0.0));
            assert_eq!(aggregate(&s, &RewardConfig::sdr()).unwrap(), 0.0);
            assert_eq!(aggregate(&s, &RewardConfig::epdms(false)).unwrap(), 0.0);
        }
    }

    #[test]
    fn focal_transform_spans_near_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = |m: f64| focal(m, Some(0.5));
        for _ in 0..5000 {
            let a: f64 = rng.random_range(0.8..1.0);
            let b: f64 = rng.random_range(0.8..1.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi - lo < 1e-9 {
                continue;
            }
            assert!(t(hi) - t(lo) > hi - lo);
        }
    }

    #[test]
    fn single_precision_scores() {
        let s = SubScores::<f32> {
            ep: 0.875,
            c: 0.999,
            ..SubScores::perfect()
        };
        assert!((pdms(&s, &RewardConfig::pdms()).unwrap() - 94.775f32).abs() < 1e-3);
    }

    fn road() -> Scenario {
        Scenario {
            id: "road".into(),
            archetype: Archetype::StraightFollow,
            ego_speed: 0.0,
            ego_accel: 0.0,
            intent: Intent::Straight,
            drivable: Polygon::rect(-30.0, 200.0, -2.75, 2.75),
            centerlines: vec![Centerline {
                points: vec![[-30.0, 0.0], [200.0, 0.0]],
                open: true,
                route: Intent::Straight,
            }],
            agents: vec![],
            light: Light::None,
            stop_line: None,
            gt: Trajectory::from_xy(&(1..=8).map(|i| (2.0 * i as f64, 0.0)).collect::<Vec<_>>()).unwrap(),
        }
    }

    #[test]
    fn stationary_trajectory_in_empty_scene() {
        let s = road();
        let sub = evaluate_subscores(&Trajectory::stationary(), &s, &ScoringParams::default());
        assert_eq!((sub.nc, sub.dac, sub.ttc, sub.c), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(sub.ep, 0.0);
        assert!(sub.ec.is_none());
    }

    #[test]
    fn leaving_the_road_fails_dac() {
        let mut s = road();
        s.ego_speed = 4.0;
        let xy: Vec<_> = (1..=8).map(|i| (2.0 * i as f64, if i >= 3 { 4.0 } else { 0.0 })).collect();
        let sub = evaluate_subscores(&Trajectory::from_xy(&xy).unwrap(), &s, &ScoringParams::default());
        assert_eq!(sub.dac, 0.0);
    }

    #[test]
    fn red_light_crossing_fails_tlc() {
        let mut s = road();
        s.ego_speed = 4.0;
        s.light = Light::Red;
        s.stop_line = Some([[10.0, -2.75], [10.0, 2.75]]);
        let sub = evaluate_subscores(&s.gt.clone(), &s, &ScoringParams::default());
        assert_eq!(sub.tlc, 0.0);
        s.light = Light::Green;
        assert_eq!(evaluate_subscores(&s.gt.clone(), &s, &ScoringParams::default()).tlc, 1.0);
    }

    #[test]
    fn comfort_thresholds() {
        let smooth = Trajectory::from_xy(&(1..=8).map(|i| (5.0 * i as f64, 0.0)).collect::<Vec<_>>()).unwrap();
        assert!(comfortable(&smooth, 10.0, 4.0, 8.0));
        assert!(!comfortable(&smooth, 0.0, 4.0, 8.0));
        let mut xy: Vec<_> = (1..=8).map(|i| (5.0 * i as f64, 0.0)).collect();
        xy[4].1 = 0.4;
        assert!(!comfortable(&Trajectory::from_xy(&xy).unwrap(), 10.0, 4.0, 8.0));
    }

    #[test]
    fn reversing_fails_driving_direction() {
        let mut s = road();
        s.ego_speed = 0.0;
        let xy: Vec<_> = (1..=8).map(|i| (-0.2 * i as f64, 0.0)).collect();
        let sub = evaluate_subscores(&Trajectory::from_xy(&xy).unwrap(), &s, &ScoringParams::default());
        assert_eq!(sub.ddc, 0.0);
        assert_eq!(sub.ep, 0.0);
    }
}
