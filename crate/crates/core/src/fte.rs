//! Feasible trajectory expansion: perturbed and re-routed candidates,
//! a PDMS safety filter, greedy geometric diversity selection, and
//! assembly of the supervision dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{pdms_of, ScoringParams};
use crate::traj::{fde, fit_step_stats, Waypoint, DT, HORIZON};
use crate::world::generate::alternative_routes;
use crate::world::geometry::{norm, scale, sub, Vec2};
use crate::world::{scenario_seed, Intent, Scenario};
use crate::{StepStats, Trajectory};

/// Knot times of the displacement spline, seconds.
const KNOTS: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FteConfig {
    /// Turn expansion off to get a ground-truth-only dataset.
    pub enabled: bool,
    pub k_gen: usize,
    pub sigma_lat: f64,
    pub sigma_lon: f64,
    pub pdms_threshold: f64,
    pub require_ge_gt: bool,
    /// FDE margin for diversity selection, meters.
    pub delta: f64,
    pub max_keep: usize,
}

impl Default for FteConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k_gen: 32,
            sigma_lat: 0.8,
            sigma_lon: 1.5,
            pdms_threshold: 95.0,
            require_ge_gt: true,
            delta: 0.5,
            max_keep: 4,
        }
    }
}

impl FteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pdms_threshold > 0.0 && self.pdms_threshold <= 100.0) {
            return Err(Error::invalid("fte pdms threshold must lie in (0, 100]"));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::invalid("fte delta must be > 0"));
        }
        if !(self.sigma_lat >= 0.0 && self.sigma_lon >= 0.0) {
            return Err(Error::invalid("fte noise scales must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gt,
    ExpandedIntra,
    ExpandedInter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub trajectory: Trajectory,
    pub source: Source,
    /// Intent prompt the candidate answers.
    pub intent: Intent,
}

/// A candidate with its PDMS.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub candidate: Candidate,
    pub pdms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionSample {
    pub scenario_id: String,
    pub source: Source,
    pub intent: Intent,
    pub trajectory: Trajectory,
    pub pdms: f64,
}

/// Cubic spline through `(KNOTS[i], v[i])` with zero slope at the first
/// knot and zero curvature at the last.
#[derive(Debug, Clone)]
pub struct DisplacementSpline {
    v: [f64; 5],
    m: [f64; 5],
}

impl DisplacementSpline {
    pub fn new(v: [f64; 5]) -> Self {
        // unit knot spacing; unknowns m0..m3, m4 = 0
        let n = 4;
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        let mut c = [0.0; 4];
        let mut r = [0.0; 4];
        b[0] = 2.0;
        c[0] = 1.0;
        r[0] = 6.0 * (v[1] - v[0]);
        for i in 1..n {
            a[i] = 1.0;
            b[i] = 4.0;
            c[i] = 1.0;
            r[i] = 6.0 * (v[i + 1] - 2.0 * v[i] + v[i - 1]);
        }
        // Thomas algorithm
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            r[i] -= w * r[i - 1];
        }
        let mut m = [0.0; 5];
        m[n - 1] = r[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (r[i] - c[i] * m[i + 1]) / b[i];
        }
        Self { v, m }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = (t.floor() as usize).min(KNOTS.len() - 2);
        let (t0, t1) = (KNOTS[i], KNOTS[i + 1]);
        let (a, b) = (t1 - t, t - t0);
        self.m[i] * a.powi(3) / 6.0
            + self.m[i + 1] * b.powi(3) / 6.0
            + (self.v[i] - self.m[i] / 6.0) * a
            + (self.v[i + 1] - self.m[i + 1] / 6.0) * b
    }
}

/// Unit tangents of the ground truth at each waypoint (central differences,
/// origin included; zero-length stretches keep the previous direction).
fn local_frames(gt: &Trajectory) -> Vec<Vec2> {
    let pts: Vec<Vec2> = gt.with_origin().iter().map(|w| [w.x, w.y]).collect();
    let mut prev = [1.0, 0.0];
    (1..=HORIZON)
        .map(|i| {
            let next = pts[(i + 1).min(HORIZON)];
            let d = sub(next, pts[i - 1]);
            let n = norm(d);
            if n > 1e-6 {
                prev = scale(d, 1.0 / n);
            }
            prev
        })
        .collect()
}

/// Ground truth displaced by independent longitudinal and lateral splines.
pub fn perturb(gt: &Trajectory, lon: &DisplacementSpline, lat: &DisplacementSpline) -> Trajectory {
    let frames = local_frames(gt);
    let pts = gt
        .points()
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(i, (w, t))| {
            let time = (i + 1) as f64 * DT;
            let (dl, dn) = (lon.eval(time), lat.eval(time));
            Waypoint::new(w.x + dl * t[0] - dn * t[1], w.y + dl * t[1] + dn * t[0])
        })
        .collect();
    Trajectory::new(pts).expect("perturbation keeps waypoints finite")
}

/// Intra-intent perturbations of the ground truth, then route-level
/// alternatives for families that offer them.
pub fn generate_candidates<R: Rng + ?Sized>(scenario: &Scenario, cfg: &FteConfig, rng: &mut R) -> Vec<Candidate> {
    let lon_n = Normal::new(0.0, cfg.sigma_lon).expect("validated sigma");
    let lat_n = Normal::new(0.0, cfg.sigma_lat).expect("validated sigma");
    let mut out = Vec::with_capacity(cfg.k_gen + 2);
    for _ in 0..cfg.k_gen {
        let mut knots = |n: &Normal<f64>| {
            let mut v = [0.0; 5];
            for k in &mut v[1..] {
                *k = n.sample(rng);
            }
            DisplacementSpline::new(v)
        };
        let lon = knots(&lon_n);
        let lat = knots(&lat_n);
        out.push(Candidate {
            trajectory: perturb(&scenario.gt, &lon, &lat),
            source: Source::ExpandedIntra,
            intent: scenario.intent,
        });
    }
    if scenario.archetype.is_challenging() {
        for (route, tr) in alternative_routes(scenario) {
            // an Unknown prompt stays Unknown only for the default route
            let intent = if route == Intent::Straight && scenario.intent == Intent::Unknown {
                Intent::Unknown
            } else {
                route
            };
            out.push(Candidate {
                trajectory: tr,
                source: Source::ExpandedInter,
                intent,
            });
        }
    }
    out
}

/// Candidates scoring above the threshold and, if required, at least the
/// ground truth's PDMS.
pub fn safety_filter(candidates: Vec<Candidate>, scenario: &Scenario, cfg: &FteConfig, params: &ScoringParams) -> Vec<Scored> {
    let gt_pdms = pdms_of(&scenario.gt, scenario, params);
    candidates
        .into_iter()
        .map(|c| Scored {
            pdms: pdms_of(&c.trajectory, scenario, params),
            candidate: c,
        })
        .filter(|s| s.pdms > cfg.pdms_threshold && (!cfg.require_ge_gt || s.pdms >= gt_pdms))
        .collect()
}

/// Greedy FDE-separated subset: candidates near the ground truth are
/// dropped, the rest are visited by PDMS (high first), then FDE to the
/// ground truth (far first), then input order.
pub fn diversity_select(survivors: Vec<Scored>, gt: &Trajectory, cfg: &FteConfig) -> Vec<Scored> {
    let mut pool: Vec<(f64, Scored)> = survivors
        .into_iter()
        .map(|s| (fde(&s.candidate.trajectory, gt).expect("equal lengths"), s))
        .filter(|(d, _)| *d >= cfg.delta)
        .collect();
    pool.sort_by(|(da, a), (db, b)| b.pdms.total_cmp(&a.pdms).then(db.total_cmp(da)));
    let mut kept: Vec<Scored> = Vec::new();
    for (_, s) in pool {
        if kept.len() >= cfg.max_keep {
            break;
        }
        let clear = kept.iter().all(|k| {
            fde(&k.candidate.trajectory, &s.candidate.trajectory).expect("equal lengths") >= cfg.delta
        });
        if clear {
            kept.push(s);
        }
    }
    kept
}

/// Ground truth plus selected expansions for one scenario.
pub fn expand_scenario<R: Rng + ?Sized>(
    scenario: &Scenario,
    cfg: &FteConfig,
    params: &ScoringParams,
    rng: &mut R,
) -> Vec<SupervisionSample> {
    let mut out = vec![SupervisionSample {
        scenario_id: scenario.id.clone(),
        source: Source::Gt,
        intent: scenario.intent,
        trajectory: scenario.gt.clone(),
        pdms: pdms_of(&scenario.gt, scenario, params),
    }];
    if cfg.enabled && cfg.max_keep > 0 {
        let survivors = safety_filter(generate_candidates(scenario, cfg, rng), scenario, cfg, params);
        out.extend(diversity_select(survivors, &scenario.gt, cfg).into_iter().map(|s| SupervisionSample {
            scenario_id: scenario.id.clone(),
            source: s.candidate.source,
            intent: s.candidate.intent,
            trajectory: s.candidate.trajectory,
            pdms: s.pdms,
        }));
    }
    out
}

/// Supervision samples for every scenario, in scenario order, plus the
/// step statistics fitted over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SftDataset {
    pub samples: Vec<SupervisionSample>,
    pub stats: StepStats,
}

pub fn build_sft_dataset(scenarios: &[Scenario], cfg: &FteConfig, params: &ScoringParams, seed: u64) -> Result<SftDataset> {
    cfg.validate()?;
    let per: Vec<Vec<SupervisionSample>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, i as u64));
            expand_scenario(s, cfg, params, &mut rng)
        })
        .collect();
    let samples: Vec<SupervisionSample> = per.into_iter().flatten().collect();
    let stats = fit_step_stats(samples.iter().map(|s| &s.trajectory))?;
    Ok(SftDataset { samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenarios, Archetype, Mix};

    fn line(y_end: f64) -> Trajectory {
        Trajectory::from_xy(&(1..=8).map(|t| (t as f64, y_end * t as f64 / 8.0)).collect::<Vec<_>>()).unwrap()
    }

    fn scored(tr: Trajectory, pdms: f64) -> Scored {
        Scored {
            candidate: Candidate {
                trajectory: tr,
                source: Source::ExpandedIntra,
                intent: Intent::Straight,
            },
            pdms,
        }
    }

    #[test]
    fn spline_interpolates_with_flat_start_and_natural_end() {
        let v = [0.0, 1.0, -0.5, 2.0, 0.3];
        let s = DisplacementSpline::new(v);
        for (k, t) in KNOTS.iter().enumerate() {
            assert!((s.eval(*t) - v[k]).abs() < 1e-12);
        }
        let h = 1e-5;
        assert!(((s.eval(h) - s.eval(0.0)) / h).abs() < 1e-4);
        let curv = (s.eval(4.0) - 2.0 * s.eval(4.0 - h) + s.eval(4.0 - 2.0 * h)) / (h * h);
        assert!(curv.abs() < 1e-3, "{curv}");
        // continuity of the first derivative at an interior knot
        let left = (s.eval(2.0) - s.eval(2.0 - h)) / h;
        let right = (s.eval(2.0 + h) - s.eval(2.0)) / h;
        assert!((left - right).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let s = &generate_scenarios(1, 3, &Mix::only(Archetype::StraightFollow)).unwrap()[0];
        let cfg = FteConfig {
            sigma_lat: 0.0,
            sigma_lon: 0.0,
            ..FteConfig::default()
        };
        let c = generate_candidates(s, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c.len(), 32);
        assert!(c.iter().all(|c| c.trajectory == s.gt));
    }

    #[test]
    fn candidates_are_seeded() {
        let s = &generate_scenarios(2, 1, &Mix::default()).unwrap()[0];
        let cfg = FteConfig::default();
        let a = generate_candidates(s, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let b = generate_candidates(s, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn lane_change_alternatives_end_near_the_other_lane() {
        let cfg = FteConfig::default();
        for s in generate_scenarios(3, 10, &Mix::only(Archetype::LaneChange)).unwrap() {
            let inter: Vec<_> = generate_candidates(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
                .into_iter()
                .filter(|c| c.source == Source::ExpandedInter)
                .collect();
            assert!(!inter.is_empty());
            let gt_y = s.gt.last().y;
            for c in inter {
                // the other lane is the ego lane at y = 0
                let y = c.trajectory.last().y;
                assert!(y.abs() <= 1.75, "{} vs gt {gt_y}", y);
            }
        }
    }

    #[test]
    fn safety_filter_rules() {
        let p = ScoringParams::default();
        let s = &generate_scenarios(4, 1, &Mix::default()).unwrap()[0];
        let off_road = Trajectory::from_xy(&[(0.0, 60.0); 8]).unwrap();
        let cands = vec![
            Candidate {
                trajectory: s.gt.clone(),
                source: Source::Gt,
                intent: s.intent,
            },
            Candidate {
                trajectory: off_road,
                source: Source::ExpandedIntra,
                intent: s.intent,
            },
        ];
        let strict = FteConfig {
            pdms_threshold: 100.0,
            ..FteConfig::default()
        };
        let kept = safety_filter(cands.clone(), s, &FteConfig::default(), &p);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].candidate.source, Source::Gt);
        // a threshold of 100 excludes everything: PDMS must exceed it
        assert!(safety_filter(cands, s, &strict, &p).is_empty());
    }

    #[test]
    fn diversity_select_examples() {
        let cfg = FteConfig::default();
        let gt = line(0.0);
        assert!(diversity_select(vec![scored(line(0.2), 100.0), scored(line(-0.4), 99.0)], &gt, &cfg).is_empty());

        let kept = diversity_select(vec![scored(line(1.0), 100.0), scored(line(2.0), 100.0)], &gt, &cfg);
        assert_eq!(kept.len(), 2);

        // final points 1.0, 1.3, 1.6 m off the ground truth: spacing 0.6·δ
        let kept = diversity_select(
            vec![scored(line(1.0), 100.0), scored(line(1.3), 100.0), scored(line(1.6), 100.0)],
            &gt,
            &cfg,
        );
        let ends: Vec<f64> = kept.iter().map(|s| s.candidate.trajectory.last().y).collect();
        assert_eq!(ends, vec![1.6, 1.0]);
    }

    #[test]
    fn higher_pdms_wins_and_cap_applies() {
        let cfg = FteConfig {
            max_keep: 2,
            ..FteConfig::default()
        };
        let gt = line(0.0);
        let kept = diversity_select(
            vec![scored(line(3.0), 96.0), scored(line(1.0), 100.0), scored(line(5.0), 99.0), scored(line(7.0), 98.0)],
            &gt,
            &cfg,
        );
        let p: Vec<f64> = kept.iter().map(|s| s.pdms).collect();
        assert_eq!(p, vec![100.0, 99.0]);
    }

    #[test]
    fn dataset_assembly() {
        let p = ScoringParams::default();
        let sc = generate_scenarios(5, 24, &Mix::default()).unwrap();
        let off = FteConfig {
            enabled: false,
            ..FteConfig::default()
        };
        let d0 = build_sft_dataset(&sc, &off, &p, 1).unwrap();
        assert_eq!(d0.samples.len(), sc.len());
        assert!(d0.samples.iter().all(|s| s.source == Source::Gt));

        let cfg = FteConfig::default();
        let d = build_sft_dataset(&sc, &cfg, &p, 1).unwrap();
        assert!(d.samples.len() > sc.len());
        assert_eq!(d, build_sft_dataset(&sc, &cfg, &p, 1).unwrap());
        for s in d.samples.iter().filter(|s| s.source != Source::Gt) {
            let scen = sc.iter().find(|x| x.id == s.scenario_id).unwrap();
            let again = pdms_of(&s.trajectory, scen, &p);
            assert!(again > 95.0 && again >= pdms_of(&scen.gt, scen, &p));
        }
    }
}
