//! Trajectories, displacement metrics and step-wise normalization.
//!
//! A trajectory is `HORIZON` ego-frame waypoints sampled every `DT` seconds,
//! starting one step after the current pose (which sits at the origin).
//! Normalization z-scores every horizon step independently, so near and far
//! waypoints land on comparable scales before tokenization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of waypoints per trajectory.
pub const HORIZON: usize = 8;
/// Seconds between consecutive waypoints.
pub const DT: f64 = 0.5;
/// Lower bound applied to every fitted per-step standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const COORD_LIMIT: f64 = 1000.0;

/// Ego-frame position: `x` forward, `y` to the left, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 2]", into = "[T; 2]")]
pub struct Waypoint<T: Scalar> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Waypoint<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_valid(&self) -> bool {
        let lim = T::lit(COORD_LIMIT);
        self.x.is_finite() && self.y.is_finite() && self.x.abs() < lim && self.y.abs() < lim
    }
}

impl<T: Scalar> From<[T; 2]> for Waypoint<T> {
    fn from(v: [T; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl<T: Scalar> From<Waypoint<T>> for [T; 2] {
    fn from(w: Waypoint<T>) -> Self {
        [w.x, w.y]
    }
}

/// Exactly `HORIZON` finite waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Waypoint<T>>", into = "Vec<Waypoint<T>>")]
pub struct Trajectory<T: Scalar> {
    points: Vec<Waypoint<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(points: Vec<Waypoint<T>>) -> Result<Self> {
        if points.len() != HORIZON {
            return Err(Error::LengthMismatch {
                expected: HORIZON,
                got: points.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_valid()) {
            return Err(Error::invalid(format!(
                "waypoint {i} is not finite or exceeds {COORD_LIMIT} m"
            )));
        }
        Ok(Self { points })
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            xy.iter()
                .map(|&(x, y)| Waypoint::new(T::lit(x), T::lit(y)))
                .collect(),
        )
    }

    /// All waypoints at the origin.
    pub fn stationary() -> Self {
        Self {
            points: vec![Waypoint::default(); HORIZON],
        }
    }

    pub fn points(&self) -> &[Waypoint<T>] {
        &self.points
    }

    pub fn last(&self) -> Waypoint<T> {
        self.points[HORIZON - 1]
    }

    /// Origin followed by the waypoints (`HORIZON + 1` positions).
    pub fn with_origin(&self) -> Vec<Waypoint<T>> {
        let mut v = Vec::with_capacity(HORIZON + 1);
        v.push(Waypoint::default());
        v.extend_from_slice(&self.points);
        v
    }

    pub fn cast<U: Scalar>(&self) -> Trajectory<U> {
        Trajectory {
            points: self
                .points
                .iter()
                .map(|p| Waypoint::new(U::from(p.x).unwrap(), U::from(p.y).unwrap()))
                .collect(),
        }
    }
}

impl<T: Scalar> AsRef<[Waypoint<T>]> for Trajectory<T> {
    fn as_ref(&self) -> &[Waypoint<T>] {
        &self.points
    }
}

impl<T: Scalar> TryFrom<Vec<Waypoint<T>>> for Trajectory<T> {
    type Error = Error;

    fn try_from(points: Vec<Waypoint<T>>) -> Result<Self> {
        Self::new(points)
    }
}

impl<T: Scalar> From<Trajectory<T>> for Vec<Waypoint<T>> {
    fn from(t: Trajectory<T>) -> Self {
        t.points
    }
}

/// Per-step z-scores of a trajectory, `[x̃, ỹ]` per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory<T: Scalar> {
    pub steps: Vec<[T; 2]>,
}

/// Per-step, per-axis mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats<T: Scalar> {
    pub mu: Vec<[T; 2]>,
    pub sigma: Vec<[T; 2]>,
}

impl<T: Scalar> StepStats<T> {
    pub fn new(mu: Vec<[T; 2]>, sigma: Vec<[T; 2]>) -> Result<Self> {
        let stats = Self { mu, sigma };
        stats.validate()?;
        Ok(stats)
    }

    /// Same mean and deviation at every step; `mu = 0, sigma = s` turns the
    /// step-wise tokenizer into a single global grid over `±z_max·s` meters.
    pub fn uniform(mu: [T; 2], sigma: [T; 2]) -> Result<Self> {
        Self::new(vec![mu; HORIZON], vec![sigma; HORIZON])
    }

    pub fn validate(&self) -> Result<()> {
        for len in [self.mu.len(), self.sigma.len()] {
            if len != HORIZON {
                return Err(Error::LengthMismatch {
                    expected: HORIZON,
                    got: len,
                });
            }
        }
        let ok = self.mu.iter().flatten().all(|v| v.is_finite())
            && self
                .sigma
                .iter()
                .flatten()
                .all(|s| s.is_finite() && *s > T::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("step stats must be finite with sigma > 0"))
        }
    }
}

fn check_len<T: Scalar>(a: &[Waypoint<T>], b: &[Waypoint<T>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Average Euclidean displacement over aligned steps.
pub fn ade<T: Scalar>(a: impl AsRef<[Waypoint<T>]>, b: impl AsRef<[Waypoint<T>]>) -> Result<T> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_len(a, b)?;
    let sum = a
        .iter()
        .zip(b)
        .fold(T::zero(), |acc, (p, q)| acc + p.dist(q));
    Ok(sum / T::from_usize_lossy(a.len()))
}

/// Euclidean displacement of the final step.
pub fn fde<T: Scalar>(a: impl AsRef<[Waypoint<T>]>, b: impl AsRef<[Waypoint<T>]>) -> Result<T> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_len(a, b)?;
    Ok(a[a.len() - 1].dist(&b[b.len() - 1]))
}

/// Population mean and standard deviation per step and axis.
pub fn fit_step_stats<'a, T, I>(trajectories: I) -> Result<StepStats<T>>
where
    T: Scalar,
    I: IntoIterator<Item = &'a Trajectory<T>>,
{
    let mut n = 0usize;
    let mut sum = [[T::zero(); 2]; HORIZON];
    let mut sum_sq = [[T::zero(); 2]; HORIZON];
    let trajs: Vec<&Trajectory<T>> = trajectories.into_iter().collect();
    for tr in &trajs {
        n += 1;
        for (t, p) in tr.points().iter().enumerate() {
            sum[t][0] += p.x;
            sum[t][1] += p.y;
        }
    }
    if n < 2 {
        return Err(Error::invalid(format!(
            "step statistics need at least 2 trajectories, got {n}"
        )));
    }
    let nf = T::from_usize_lossy(n);
    let mu: Vec<[T; 2]> = sum.iter().map(|s| [s[0] / nf, s[1] / nf]).collect();
    // second pass on centered values keeps the variance well conditioned
    for tr in &trajs {
        for (t, p) in tr.points().iter().enumerate() {
            let dx = p.x - mu[t][0];
            let dy = p.y - mu[t][1];
            sum_sq[t][0] += dx * dx;
            sum_sq[t][1] += dy * dy;
        }
    }
    let floor = T::lit(SIGMA_FLOOR);
    let sigma = sum_sq
        .iter()
        .map(|s| [(s[0] / nf).sqrt().max(floor), (s[1] / nf).sqrt().max(floor)])
        .collect();
    StepStats::new(mu, sigma)
}

/// Half-range in meters of the fixed global grid used without step-wise
/// normalization.
pub const RAW_HALF_RANGE: f64 = 64.0;

/// Statistics that make the tokenizer a single grid over `±half_range`
/// meters at every step (`mu = 0`, `sigma = half_range / z_max`).
pub fn global_grid_stats<T: Scalar>(half_range: T, z_max: T) -> Result<StepStats<T>> {
    let s = half_range / z_max;
    StepStats::uniform([T::zero(); 2], [s; 2])
}

pub fn normalize<T: Scalar>(traj: &Trajectory<T>, stats: &StepStats<T>) -> NormalizedTrajectory<T> {
    let steps = traj
        .points()
        .iter()
        .enumerate()
        .map(|(t, p)| {
            [
                (p.x - stats.mu[t][0]) / stats.sigma[t][0],
                (p.y - stats.mu[t][1]) / stats.sigma[t][1],
            ]
        })
        .collect();
    NormalizedTrajectory { steps }
}

pub fn denormalize<T: Scalar>(
    ntraj: &NormalizedTrajectory<T>,
    stats: &StepStats<T>,
) -> Result<Trajectory<T>> {
    if ntraj.steps.len() != HORIZON {
        return Err(Error::LengthMismatch {
            expected: HORIZON,
            got: ntraj.steps.len(),
        });
    }
    Trajectory::new(
        ntraj
            .steps
            .iter()
            .enumerate()
            .map(|(t, z)| {
                Waypoint::new(
                    z[0] * stats.sigma[t][0] + stats.mu[t][0],
                    z[1] * stats.sigma[t][1] + stats.mu[t][1],
                )
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(f: impl Fn(f64) -> (f64, f64)) -> Trajectory<f64> {
        let xy: Vec<_> = (1..=HORIZON).map(|t| f(t as f64)).collect();
        Trajectory::from_xy(&xy).unwrap()
    }

    #[test]
    fn trajectory_rejects_wrong_length_and_nonfinite() {
        assert!(matches!(
            Trajectory::<f64>::from_xy(&[(0.0, 0.0); 7]),
            Err(Error::LengthMismatch { expected: 8, got: 7 })
        ));
        let mut xy = [(1.0, 1.0); 8];
        xy[3].1 = f64::NAN;
        assert!(Trajectory::<f64>::from_xy(&xy).is_err());
        xy[3].1 = 1000.0;
        assert!(Trajectory::<f64>::from_xy(&xy).is_err());
    }

    #[test]
    fn ade_examples() {
        let a = line(|t| (t, 0.0));
        assert_eq!(ade(&a, &a).unwrap(), 0.0);
        assert!((ade(&a, line(|t| (t, 1.0))).unwrap() - 1.0).abs() < 1e-12);
        // (1/8) * sum_{t=1..8} t/8 = 36/64
        assert!((ade(&a, line(|t| (t, t / 8.0))).unwrap() - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn fde_examples() {
        let a = line(|t| (t, 0.0));
        assert_eq!(fde(&a, &a).unwrap(), 0.0);
        assert!((fde(&a, line(|t| (t, 1.0))).unwrap() - 1.0).abs() < 1e-12);
        let b = line(|t| if t == 8.0 { (5.0, 4.0) } else { (t, 0.0) });
        assert!((fde(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn displacement_rejects_mismatched_slices() {
        let a = [Waypoint::new(0.0, 0.0); 3];
        let b = [Waypoint::new(0.0, 0.0); 4];
        assert!(ade(&a[..], &b[..]).is_err());
        assert!(fde(&a[..], &b[..]).is_err());
    }

    #[test]
    fn step_stats_examples() {
        let a = line(|t| (t, 0.5 * t));
        let s = fit_step_stats([&a, &a]).unwrap();
        for t in 0..HORIZON {
            assert_eq!(s.mu[t], [a.points()[t].x, a.points()[t].y]);
            assert_eq!(s.sigma[t], [SIGMA_FLOOR, SIGMA_FLOOR]);
        }

        let lo = line(|_| (0.0, 0.0));
        let hi = line(|_| (2.0, 0.0));
        let s = fit_step_stats([&lo, &hi]).unwrap();
        assert!(s.mu.iter().all(|m| m[0] == 1.0));
        assert!(s.sigma.iter().all(|v| (v[0] - 1.0).abs() < 1e-12));

        let mid = line(|_| (1.0, 0.0));
        let s = fit_step_stats([&lo, &mid, &hi]).unwrap();
        assert!((s.mu[0][0] - 1.0).abs() < 1e-12);
        assert!((s.sigma[0][0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.sigma[0][0] - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn step_stats_need_two() {
        assert!(fit_step_stats::<f64, _>(std::iter::empty()).is_err());
        let a = line(|t| (t, 0.0));
        assert!(fit_step_stats([&a]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let mu = line(|t| (t, -t));
        let s = StepStats::new(
            mu.points().iter().map(|p| [p.x, p.y]).collect(),
            vec![[2.0, 0.5]; HORIZON],
        )
        .unwrap();
        let z = normalize(&mu, &s);
        assert!(z.steps.iter().flatten().all(|v| *v == 0.0));
        let plus = line(|t| (t + 2.0, -t + 0.5));
        assert!(normalize(&plus, &s).steps.iter().flatten().all(|v| (*v - 1.0).abs() < 1e-12));

        let s = StepStats::uniform([4.0, 0.0], [2.0, 1.0]).unwrap();
        let w = line(|_| (7.0, -2.0));
        let z = normalize(&w, &s);
        assert_eq!(z.steps[0], [1.5, -2.0]);
        assert_eq!(denormalize(&z, &s).unwrap(), w);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Trajectory::<f32>::from_xy(&[(3.0, 4.0); 8]).unwrap();
        let b = Trajectory::<f32>::stationary();
        assert!((fde(&a, &b).unwrap() - 5.0f32).abs() < 1e-6);
        assert_eq!(a.cast::<f64>().last(), Waypoint::new(3.0, 4.0));
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory<f64>> {
        proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), HORIZON)
            .prop_map(|xy| Trajectory::from_xy(&xy).unwrap())
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_nonneg_and_triangular(a in arb_traj(), b in arb_traj(), c in arb_traj()) {
            let ab = ade(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ade(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= ade(&a, &c).unwrap() + ade(&c, &b).unwrap() + 1e-9);
            let fab = fde(&a, &b).unwrap();
            prop_assert!(fab >= 0.0);
            prop_assert!((fab - fde(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(fab <= fde(&a, &c).unwrap() + fde(&c, &b).unwrap() + 1e-9);
        }

        #[test]
        fn normalization_round_trips(set in proptest::collection::vec(arb_traj(), 2..12)) {
            let s = fit_step_stats(&set).unwrap();
            for tr in &set {
                let back = denormalize(&normalize(tr, &s), &s).unwrap();
                for (p, q) in back.points().iter().zip(tr.points()) {
                    prop_assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn self_normalized_set_has_unit_variance(set in proptest::collection::vec(arb_traj(), 2..12)) {
            let s = fit_step_stats(&set).unwrap();
            let z: Vec<_> = set.iter().map(|t| normalize(t, &s)).collect();
            let n = set.len() as f64;
            for t in 0..HORIZON {
                for axis in 0..2 {
                    let mean = z.iter().map(|n| n.steps[t][axis]).sum::<f64>() / n;
                    let var = z.iter().map(|n| (n.steps[t][axis] - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!((var - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
