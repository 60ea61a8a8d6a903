//! Adaptive diversity-aware sampling: offline filtration of scenarios whose
//! rollout rewards behave like a mid-probability Bernoulli process, and the
//! outer loop alternating filtration with RL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{mean_std, run_rl, trajectory_reward, GrpoConfig, RlEnv, TrainRecord};
use crate::policy::{Policy, PolicyParams};
use crate::world::{scenario_seed, Scenario};
use crate::{Scalar, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdasConfig {
    /// Offline rollouts per scenario.
    pub rollouts: usize,
    pub group_size: usize,
    pub eps_div: f64,
    pub eps_conf: f64,
    pub outer_loops: usize,
    pub r_range: f64,
    pub r_max: f64,
    pub temperature: f64,
    /// End training at a later outer loop whose active set is empty instead
    /// of failing. An empty first loop is always an error.
    pub stop_when_empty: bool,
}

impl Default for AdasConfig {
    fn default() -> Self {
        Self {
            rollouts: 64,
            group_size: 8,
            eps_div: 0.05,
            eps_conf: 0.1,
            outer_loops: 3,
            r_range: 1.0,
            r_max: 1.0,
            temperature: 1.0,
            stop_when_empty: false,
        }
    }
}

impl AdasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 || self.rollouts < self.group_size {
            return Err(Error::invalid("adas needs rollouts >= group size >= 2"));
        }
        for (name, v) in [
            ("eps_div", self.eps_div),
            ("eps_conf", self.eps_conf),
            ("r_range", self.r_range),
            ("r_max", self.r_max),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("adas {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Success rate and reward spread of one scenario under the current policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub p: f64,
    pub mean: f64,
    pub std: f64,
}

impl ScenarioStats {
    pub fn from_rewards(rewards: &[f64], r_max: f64) -> Self {
        let (mean, std) = mean_std(rewards);
        Self {
            p: mean / r_max,
            mean,
            std,
        }
    }
}

/// Samples `rollouts` trajectories and summarizes their rewards as given by
/// `reward`.
pub fn estimate_scenario_stats_with<R, F>(
    policy: &Policy,
    scenario: &Scenario,
    cfg: &AdasConfig,
    reward: F,
    rng: &mut R,
) -> Result<ScenarioStats>
where
    R: Rng + ?Sized,
    F: Fn(&Trajectory) -> Result<f64>,
{
    let mut rewards = Vec::with_capacity(cfg.rollouts);
    for _ in 0..cfg.rollouts {
        rewards.push(reward(&policy.sample(scenario, cfg.temperature, rng)?.trajectory)?);
    }
    Ok(ScenarioStats::from_rewards(&rewards, cfg.r_max))
}

pub fn estimate_scenario_stats<R: Rng + ?Sized>(
    policy: &Policy,
    scenario: &Scenario,
    cfg: &AdasConfig,
    env: &RlEnv,
    rng: &mut R,
) -> Result<ScenarioStats> {
    estimate_scenario_stats_with(policy, scenario, cfg, |t| trajectory_reward(t, scenario, env), rng)
}

/// Outcome of the two diversity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    /// A group of `G` would too often be all-success or all-failure.
    Degenerate,
    /// The spread is inconsistent with a Bernoulli process at `p`.
    NotBernoulli,
    Both,
    /// `p` outside `[0, 1]`.
    InvalidP,
}

/// `p^G + (1-p)^G`.
pub fn degeneracy<T: Scalar>(p: T, g: usize) -> T {
    let g = g as i32;
    p.powi(g) + (T::one() - p).powi(g)
}

/// `|σ - √(p(1-p))·R_range|`.
pub fn bernoulli_gap<T: Scalar>(p: T, sigma: T, r_range: T) -> T {
    (sigma - (p * (T::one() - p)).sqrt() * r_range).abs()
}

/// Both diversity conditions; the verdict names whichever failed.
pub fn passes_filter<T: Scalar>(p: T, sigma: T, cfg: &AdasConfig) -> (bool, Verdict) {
    if !(p >= T::zero() && p <= T::one()) {
        return (false, Verdict::InvalidP);
    }
    let div = degeneracy(p, cfg.group_size) < T::lit(cfg.eps_div);
    let conf = bernoulli_gap(p, sigma, T::lit(cfg.r_range)) < T::lit(cfg.eps_conf);
    match (div, conf) {
        (true, true) => (true, Verdict::Accepted),
        (false, true) => (false, Verdict::Degenerate),
        (true, false) => (false, Verdict::NotBernoulli),
        (false, false) => (false, Verdict::Both),
    }
}

/// One line of the acceptance ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub scenario_id: String,
    pub p: f64,
    pub mean: f64,
    pub std: f64,
    pub degeneracy: f64,
    pub bernoulli_gap: f64,
    pub accepted: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub outer_loop: usize,
    pub entries: Vec<LedgerEntry>,
}

impl ActiveSet {
    /// Applies the filter to precomputed statistics.
    pub fn from_stats(outer_loop: usize, stats: &[(String, ScenarioStats)], cfg: &AdasConfig) -> Self {
        let entries = stats
            .iter()
            .map(|(id, s)| {
                let (accepted, verdict) = passes_filter(s.p, s.std, cfg);
                LedgerEntry {
                    scenario_id: id.clone(),
                    p: s.p,
                    mean: s.mean,
                    std: s.std,
                    degeneracy: degeneracy(s.p, cfg.group_size),
                    bernoulli_gap: bernoulli_gap(s.p, s.std, cfg.r_range),
                    accepted,
                    verdict,
                }
            })
            .collect();
        Self { outer_loop, entries }
    }

    pub fn accepted_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|e| e.accepted).map(|e| e.scenario_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.accepted).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The accepted scenarios, in dataset order.
    pub fn select<'a>(&self, dataset: &'a [Scenario]) -> Vec<&'a Scenario> {
        let ids: std::collections::HashSet<&str> = self.accepted_ids().collect();
        dataset.iter().filter(|s| ids.contains(s.id.as_str())).collect()
    }
}

/// Offline filtration of every scenario; each scenario draws from its own
/// seed stream so the result is independent of scheduling.
pub fn build_active_set(
    policy: &Policy,
    dataset: &[Scenario],
    cfg: &AdasConfig,
    env: &RlEnv,
    seed: u64,
    outer_loop: usize,
) -> Result<ActiveSet> {
    cfg.validate()?;
    let stats: Vec<(String, ScenarioStats)> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, i as u64));
            Ok((s.id.clone(), estimate_scenario_stats(policy, s, cfg, env, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    Ok(ActiveSet::from_stats(outer_loop, &stats, cfg))
}

/// Summary of one outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub outer_loop: usize,
    pub active_set_size: usize,
    pub active_set: ActiveSet,
    pub train: TrainRecord,
}

/// Splits `total` steps over `loops` as evenly as possible, earlier loops
/// taking the remainder.
pub fn steps_per_loop(total: usize, loops: usize) -> Vec<usize> {
    (0..loops)
        .map(|e| total / loops + usize::from(e < total % loops))
        .collect()
}

/// `Ok` when an empty active set at outer loop `e` should end training
/// early, the abort error otherwise.
fn empty_set_stops(adas: &AdasConfig, e: usize, scenarios: usize) -> Result<()> {
    if adas.stop_when_empty && e > 0 {
        return Ok(());
    }
    Err(Error::EmptyActiveSet(format!(
        "ADAS filtration accepted none of {scenarios} scenarios in outer loop {e}"
    )))
}

/// `E` rounds of filtration followed by RL on the accepted scenarios; the
/// KL reference stays the SFT policy throughout.
#[allow(clippy::too_many_arguments)]
pub fn run_outer_loops(
    mut params: PolicyParams,
    sft: &PolicyParams,
    dataset: &[Scenario],
    env: &RlEnv,
    adas: &AdasConfig,
    grpo: &GrpoConfig,
    total_steps: usize,
    seed: u64,
) -> Result<(PolicyParams, Vec<LoopRecord>)> {
    adas.validate()?;
    grpo.validate()?;
    let mut records = Vec::with_capacity(adas.outer_loops);
    if adas.outer_loops == 0 {
        return Ok((params, records));
    }
    for (e, steps) in steps_per_loop(total_steps, adas.outer_loops).into_iter().enumerate() {
        let filter_seed = scenario_seed(seed, 2 * e as u64);
        let active = build_active_set(&env.policy(params.clone()), dataset, adas, env, filter_seed, e)?;
        if active.is_empty() {
            empty_set_stops(adas, e, dataset.len())?;
            records.push(LoopRecord {
                outer_loop: e,
                active_set_size: 0,
                active_set: active,
                train: TrainRecord {
                    initial_validation_pdms: None,
                    rows: Vec::new(),
                },
            });
            break;
        }
        let chosen: Vec<Scenario> = active.select(dataset).into_iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, 2 * e as u64 + 1));
        let (next, train) = run_rl(params, sft, &chosen, env, grpo, steps, &mut rng)?;
        params = next;
        records.push(LoopRecord {
            outer_loop: e,
            active_set_size: chosen.len(),
            active_set: active,
            train,
        });
    }
    Ok((params, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::GrpoConfig;
    use crate::policy::Tokenizer;
    use crate::scoring::{RewardConfig, ScoringParams};
    use crate::traj::{global_grid_stats, RAW_HALF_RANGE};
    use crate::world::{generate_scenarios, Mix};

    fn cfg(g: usize) -> AdasConfig {
        AdasConfig {
            group_size: g,
            ..AdasConfig::default()
        }
    }

    fn env() -> RlEnv {
        let tokenizer = Tokenizer::default();
        RlEnv {
            tokenizer,
            stats: global_grid_stats(RAW_HALF_RANGE, tokenizer.z_max).unwrap(),
            scoring: ScoringParams::default(),
            reward: RewardConfig::sdr(),
            validation: vec![],
            validation_k: 1,
            validate_every: 0,
            validation_seed: 0,
        }
    }

    #[test]
    fn hand_evaluated_cases() {
        let c = cfg(8);
        assert!((degeneracy(0.5f64, 8) - 0.0078125).abs() < 1e-15);
        assert_eq!(passes_filter(0.5, 0.48, &c), (true, Verdict::Accepted));
        assert_eq!(passes_filter(1.0, 0.0, &c), (false, Verdict::Degenerate));
        assert_eq!(passes_filter(0.0, 0.0, &c), (false, Verdict::Degenerate));
        assert_eq!(passes_filter(0.5, 0.05, &c), (false, Verdict::NotBernoulli));
        assert_eq!(passes_filter(0.99, 0.5, &c), (false, Verdict::Both));
        assert_eq!(passes_filter(1.2, 0.1, &c), (false, Verdict::InvalidP));
        assert_eq!(passes_filter(f64::NAN, 0.1, &c), (false, Verdict::InvalidP));
        assert_eq!(passes_filter(0.5f32, 0.48f32, &c), (true, Verdict::Accepted));
    }

    #[test]
    fn agrees_with_brute_force_on_the_grid() {
        for g in [2usize, 4, 8] {
            let c = cfg(g);
            for i in 0..=20 {
                let p = i as f64 * 0.05;
                for s in 0..=6 {
                    let sigma = s as f64 * 0.1;
                    let mut first = 1.0f64;
                    let mut second = 1.0f64;
                    for _ in 0..g {
                        first *= p;
                        second *= 1.0 - p;
                    }
                    let bern = (p * (1.0 - p)).sqrt();
                    let want = first + second < 0.05 && (sigma - bern).abs() < 0.1;
                    assert_eq!(passes_filter(p, sigma, &c).0, want, "p={p} g={g} sigma={sigma}");
                }
            }
        }
    }

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(lo) > 0.0) == (f(mid) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn first_condition_accepts_an_interval_around_one_half() {
        let c = cfg(8);
        let f = |p: f64| degeneracy(p, 8) - 0.05;
        let (a, b) = (bisect(0.0, 0.5, f), bisect(0.5, 1.0, f));
        assert!((a + b - 1.0).abs() < 1e-9);
        // the Bernoulli-consistent spread isolates the first condition
        let accepts = |p: f64| passes_filter(p, (p * (1.0 - p)).sqrt(), &c).0;
        assert!(!accepts(a - 1e-6) && accepts(a + 1e-6));
        assert!(accepts(b - 1e-6) && !accepts(b + 1e-6));
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            assert_eq!(accepts(p), p > a && p < b, "p={p}");
        }
    }

    #[test]
    fn injected_reward_oracles() {
        let s = &generate_scenarios(1, 1, &Mix::default()).unwrap()[0];
        let e = env();
        let policy = e.policy(PolicyParams::zeros(64));
        let c = AdasConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = estimate_scenario_stats_with(&policy, s, &c, |_| Ok(1.0), &mut rng).unwrap();
        assert_eq!((st.p, st.std), (1.0, 0.0));
        let flip = std::cell::Cell::new(false);
        let st = estimate_scenario_stats_with(
            &policy,
            s,
            &c,
            |_| {
                flip.set(!flip.get());
                Ok(flip.get() as u8 as f64)
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!((st.p, st.std), (0.5, 0.5));
    }

    #[test]
    fn injected_stats_select_exactly_the_diverse_half() {
        let stats: Vec<(String, ScenarioStats)> = (0..10)
            .map(|i| {
                let s = if i % 2 == 0 {
                    ScenarioStats { p: 0.5, mean: 0.5, std: 0.5 }
                } else {
                    ScenarioStats { p: 0.95, mean: 0.95, std: 0.02 }
                };
                (format!("s{i}"), s)
            })
            .collect();
        let set = ActiveSet::from_stats(0, &stats, &AdasConfig::default());
        let ids: Vec<&str> = set.accepted_ids().collect();
        assert_eq!(ids, vec!["s0", "s2", "s4", "s6", "s8"]);
        for e in &set.entries {
            let (ok, _) = passes_filter(e.p, e.std, &AdasConfig::default());
            assert_eq!(ok, e.accepted);
            assert_eq!(e.accepted, e.verdict == Verdict::Accepted);
        }
    }

    #[test]
    fn deterministic_policy_gives_an_empty_set() {
        let scenarios = generate_scenarios(2, 6, &Mix::default()).unwrap();
        let e = env();
        let policy = e.policy(PolicyParams::init(64, &mut ChaCha8Rng::seed_from_u64(3)));
        let c = AdasConfig {
            rollouts: 8,
            temperature: 1e-6,
            ..AdasConfig::default()
        };
        let set = build_active_set(&policy, &scenarios, &c, &e, 4, 0).unwrap();
        assert_eq!(set.entries.len(), 6);
        assert!(set.is_empty());
        assert!(set.entries.iter().all(|x| x.std == 0.0));
    }

    #[test]
    fn filtration_is_seeded() {
        let scenarios = generate_scenarios(3, 5, &Mix::default()).unwrap();
        let e = env();
        let policy = e.policy(PolicyParams::init(64, &mut ChaCha8Rng::seed_from_u64(5)));
        let c = AdasConfig {
            rollouts: 8,
            ..AdasConfig::default()
        };
        let a = build_active_set(&policy, &scenarios, &c, &e, 6, 1).unwrap();
        let b = build_active_set(&policy, &scenarios, &c, &e, 6, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outer_loop, 1);
    }

    #[test]
    fn zero_outer_loops_leave_parameters_unchanged() {
        let scenarios = generate_scenarios(4, 3, &Mix::default()).unwrap();
        let p = PolicyParams::init(64, &mut ChaCha8Rng::seed_from_u64(7));
        let c = AdasConfig {
            outer_loops: 0,
            ..AdasConfig::default()
        };
        let (q, loops) = run_outer_loops(p.clone(), &p, &scenarios, &env(), &c, &GrpoConfig::default(), 10, 1).unwrap();
        assert_eq!(p, q);
        assert!(loops.is_empty());
    }

    #[test]
    fn empty_filtration_aborts_the_loop() {
        let scenarios = generate_scenarios(5, 3, &Mix::default()).unwrap();
        let p = PolicyParams::init(64, &mut ChaCha8Rng::seed_from_u64(8));
        let c = AdasConfig {
            rollouts: 8,
            temperature: 1e-6,
            ..AdasConfig::default()
        };
        let r = run_outer_loops(p.clone(), &p, &scenarios, &env(), &c, &GrpoConfig::default(), 10, 1);
        assert!(matches!(r, Err(Error::EmptyActiveSet(_))));
    }

    #[test]
    fn only_later_empty_loops_may_stop_early() {
        let stop = AdasConfig {
            stop_when_empty: true,
            ..AdasConfig::default()
        };
        assert!(empty_set_stops(&stop, 1, 5).is_ok());
        assert!(matches!(empty_set_stops(&stop, 0, 5), Err(Error::EmptyActiveSet(_))));
        assert!(matches!(empty_set_stops(&AdasConfig::default(), 2, 5), Err(Error::EmptyActiveSet(_))));

        let scenarios = generate_scenarios(5, 3, &Mix::default()).unwrap();
        let p = PolicyParams::init(64, &mut ChaCha8Rng::seed_from_u64(8));
        let c = AdasConfig {
            rollouts: 8,
            temperature: 1e-6,
            ..stop
        };
        let r = run_outer_loops(p.clone(), &p, &scenarios, &env(), &c, &GrpoConfig::default(), 10, 1);
        assert!(matches!(r, Err(Error::EmptyActiveSet(_))));
    }

    #[test]
    fn steps_are_split_evenly() {
        assert_eq!(steps_per_loop(100, 3), vec![34, 33, 33]);
        assert_eq!(steps_per_loop(2, 3), vec![1, 1, 0]);
        assert_eq!(steps_per_loop(9, 3).iter().sum::<usize>(), 9);
    }
}
