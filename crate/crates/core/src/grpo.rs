//! Critic-free group-relative policy optimisation: group rollouts,
//! standardized advantages, a clipped sequence-level surrogate with an exact
//! per-token KL penalty to the frozen SFT policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    adam_step, log_softmax, softmax, AdamConfig, AdamState, ContextFeatures, Policy, PolicyParams, TokenSeq,
    Tokenizer,
};
use crate::scoring::{evaluate_subscores, pdms_of, reward, RewardConfig, ScoringParams};
use crate::world::{scenario_seed, Scenario};
use crate::{Scalar, StepStats, Trajectory};

/// Rewards closer than this are treated as identical.
pub const ZERO_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip: f64,
    pub kl_coef: f64,
    pub adv_floor: f64,
    pub temperature: f64,
    pub inner_epochs: usize,
    /// Scenarios per step.
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Drop groups whose rewards are all within [`ZERO_SIGMA`] before the
    /// update (the reject-unimodal comparator).
    pub drop_unimodal: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip: 0.2,
            kl_coef: 0.01,
            adv_floor: 1e-4,
            temperature: 1.0,
            inner_epochs: 1,
            batch_size: 16,
            lr: 6e-4,
            adam: AdamConfig::default(),
            drop_unimodal: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid("group size must be >= 2"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::invalid("clip must lie in (0, 1)"));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::invalid("kl coefficient must be >= 0"));
        }
        if !(self.adv_floor > 0.0 && self.adv_floor.is_finite()) {
            return Err(Error::invalid("advantage floor must be > 0"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("rollout temperature must be > 0"));
        }
        if self.inner_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("inner epochs and batch size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("rl learning rate must be > 0"));
        }
        Ok(())
    }
}

/// `(R_i - mean) / (std + floor)` with the population standard deviation.
pub fn compute_advantages<T: Scalar>(rewards: &[T], floor: T) -> Vec<T> {
    let (mu, sigma) = mean_std(rewards);
    rewards.iter().map(|&r| (r - mu) / (sigma + floor)).collect()
}

/// Mean and population standard deviation.
pub fn mean_std<T: Scalar>(v: &[T]) -> (T, T) {
    if v.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::from_usize_lossy(v.len());
    // offsets from the first element keep identical inputs exact
    let v0 = v[0];
    let mu = v0 + v.iter().fold(T::zero(), |a, &b| a + (b - v0)) / n;
    let var = v.iter().fold(T::zero(), |a, &b| a + (b - mu) * (b - mu)) / n;
    (mu, var.sqrt())
}

/// `G` rollouts of one scenario with their rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub scenario_id: String,
    pub features: ContextFeatures,
    pub tokens: Vec<TokenSeq>,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    /// Sequence log-probabilities under the policy that generated them.
    pub old_logprobs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Assembles a group and standardizes its rewards.
    pub fn new(
        scenario_id: impl Into<String>,
        features: ContextFeatures,
        tokens: Vec<TokenSeq>,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        old_logprobs: Vec<f64>,
        adv_floor: f64,
    ) -> Self {
        let (mean, std) = mean_std(&rewards);
        let advantages = compute_advantages(&rewards, adv_floor);
        Self {
            scenario_id: scenario_id.into(),
            features,
            tokens,
            trajectories,
            rewards,
            old_logprobs,
            mean,
            std,
            advantages,
        }
    }

    pub fn is_zero_sigma(&self) -> bool {
        self.std < ZERO_SIGMA
    }

    fn check(&self, bins: usize, length: usize) -> Result<()> {
        let g = self.tokens.len();
        if g == 0 {
            return Err(Error::invalid(format!("group {} has no rollouts", self.scenario_id)));
        }
        if self.old_logprobs.len() != g {
            return Err(Error::invalid(format!(
                "group {} is missing old log-probabilities ({} of {g})",
                self.scenario_id,
                self.old_logprobs.len()
            )));
        }
        if self.advantages.len() != g || self.advantages.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid(format!("group {} has invalid advantages", self.scenario_id)));
        }
        for t in &self.tokens {
            if t.len() != length {
                return Err(Error::LengthMismatch {
                    expected: length,
                    got: t.len(),
                });
            }
            if t.iter().any(|&y| y >= bins) {
                return Err(Error::invalid(format!("group {} has out-of-range tokens", self.scenario_id)));
            }
        }
        Ok(())
    }
}

/// Objective terms of one evaluation, averaged over groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    /// Fraction of rollouts whose ratio sat on a clipped branch.
    pub clip_fraction: f64,
}

/// Mean per-position KL(π_θ ‖ π_ref) along a token sequence; accumulates
/// `-kl_scale · ∇KL + coef · ∇log π` into `grad`.
fn sequence_terms(
    params: &PolicyParams,
    reference: &PolicyParams,
    f: &ContextFeatures,
    tokens: &[usize],
    surrogate_coef: f64,
    kl_scale: f64,
    grad: &mut PolicyParams,
) -> f64 {
    let l = tokens.len() as f64;
    let mut kl_sum = 0.0;
    for (j, &y) in tokens.iter().enumerate() {
        let prev = params.context_token(tokens, j);
        let (x, h) = params.trunk(f, prev);
        let logits = params.head(j, &h);
        let lp = log_softmax(&logits);
        let lq = log_softmax(&reference.forward_logits(f, reference.context_token(tokens, j), j));
        let p = softmax(&logits);
        let kl_j: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pk, (a, b))| pk * (a - b)).sum();
        kl_sum += kl_j;
        let mut dz: Vec<f64> = (0..p.len())
            .map(|k| -kl_scale / l * p[k] * (lp[k] - lq[k] - kl_j) - surrogate_coef * p[k])
            .collect();
        dz[y] += surrogate_coef;
        params.backward(grad, prev, j, &x, &h, &dz);
    }
    kl_sum / l
}

/// Clipped surrogate minus `β·KL`, averaged over rollouts then groups, and
/// its gradient with respect to `params` (ascent direction).
pub fn grpo_objective_and_grad(
    params: &PolicyParams,
    sft: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<(ObjectiveParts, PolicyParams)> {
    if params.shape() != sft.shape() {
        return Err(Error::invalid("policy and reference shapes differ"));
    }
    if groups.is_empty() {
        return Err(Error::invalid("no rollout groups"));
    }
    for g in groups {
        g.check(params.bins(), params.shape().length)?;
    }
    let ng = groups.len() as f64;
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let parts: Vec<(ObjectiveParts, PolicyParams)> = groups
        .par_iter()
        .map(|group| {
            let mut grad = params.zeros_like();
            let gsize = group.tokens.len() as f64;
            let w = 1.0 / (gsize * ng);
            let mut acc = ObjectiveParts::default();
            for i in 0..group.tokens.len() {
                let tokens = &group.tokens[i];
                let a = group.advantages[i];
                let ratio = (params.sequence_logprob(&group.features, tokens) - group.old_logprobs[i]).exp();
                let unclipped = ratio * a;
                let clipped = ratio.clamp(lo, hi) * a;
                // Gradient flows only through the unclipped branch when it
                // is the active minimum.
                let active = unclipped <= clipped;
                let coef = if active && ratio > 0.0 { w * ratio * a } else { 0.0 };
                if !(ratio >= lo && ratio <= hi) {
                    acc.clip_fraction += w;
                }
                let surr = unclipped.min(clipped);
                let kl = sequence_terms(params, sft, &group.features, tokens, coef, w * cfg.kl_coef, &mut grad);
                acc.surrogate += w * surr;
                acc.kl += w * kl;
                acc.objective += w * (surr - cfg.kl_coef * kl);
            }
            (acc, grad)
        })
        .collect();
    let mut grad = params.zeros_like();
    let mut total = ObjectiveParts::default();
    for (p, g) in &parts {
        total.objective += p.objective;
        total.surrogate += p.surrogate;
        total.kl += p.kl;
        total.clip_fraction += p.clip_fraction;
        grad.add_scaled(g, 1.0);
    }
    Ok((total, grad))
}

/// Everything a trainer needs besides the parameters being updated.
#[derive(Debug, Clone)]
pub struct RlEnv {
    pub tokenizer: Tokenizer,
    pub stats: StepStats,
    pub scoring: ScoringParams,
    pub reward: RewardConfig,
    /// Held-out scenarios for validation PDMS; empty disables validation.
    pub validation: Vec<Scenario>,
    pub validation_k: usize,
    /// Validate every this many steps (and after the last one).
    pub validate_every: usize,
    /// Every validation pass reuses this seed so successive values differ
    /// only through the parameters.
    pub validation_seed: u64,
}

impl RlEnv {
    pub fn policy(&self, params: PolicyParams) -> Policy {
        Policy {
            params,
            tokenizer: self.tokenizer,
            stats: self.stats.clone(),
        }
    }
}

/// Reward of one trajectory on `[0, 1]`.
pub fn trajectory_reward(traj: &Trajectory, scenario: &Scenario, env: &RlEnv) -> Result<f64> {
    reward(&evaluate_subscores(traj, scenario, &env.scoring), &env.reward)
}

/// Samples `G` rollouts of `scenario` and scores them.
pub fn rollout_group<R: Rng + ?Sized>(
    policy: &Policy,
    scenario: &Scenario,
    env: &RlEnv,
    cfg: &GrpoConfig,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let features = ContextFeatures::from_scenario(scenario);
    let mut tokens = Vec::with_capacity(cfg.group_size);
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    let mut old = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let r = policy.rollout(&features, crate::policy::Decode::Sample { temperature: cfg.temperature }, rng)?;
        rewards.push(trajectory_reward(&r.trajectory, scenario, env)?);
        tokens.push(r.tokens);
        trajectories.push(r.trajectory);
        old.push(r.logprob);
    }
    Ok(RolloutGroup::new(
        scenario.id.clone(),
        features,
        tokens,
        trajectories,
        rewards,
        old,
        cfg.adv_floor,
    ))
}

/// Mean PDMS over `k` samples per scenario, averaged over scenarios.
pub fn validation_pdms(
    policy: &Policy,
    scenarios: &[Scenario],
    scoring: &ScoringParams,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    if scenarios.is_empty() || k == 0 {
        return Err(Error::invalid("validation needs scenarios and k >= 1"));
    }
    let per: Vec<f64> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, i as u64));
            let mut total = 0.0;
            for _ in 0..k {
                total += pdms_of(&policy.sample(s, temperature, &mut rng)?.trajectory, s, scoring);
            }
            Ok(total / k as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub mean_reward: f64,
    pub zero_sigma_fraction: f64,
    pub kl: f64,
    pub groups_used: usize,
    pub validation_pdms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Validation PDMS of the parameters before the first update.
    pub initial_validation_pdms: Option<f64>,
    pub rows: Vec<TrainRow>,
}

impl TrainRecord {
    pub fn mean_zero_sigma_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.zero_sigma_fraction).sum::<f64>() / self.rows.len() as f64
    }

    pub fn final_validation_pdms(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.validation_pdms).or(self.initial_validation_pdms)
    }
}

/// Group-relative RL over `scenarios` (the active set): each step draws
/// `batch_size` scenarios uniformly with replacement, rolls out `G` samples
/// each, scores them and takes one ascent step per inner epoch.
pub fn run_rl<R: Rng + ?Sized>(
    mut params: PolicyParams,
    sft: &PolicyParams,
    scenarios: &[Scenario],
    env: &RlEnv,
    cfg: &GrpoConfig,
    steps: usize,
    rng: &mut R,
) -> Result<(PolicyParams, TrainRecord)> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyActiveSet(
            "no scenarios to train on; ADAS filtration accepted none".into(),
        ));
    }
    let mut record = TrainRecord::default();
    if steps == 0 {
        return Ok((params, record));
    }
    let validate = |p: &PolicyParams| -> Result<Option<f64>> {
        if env.validation.is_empty() {
            return Ok(None);
        }
        let policy = env.policy(p.clone());
        validation_pdms(&policy, &env.validation, &env.scoring, env.validation_k.max(1), cfg.temperature, env.validation_seed).map(Some)
    };
    record.initial_validation_pdms = validate(&params)?;
    let mut state = AdamState::new(params.as_slice().len(), cfg.adam);
    for step in 0..steps {
        let step_seed: u64 = rng.random();
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..scenarios.len())).collect();
        let policy = env.policy(params.clone());
        let groups: Vec<RolloutGroup> = picks
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut grng = ChaCha8Rng::seed_from_u64(scenario_seed(step_seed, i as u64));
                rollout_group(&policy, &scenarios[s], env, cfg, &mut grng)
            })
            .collect::<Result<_>>()?;
        let zero = groups.iter().filter(|g| g.is_zero_sigma()).count();
        let mean_reward = groups.iter().map(|g| g.mean).sum::<f64>() / groups.len() as f64;
        let used: Vec<RolloutGroup> = if cfg.drop_unimodal {
            groups.into_iter().filter(|g| !g.is_zero_sigma()).collect()
        } else {
            groups
        };
        let mut kl = 0.0;
        if !used.is_empty() {
            for epoch in 0..cfg.inner_epochs {
                let (parts, grad) = grpo_objective_and_grad(&params, sft, &used, cfg)?;
                if epoch == 0 {
                    kl = parts.kl;
                }
                let ascent: Vec<f64> = grad.as_slice().iter().map(|g| -g).collect();
                adam_step(params.as_mut_slice(), &ascent, &mut state, cfg.lr);
            }
        }
        let last = step + 1 == steps;
        let validation_pdms = if last || (env.validate_every > 0 && (step + 1) % env.validate_every == 0) {
            validate(&params)?
        } else {
            None
        };
        record.rows.push(TrainRow {
            step,
            mean_reward,
            zero_sigma_fraction: zero as f64 / picks.len() as f64,
            kl,
            groups_used: used.len(),
            validation_pdms,
        });
    }
    Ok((params, record))
}
