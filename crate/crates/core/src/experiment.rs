//! Desk-scale experiment runner: SFT variants (ground truth only or
//! expanded, with or without step-wise normalization), RL variants (ADAS
//! with the spanning or plain reward, and three sampling comparators), and
//! the evaluation sweeps that feed the metric tables and plot series.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adas::{run_outer_loops, AdasConfig, LoopRecord};
use crate::diagnostics::{diagnose, DiagnosticsReport, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::fte::{build_sft_dataset, FteConfig, SftDataset};
use crate::grpo::{run_rl, GrpoConfig, RlEnv, TrainRecord};
use crate::io::{self, config_hash, write_jsonl, Header};
use crate::policy::{
    train_sft, Checkpoint, Context, ContextFeatures, Policy, PolicyParams, SftConfig, SftSample, Shape, Tokenizer,
};
use crate::scoring::{RewardConfig, ScoringParams};
use crate::traj::{global_grid_stats, normalize, RAW_HALF_RANGE};
use crate::world::{generate_scenarios_with, scenario_seed, Scenario, WorldConfig};
use crate::Trajectory;

// Seed streams derived from the run seed.
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_EVAL: u64 = 2;
pub const STREAM_FTE: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_SFT: u64 = 5;
pub const STREAM_DIAG: u64 = 6;
pub const STREAM_RL: u64 = 7;
pub const STREAM_VALIDATION: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftVariant {
    GtOnly,
    GtOnlyNoSn,
    Fte,
    FteNoSn,
}

impl SftVariant {
    pub const ALL: [SftVariant; 4] = [SftVariant::GtOnly, SftVariant::GtOnlyNoSn, SftVariant::Fte, SftVariant::FteNoSn];

    pub fn name(self) -> &'static str {
        match self {
            SftVariant::GtOnly => "gt_only",
            SftVariant::GtOnlyNoSn => "gt_only_no_sn",
            SftVariant::Fte => "fte",
            SftVariant::FteNoSn => "fte_no_sn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn expanded(self) -> bool {
        matches!(self, SftVariant::Fte | SftVariant::FteNoSn)
    }

    pub fn step_normalized(self) -> bool {
        matches!(self, SftVariant::GtOnly | SftVariant::Fte)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlVariant {
    AdasSdr,
    AdasPdms,
    RandomSampling,
    HumanDifficulty,
    RejectUnimodal,
}

impl RlVariant {
    pub const ALL: [RlVariant; 5] = [
        RlVariant::AdasSdr,
        RlVariant::AdasPdms,
        RlVariant::RandomSampling,
        RlVariant::HumanDifficulty,
        RlVariant::RejectUnimodal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RlVariant::AdasSdr => "adas_sdr",
            RlVariant::AdasPdms => "adas_pdms",
            RlVariant::RandomSampling => "random_sampling",
            RlVariant::HumanDifficulty => "human_difficulty",
            RlVariant::RejectUnimodal => "reject_unimodal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    fn index(self) -> u64 {
        RlVariant::ALL.iter().position(|v| *v == self).expect("listed") as u64
    }
}

/// Policy architecture and supervised training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub tokenizer: Tokenizer,
    pub context: Context,
    pub sft: SftConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::default(),
            context: Context::SameAxis,
            sft: SftConfig {
                lr: 1e-2,
                batch_size: 256,
                steps: 2000,
                ..SftConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Scenarios used for supervised training (the first of the pool).
    pub train_size: usize,
    pub eval_size: usize,
    /// Scenarios available to RL sampling and filtration; the supervised
    /// set is its prefix.
    pub rl_pool_size: usize,
    pub k: usize,
    pub n: usize,
    pub diagnostics_temperature: f64,
    pub rl_steps: usize,
    /// Supervised checkpoint every RL variant starts from.
    pub rl_init: SftVariant,
    pub sft_variants: Vec<SftVariant>,
    pub rl_variants: Vec<RlVariant>,
    pub validation_k: usize,
    pub validate_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_size: 200,
            eval_size: 50,
            rl_pool_size: 2000,
            k: 8,
            n: 6,
            diagnostics_temperature: 1.0,
            rl_steps: 100,
            rl_init: SftVariant::Fte,
            sft_variants: SftVariant::ALL.to_vec(),
            rl_variants: RlVariant::ALL.to_vec(),
            validation_k: 32,
            validate_every: 10,
        }
    }
}

/// Every module's configuration in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the configuration hash.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub scoring: ScoringParams,
    pub fte: FteConfig,
    pub policy: PolicyConfig,
    pub grpo: GrpoConfig,
    pub adas: AdasConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: None,
            world: WorldConfig::default(),
            scoring: ScoringParams::default(),
            fte: FteConfig::default(),
            policy: PolicyConfig::default(),
            grpo: GrpoConfig::default(),
            adas: AdasConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.mix.validate()?;
        self.fte.validate()?;
        self.policy.tokenizer.validate()?;
        self.policy.sft.validate()?;
        self.grpo.validate()?;
        self.adas.validate()?;
        let e = &self.experiment;
        if e.train_size < 2 || e.eval_size == 0 {
            return Err(Error::invalid("experiment needs train_size >= 2 and eval_size >= 1"));
        }
        if e.k == 0 || e.n == 0 || e.validation_k == 0 {
            return Err(Error::invalid("k, n and validation_k must be >= 1"));
        }
        if !(e.diagnostics_temperature > 0.0 && e.diagnostics_temperature.is_finite()) {
            return Err(Error::invalid("diagnostics temperature must be > 0"));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// Seed of a named stream derived from the run seed.
    pub fn stream(&self, s: u64) -> u64 {
        scenario_seed(self.seed, s)
    }

    /// The RL pool (whose prefix is the supervised set) and the held-out
    /// evaluation scenarios.
    pub fn scenarios(&self) -> Result<(Vec<Scenario>, Vec<Scenario>)> {
        let e = &self.experiment;
        let pool = generate_scenarios_with(
            self.stream(STREAM_TRAIN),
            e.train_size.max(e.rl_pool_size),
            &self.world.mix,
            &self.scoring,
        )?;
        let eval = generate_scenarios_with(self.stream(STREAM_EVAL), e.eval_size, &self.world.mix, &self.scoring)?;
        Ok((pool, eval))
    }

    pub fn sft_dataset(&self, train: &[Scenario], expanded: bool) -> Result<SftDataset> {
        let cfg = FteConfig {
            enabled: expanded && self.fte.enabled,
            ..self.fte
        };
        build_sft_dataset(train, &cfg, &self.scoring, self.stream(STREAM_FTE))
    }
}

/// Tokenized supervision for a dataset under `stats`.
pub fn sft_samples(
    dataset: &SftDataset,
    scenarios: &[Scenario],
    tokenizer: &Tokenizer,
    stats: &crate::StepStats,
) -> Result<Vec<SftSample>> {
    let by_id: HashMap<&str, &Scenario> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    dataset
        .samples
        .iter()
        .map(|s| {
            let sc = by_id
                .get(s.scenario_id.as_str())
                .ok_or_else(|| Error::invalid(format!("dataset references unknown scenario {}", s.scenario_id)))?;
            Ok(SftSample {
                features: ContextFeatures::with_intent(sc, s.intent),
                tokens: tokenizer.tokenize(&normalize(&s.trajectory, stats)),
            })
        })
        .collect()
}

/// Diagnostics over `scenarios`, drawing `max(k, n)` trajectories per
/// scenario from `sampler` on a per-scenario seed stream.
pub fn evaluate_with<F>(
    scenarios: &[Scenario],
    k: usize,
    n: usize,
    scoring: &ScoringParams,
    seed: u64,
    sampler: F,
) -> Result<DiagnosticsReport>
where
    F: Fn(&Scenario, &mut ChaCha8Rng) -> Result<Trajectory> + Sync,
{
    let rows: Vec<DiagnosticsRow> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, i as u64));
            let pool = (0..k.max(n)).map(|_| sampler(s, &mut rng)).collect::<Result<Vec<_>>>()?;
            diagnose(s, &pool, k, n, scoring)
        })
        .collect::<Result<_>>()?;
    DiagnosticsReport::from_rows(rows)
}

/// Diagnostics of a policy sampled at `temperature`.
pub fn evaluate(
    policy: &Policy,
    scenarios: &[Scenario],
    k: usize,
    n: usize,
    temperature: f64,
    scoring: &ScoringParams,
    seed: u64,
) -> Result<DiagnosticsReport> {
    evaluate_with(scenarios, k, n, scoring, seed, |s, rng| {
        Ok(policy.sample(s, temperature, rng)?.trajectory)
    })
}

/// Difficulty stand-in: total heading change along the ground truth (rad)
/// plus a quarter point per agent.
pub fn human_difficulty(s: &Scenario) -> f64 {
    let pts = s.gt.with_origin();
    let mut turn = 0.0;
    let mut prev: Option<f64> = None;
    for w in pts.windows(2) {
        let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
        if dx.hypot(dy) < 1e-6 {
            continue;
        }
        let h = dy.atan2(dx);
        if let Some(p) = prev {
            turn += crate::world::geometry::wrap_angle(h - p).abs();
        }
        prev = Some(h);
    }
    turn + 0.25 * s.agents.len() as f64
}

/// The hardest quarter of `pool` by [`human_difficulty`] (ties keep pool
/// order).
pub fn hardest_quartile(pool: &[Scenario]) -> Vec<Scenario> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| human_difficulty(&pool[b]).total_cmp(&human_difficulty(&pool[a])).then(a.cmp(&b)));
    let keep = pool.len().div_ceil(4);
    let mut chosen: Vec<usize> = idx[..keep].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

/// One row of the supervised metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRow {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub samples: usize,
    pub final_loss: f64,
    pub k: usize,
    pub n: usize,
    pub mean_pade: Option<f64>,
    pub mean_pfde: Option<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
    pub mean_pdms: f64,
    pub bon_pdms: f64,
}

/// One row of the RL metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRow {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
    pub zero_sigma_fraction: f64,
    pub mean_reward_first10: f64,
    pub mean_reward_last10: f64,
    pub initial_validation_pdms: f64,
    pub final_validation_pdms: f64,
    /// Active-set size per outer loop, `/`-separated (ADAS variants only).
    pub active_set_sizes: String,
    pub mean_pade: Option<f64>,
    pub mean_pdms: f64,
    pub bon_pdms: f64,
}

/// In-memory results of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub sft: Vec<(SftVariant, SftRow, DiagnosticsReport)>,
    pub rl: Vec<(RlVariant, RlRow, DiagnosticsReport, RlLog)>,
    pub timings: Vec<(String, Duration)>,
}

impl ExperimentOutcome {
    pub fn sft_row(&self, v: SftVariant) -> Option<&SftRow> {
        self.sft.iter().find(|(x, ..)| *x == v).map(|(_, r, _)| r)
    }

    pub fn rl_row(&self, v: RlVariant) -> Option<&RlRow> {
        self.rl.iter().find(|(x, ..)| *x == v).map(|(_, r, ..)| r)
    }

    /// Every per-scenario diagnostics row across all evaluated checkpoints.
    pub fn all_diagnostics(&self) -> impl Iterator<Item = &DiagnosticsRow> {
        self.sft
            .iter()
            .flat_map(|(_, _, d)| d.rows.iter())
            .chain(self.rl.iter().flat_map(|(_, _, d, _)| d.rows.iter()))
    }

    pub fn timing(&self, phase: &str) -> Option<Duration> {
        self.timings.iter().find(|(p, _)| p == phase).map(|(_, d)| *d)
    }
}

/// Training log of one RL variant.
#[derive(Debug, Clone)]
pub enum RlLog {
    Flat(TrainRecord),
    Loops(Vec<LoopRecord>),
}

impl RlLog {
    pub fn rows(&self) -> Vec<(usize, &crate::grpo::TrainRow)> {
        match self {
            RlLog::Flat(r) => r.rows.iter().map(|x| (0, x)).collect(),
            RlLog::Loops(l) => l.iter().flat_map(|lr| lr.train.rows.iter().map(move |x| (lr.outer_loop, x))).collect(),
        }
    }

    pub fn initial_validation_pdms(&self) -> Option<f64> {
        match self {
            RlLog::Flat(r) => r.initial_validation_pdms,
            RlLog::Loops(l) => l.first().and_then(|x| x.train.initial_validation_pdms),
        }
    }

    pub fn final_validation_pdms(&self) -> Option<f64> {
        match self {
            RlLog::Flat(r) => r.final_validation_pdms(),
            RlLog::Loops(l) => l.iter().rev().find_map(|x| x.train.final_validation_pdms()),
        }
    }
}

/// Output locations under a run directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    fn path(&self, parts: &[&str]) -> PathBuf {
        let mut p = self.root.clone();
        for s in parts {
            p.push(s);
        }
        p
    }
    pub fn sft_table(&self) -> PathBuf {
        self.path(&["tables", "sft.csv"])
    }
    pub fn rl_table(&self) -> PathBuf {
        self.path(&["tables", "rl.csv"])
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("csv: {other:?}")),
    }
}

/// One point of a plotted curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub curve: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub file: String,
    pub x_label: String,
    pub y_label: String,
    pub curves: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub config_hash: String,
    pub series: Vec<PlotSeries>,
}

/// Trains one supervised variant on `dataset`, whose samples reference
/// scenarios in `train`.
pub fn train_sft_variant(
    cfg: &RunConfig,
    variant: SftVariant,
    dataset: &SftDataset,
    train: &[Scenario],
) -> Result<(Policy, crate::policy::SftRecord)> {
    let tk = cfg.policy.tokenizer;
    let stats = if variant.step_normalized() {
        dataset.stats.clone()
    } else {
        global_grid_stats(RAW_HALF_RANGE, tk.z_max)?
    };
    let data = sft_samples(dataset, train, &tk, &stats)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.stream(STREAM_INIT));
    let init = PolicyParams::init_shaped(Shape::with_context(tk.bins, cfg.policy.context), &mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream(STREAM_SFT));
    let (params, record) = train_sft(init, &data, &cfg.policy.sft, &mut rng)?;
    Ok((
        Policy {
            params,
            tokenizer: tk,
            stats,
        },
        record,
    ))
}

/// Diagnostics of `policy` on `eval` with the plan's `k`, `n` and
/// temperature.
pub fn evaluate_plan(cfg: &RunConfig, policy: &Policy, eval: &[Scenario]) -> Result<DiagnosticsReport> {
    let e = &cfg.experiment;
    evaluate(
        policy,
        eval,
        e.k,
        e.n,
        e.diagnostics_temperature,
        &cfg.scoring,
        cfg.stream(STREAM_DIAG),
    )
}

/// Trains one supervised variant and evaluates it on `eval`.
pub fn run_sft_variant(
    cfg: &RunConfig,
    variant: SftVariant,
    dataset: &SftDataset,
    train: &[Scenario],
    eval: &[Scenario],
) -> Result<(Policy, crate::policy::SftRecord, DiagnosticsReport)> {
    let (policy, record) = train_sft_variant(cfg, variant, dataset, train)?;
    let report = evaluate_plan(cfg, &policy, eval)?;
    Ok((policy, record, report))
}

/// Runs one RL variant from `init`.
pub fn run_rl_variant(
    cfg: &RunConfig,
    variant: RlVariant,
    init: &Policy,
    pool: &[Scenario],
    eval: &[Scenario],
) -> Result<(Policy, RlLog)> {
    let e = &cfg.experiment;
    let reward = match variant {
        RlVariant::AdasPdms => RewardConfig::pdms(),
        _ => RewardConfig::sdr(),
    };
    let env = RlEnv {
        tokenizer: init.tokenizer,
        stats: init.stats.clone(),
        scoring: cfg.scoring,
        reward,
        validation: eval.to_vec(),
        validation_k: e.validation_k,
        validate_every: e.validate_every,
        validation_seed: cfg.stream(STREAM_VALIDATION),
    };
    let seed = scenario_seed(cfg.stream(STREAM_RL), variant.index());
    let sft = &init.params;
    let (params, log) = match variant {
        RlVariant::AdasSdr | RlVariant::AdasPdms => {
            let (p, loops) = run_outer_loops(sft.clone(), sft, pool, &env, &cfg.adas, &cfg.grpo, e.rl_steps, seed)?;
            (p, RlLog::Loops(loops))
        }
        RlVariant::RandomSampling | RlVariant::RejectUnimodal | RlVariant::HumanDifficulty => {
            let grpo = GrpoConfig {
                drop_unimodal: variant == RlVariant::RejectUnimodal,
                ..cfg.grpo
            };
            let set = if variant == RlVariant::HumanDifficulty {
                hardest_quartile(pool)
            } else {
                pool.to_vec()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, rec) = run_rl(sft.clone(), sft, &set, &env, &grpo, e.rl_steps, &mut rng)?;
            (p, RlLog::Flat(rec))
        }
    };
    Ok((env.policy(params), log))
}

fn rl_row(cfg: &RunConfig, hash: &str, variant: RlVariant, log: &RlLog, report: &DiagnosticsReport) -> RlRow {
    let rows = log.rows();
    let rewards: Vec<f64> = rows.iter().map(|(_, r)| r.mean_reward).collect();
    let head = rewards.len().min(10);
    RlRow {
        variant: variant.name().into(),
        seed: cfg.seed,
        config_hash: hash.into(),
        steps: rows.len(),
        zero_sigma_fraction: mean(rows.iter().map(|(_, r)| r.zero_sigma_fraction)),
        mean_reward_first10: mean(rewards[..head].iter().copied()),
        mean_reward_last10: mean(rewards[rewards.len() - head..].iter().copied()),
        initial_validation_pdms: log.initial_validation_pdms().unwrap_or(f64::NAN),
        final_validation_pdms: log.final_validation_pdms().unwrap_or(f64::NAN),
        active_set_sizes: match log {
            RlLog::Loops(l) => l.iter().map(|x| x.active_set_size.to_string()).collect::<Vec<_>>().join("/"),
            RlLog::Flat(_) => String::new(),
        },
        mean_pade: report.summary.mean_pade,
        mean_pdms: report.summary.mean_pdms,
        bon_pdms: report.summary.bon_pdms,
    }
}

#[derive(Serialize)]
struct SftLogRow {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainLogRow<'a> {
    outer_loop: usize,
    #[serde(flatten)]
    row: &'a crate::grpo::TrainRow,
}

#[derive(Serialize)]
struct LedgerRow<'a> {
    outer_loop: usize,
    #[serde(flatten)]
    entry: &'a crate::adas::LedgerEntry,
}

/// Runs the full plan and, when `out` is given, writes every artifact
/// below it.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let e = &cfg.experiment;
    let layout = out.map(Layout::new);
    let mut timings = Vec::new();

    let t = Instant::now();
    let (pool, eval) = cfg.scenarios()?;
    let train = &pool[..e.train_size];
    timings.push(("scenarios".to_string(), t.elapsed()));
    if let Some(l) = &layout {
        write_jsonl(&l.path(&["scenarios", "train.jsonl"]), &Header::new(io::SCENARIOS, &hash), train)?;
        write_jsonl(&l.path(&["scenarios", "eval.jsonl"]), &Header::new(io::SCENARIOS, &hash), &eval)?;
        write_jsonl(&l.path(&["scenarios", "rl_pool.jsonl"]), &Header::new(io::SCENARIOS, &hash), &pool)?;
    }

    let mut needed: Vec<SftVariant> = e.sft_variants.clone();
    if !e.rl_variants.is_empty() && !needed.contains(&e.rl_init) {
        needed.push(e.rl_init);
    }
    let mut datasets: HashMap<bool, SftDataset> = HashMap::new();
    let mut sft = Vec::new();
    let mut rl_init: Option<Policy> = None;
    for variant in needed {
        let t = Instant::now();
        if let std::collections::hash_map::Entry::Vacant(slot) = datasets.entry(variant.expanded()) {
            let ds = cfg.sft_dataset(train, variant.expanded())?;
            if let Some(l) = &layout {
                let name = if variant.expanded() { "fte" } else { "gt_only" };
                write_jsonl(
                    &l.path(&["datasets", &format!("{name}.jsonl")]),
                    &Header::new(io::SFT_DATASET, &hash),
                    &ds.samples,
                )?;
                write_jsonl(
                    &l.path(&["datasets", &format!("{name}.stats.jsonl")]),
                    &Header::new(io::STEP_STATS, &hash),
                    std::slice::from_ref(&ds.stats),
                )?;
            }
            slot.insert(ds);
        }
        let ds = &datasets[&variant.expanded()];
        let (policy, record, report) = run_sft_variant(cfg, variant, ds, train, &eval)?;
        timings.push((format!("sft/{}", variant.name()), t.elapsed()));
        if let Some(l) = &layout {
            let ck = Checkpoint {
                policy: policy.clone(),
                config_hash: hash.clone(),
            };
            let dir = l.path(&["checkpoints"]);
            fs::create_dir_all(&dir)?;
            ck.save(&dir.join(format!("sft_{}.ckpt", variant.name())))?;
            let log: Vec<SftLogRow> = record
                .loss
                .iter()
                .enumerate()
                .map(|(step, &loss)| SftLogRow { step, loss })
                .collect();
            write_jsonl(
                &l.path(&["logs", &format!("sft_{}.jsonl", variant.name())]),
                &Header::new(io::SFT_LOG, &hash),
                &log,
            )?;
            write_jsonl(
                &l.path(&["diagnostics", &format!("sft_{}.jsonl", variant.name())]),
                &Header::new(io::DIAGNOSTICS, &hash),
                &report.rows,
            )?;
        }
        if variant == e.rl_init {
            rl_init = Some(policy);
        }
        if e.sft_variants.contains(&variant) {
            let s = &report.summary;
            let row = SftRow {
                variant: variant.name().into(),
                seed: cfg.seed,
                config_hash: hash.clone(),
                samples: ds.samples.len(),
                final_loss: mean(record.loss.iter().rev().take(50).copied()),
                k: s.k,
                n: s.n,
                mean_pade: s.mean_pade,
                mean_pfde: s.mean_pfde,
                min_ade: s.min_ade,
                min_fde: s.min_fde,
                mean_pdms: s.mean_pdms,
                bon_pdms: s.bon_pdms,
            };
            sft.push((variant, row, report));
        }
    }

    // A comparator whose later outer loop filters to nothing ends early and
    // is reported with fewer steps rather than failing the whole plan.
    let mut rl_cfg = cfg.clone();
    rl_cfg.adas.stop_when_empty = true;
    let mut rl = Vec::new();
    if let Some(init) = &rl_init {
        for &variant in &e.rl_variants {
            let t = Instant::now();
            let (policy, log) = run_rl_variant(&rl_cfg, variant, init, &pool, &eval)?;
            let report = evaluate_plan(cfg, &policy, &eval)?;
            timings.push((format!("rl/{}", variant.name()), t.elapsed()));
            let row = rl_row(cfg, &hash, variant, &log, &report);
            if let Some(l) = &layout {
                Checkpoint {
                    policy: policy.clone(),
                    config_hash: hash.clone(),
                }
                .save(&l.path(&["checkpoints", &format!("rl_{}.ckpt", variant.name())]))?;
                let rows: Vec<TrainLogRow> = log
                    .rows()
                    .into_iter()
                    .map(|(outer_loop, row)| TrainLogRow { outer_loop, row })
                    .collect();
                write_jsonl(
                    &l.path(&["logs", &format!("rl_{}.jsonl", variant.name())]),
                    &Header::new(io::TRAIN_LOG, &hash),
                    &rows,
                )?;
                if let RlLog::Loops(loops) = &log {
                    let ledger: Vec<LedgerRow> = loops
                        .iter()
                        .flat_map(|lr| lr.active_set.entries.iter().map(move |entry| LedgerRow {
                            outer_loop: lr.outer_loop,
                            entry,
                        }))
                        .collect();
                    write_jsonl(
                        &l.path(&["logs", &format!("adas_ledger_{}.jsonl", variant.name())]),
                        &Header::new(io::ADAS_LEDGER, &hash),
                        &ledger,
                    )?;
                }
                write_jsonl(
                    &l.path(&["diagnostics", &format!("rl_{}.jsonl", variant.name())]),
                    &Header::new(io::DIAGNOSTICS, &hash),
                    &report.rows,
                )?;
            }
            rl.push((variant, row, report, log));
        }
    }

    let outcome = ExperimentOutcome {
        config_hash: hash,
        sft,
        rl,
        timings,
    };
    if let Some(l) = &layout {
        write_tables(l, &outcome)?;
        write_plots(l, &outcome)?;
    }
    Ok(outcome)
}

fn write_tables(l: &Layout, o: &ExperimentOutcome) -> Result<()> {
    let sft: Vec<&SftRow> = o.sft.iter().map(|(_, r, _)| r).collect();
    let rl: Vec<&RlRow> = o.rl.iter().map(|(_, r, ..)| r).collect();
    write_csv(&l.sft_table(), &sft)?;
    write_csv(&l.rl_table(), &rl)
}

fn write_plots(l: &Layout, o: &ExperimentOutcome) -> Result<()> {
    let mut series = Vec::new();
    let mut emit = |file: &str, x_label: &str, y_label: &str, points: Vec<PlotPoint>| -> Result<()> {
        let mut curves: Vec<String> = Vec::new();
        for p in &points {
            if !curves.contains(&p.curve) {
                curves.push(p.curve.clone());
            }
        }
        write_csv(&l.path(&["plots", file]), &points)?;
        series.push(PlotSeries {
            file: file.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            curves,
        });
        Ok(())
    };
    let per_step = |f: &dyn Fn(&crate::grpo::TrainRow) -> Option<f64>| -> Vec<PlotPoint> {
        o.rl.iter()
            .flat_map(|(v, _, _, log)| {
                log.rows()
                    .into_iter()
                    .enumerate()
                    .filter_map(|(i, (_, r))| {
                        f(r).map(|y| PlotPoint {
                            curve: v.name().into(),
                            x: i as f64,
                            y,
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    emit("rl_mean_reward.csv", "step", "mean reward", per_step(&|r| Some(r.mean_reward)))?;
    emit(
        "rl_zero_sigma_fraction.csv",
        "step",
        "fraction of zero-variance groups",
        per_step(&|r| Some(r.zero_sigma_fraction)),
    )?;
    emit("rl_kl.csv", "step", "KL to SFT", per_step(&|r| Some(r.kl)))?;
    emit(
        "rl_validation_pdms.csv",
        "step",
        "validation PDMS",
        per_step(&|r| r.validation_pdms),
    )?;
    let sft_loss: Vec<PlotPoint> = o
        .sft
        .iter()
        .map(|(v, r, _)| PlotPoint {
            curve: v.name().into(),
            x: 0.0,
            y: r.final_loss,
        })
        .collect();
    emit("sft_final_loss.csv", "-", "final SFT loss", sft_loss)?;
    let diversity_vs_pdms: Vec<PlotPoint> = o
        .sft
        .iter()
        .map(|(v, r, _)| (v.name(), r.mean_pade, r.mean_pdms))
        .chain(o.rl.iter().map(|(v, r, ..)| (v.name(), r.mean_pade, r.mean_pdms)))
        .filter_map(|(name, x, y)| {
            x.map(|x| PlotPoint {
                curve: name.into(),
                x,
                y,
            })
        })
        .collect();
    emit("diversity_vs_pdms.csv", "mean pADE", "mean PDMS", diversity_vs_pdms)?;
    let manifest = PlotManifest {
        config_hash: o.config_hash.clone(),
        series,
    };
    fs::write(l.path(&["plots", "manifest.json"]), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Rewrites a seed from user input into the config (used by `--seed`).
pub fn with_seed(mut cfg: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}
