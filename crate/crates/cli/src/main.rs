use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trajlab::adas::LoopRecord;
use trajlab::experiment::{self, RlLog, RlVariant, RunConfig, SftVariant};
use trajlab::fte::{SftDataset, SupervisionSample};
use trajlab::grpo::TrainRow;
use trajlab::io::{self, read_jsonl, write_jsonl, Header, TrajectoryRecord};
use trajlab::policy::Checkpoint;
use trajlab::scoring::score_record;
use trajlab::world::Scenario;
use trajlab::{Error, Result, StepStats};

#[derive(Parser, Debug)]
#[command(name = "trajlab", version, about = "Tokenized trajectory imitation and group-relative RL laboratory")]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "TRAJLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the training pool and evaluation scenarios.
    Gen,
    /// Build the supervised dataset (ground truth plus expansions).
    Expand(ExpandArgs),
    /// Supervised training on a dataset.
    Sft(SftArgs),
    /// RL from a checkpoint (ADAS outer loops by default).
    Rl(RlArgs),
    /// Score trajectories against their scenarios.
    Score(ScoreArgs),
    /// Behavioral diagnostics of a checkpoint.
    Diagnose(DiagnoseArgs),
    /// Run the full plan: every SFT and RL variant, tables and plot data.
    Experiment(EvalArgs),
}

#[derive(Args, Debug)]
struct ExpandArgs {
    #[arg(long)]
    scenarios: PathBuf,
    /// Emit ground truth only.
    #[arg(long)]
    no_expand: bool,
}

#[derive(Args, Debug)]
struct SftArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Scenarios the dataset refers to.
    #[arg(long)]
    scenarios: PathBuf,
    /// Step statistics sidecar (default: `<dataset stem>.stats.jsonl`).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Use the fixed global grid instead of step-wise normalization.
    #[arg(long)]
    no_sn: bool,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct RlArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario pool for filtration and rollouts.
    #[arg(long)]
    scenarios: PathBuf,
    /// Validation scenarios.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, default_value = "adas_sdr")]
    variant: String,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Samples per scenario for diversity, quality and mean PDMS.
    #[arg(long)]
    k: Option<usize>,
    /// Samples per scenario for Best-of-N.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {}", path.display(), e.message())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn read_scenarios(path: &Path, cfg: &RunConfig) -> Result<Vec<Scenario>> {
    let (_, scenarios): (_, Vec<Scenario>) = read_jsonl(path, io::SCENARIOS)?;
    for s in &scenarios {
        s.validate(&cfg.scoring.footprint)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    }
    Ok(scenarios)
}

fn stats_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.stats.jsonl"))
}

fn read_dataset(path: &Path, stats: &Path) -> Result<SftDataset> {
    let (_, samples): (_, Vec<SupervisionSample>) = read_jsonl(path, io::SFT_DATASET)?;
    let (_, mut stats): (_, Vec<StepStats>) = read_jsonl(stats, io::STEP_STATS)?;
    if stats.len() != 1 {
        return Err(Error::Schema(format!("expected one step-statistics record, found {}", stats.len())));
    }
    let stats = stats.remove(0);
    stats.validate()?;
    Ok(SftDataset { samples, stats })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

#[derive(Serialize)]
struct LogRow<'a> {
    outer_loop: usize,
    #[serde(flatten)]
    row: &'a TrainRow,
}

#[derive(Serialize)]
struct LedgerRow<'a> {
    outer_loop: usize,
    #[serde(flatten)]
    entry: &'a trajlab::adas::LedgerEntry,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::InvalidInput("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    }
    let hash = cfg.hash()?;
    let out = out_dir(&cfg);
    match cli.cmd {
        Cmd::Gen => {
            let (pool, eval) = cfg.scenarios()?;
            let train = &pool[..cfg.experiment.train_size];
            let header = Header::new(io::SCENARIOS, &hash);
            write_jsonl(&out.join("train.jsonl"), &header, train)?;
            write_jsonl(&out.join("rl_pool.jsonl"), &header, &pool)?;
            write_jsonl(&out.join("eval.jsonl"), &header, &eval)?;
            print_json(&serde_json::json!({
                "config_hash": hash, "train": train.len(), "rl_pool": pool.len(), "eval": eval.len()
            }))
        }
        Cmd::Expand(a) => {
            let scenarios = read_scenarios(&a.scenarios, &cfg)?;
            let ds = cfg.sft_dataset(&scenarios, !a.no_expand)?;
            let path = out.join("dataset.jsonl");
            write_jsonl(&path, &Header::new(io::SFT_DATASET, &hash), &ds.samples)?;
            write_jsonl(&stats_path(&path), &Header::new(io::STEP_STATS, &hash), std::slice::from_ref(&ds.stats))?;
            print_json(&serde_json::json!({
                "config_hash": hash, "scenarios": scenarios.len(), "records": ds.samples.len()
            }))
        }
        Cmd::Sft(a) => {
            let mut cfg = cfg;
            if let Some(s) = a.steps {
                cfg.policy.sft.steps = s;
            }
            let hash = cfg.hash()?;
            let scenarios = read_scenarios(&a.scenarios, &cfg)?;
            let ds = read_dataset(&a.dataset, &a.stats.unwrap_or_else(|| stats_path(&a.dataset)))?;
            let variant = if a.no_sn { SftVariant::FteNoSn } else { SftVariant::Fte };
            let (policy, record) = experiment::train_sft_variant(&cfg, variant, &ds, &scenarios)?;
            fs::create_dir_all(&out)?;
            Checkpoint {
                policy,
                config_hash: hash.clone(),
            }
            .save(&out.join("sft.ckpt"))?;
            let log: Vec<serde_json::Value> = record
                .loss
                .iter()
                .enumerate()
                .map(|(step, loss)| serde_json::json!({"step": step, "loss": loss}))
                .collect();
            write_jsonl(&out.join("sft_log.jsonl"), &Header::new(io::SFT_LOG, &hash), &log)?;
            print_json(&serde_json::json!({
                "config_hash": hash, "steps": record.loss.len(), "final_loss": record.loss.last()
            }))
        }
        Cmd::Rl(a) => {
            let mut cfg = cfg;
            if let Some(s) = a.steps {
                cfg.experiment.rl_steps = s;
            }
            let hash = cfg.hash()?;
            let variant = RlVariant::from_name(&a.variant).ok_or_else(|| {
                let names: Vec<&str> = RlVariant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidInput(format!("unknown RL variant {:?}; expected one of {}", a.variant, names.join(", ")))
            })?;
            let init = Checkpoint::load(&a.checkpoint)?.policy;
            let pool = read_scenarios(&a.scenarios, &cfg)?;
            let eval = match &a.eval {
                Some(p) => read_scenarios(p, &cfg)?,
                None => Vec::new(),
            };
            let (policy, log) = experiment::run_rl_variant(&cfg, variant, &init, &pool, &eval)?;
            fs::create_dir_all(&out)?;
            Checkpoint {
                policy,
                config_hash: hash.clone(),
            }
            .save(&out.join("rl.ckpt"))?;
            let rows: Vec<LogRow> = log.rows().into_iter().map(|(outer_loop, row)| LogRow { outer_loop, row }).collect();
            write_jsonl(&out.join("rl_log.jsonl"), &Header::new(io::TRAIN_LOG, &hash), &rows)?;
            let mut sizes = Vec::new();
            if let RlLog::Loops(loops) = &log {
                let ledger: Vec<LedgerRow> = loops
                    .iter()
                    .flat_map(|l: &LoopRecord| {
                        l.active_set.entries.iter().map(move |entry| LedgerRow {
                            outer_loop: l.outer_loop,
                            entry,
                        })
                    })
                    .collect();
                write_jsonl(&out.join("adas_ledger.jsonl"), &Header::new(io::ADAS_LEDGER, &hash), &ledger)?;
                sizes = loops.iter().map(|l| l.active_set_size).collect();
            }
            print_json(&serde_json::json!({
                "config_hash": hash,
                "variant": variant.name(),
                "steps": rows.len(),
                "active_set_sizes": sizes,
                "initial_validation_pdms": log.initial_validation_pdms(),
                "final_validation_pdms": log.final_validation_pdms(),
            }))
        }
        Cmd::Score(a) => {
            let scenarios = read_scenarios(&a.scenarios, &cfg)?;
            let by_id: HashMap<&str, &Scenario> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
            let (_, trajs): (_, Vec<TrajectoryRecord>) = read_jsonl(&a.trajectories, io::TRAJECTORIES)?;
            let records = trajs
                .iter()
                .map(|t| {
                    let s = by_id
                        .get(t.scenario_id.as_str())
                        .ok_or_else(|| Error::InvalidInput(format!("unknown scenario {}", t.scenario_id)))?;
                    Ok(score_record(&t.trajectory, s, &cfg.scoring))
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&out.join("scores.jsonl"), &Header::new(io::SCORES, &hash), &records)?;
            let mean = |f: fn(&trajlab::scoring::ScoreRecord) -> f64| {
                if records.is_empty() {
                    0.0
                } else {
                    records.iter().map(f).sum::<f64>() / records.len() as f64
                }
            };
            print_json(&serde_json::json!({
                "config_hash": hash,
                "records": records.len(),
                "mean_pdms": mean(|r| r.pdms),
                "mean_epdms": mean(|r| r.epdms),
                "mean_sdr": mean(|r| r.sdr),
            }))
        }
        Cmd::Diagnose(a) => {
            let mut cfg = cfg;
            apply_eval(&mut cfg, &a.eval)?;
            let hash = cfg.hash()?;
            let policy = Checkpoint::load(&a.checkpoint)?.policy;
            let scenarios = read_scenarios(&a.scenarios, &cfg)?;
            let report = experiment::evaluate_plan(&cfg, &policy, &scenarios)?;
            write_jsonl(&out.join("diagnostics.jsonl"), &Header::new(io::DIAGNOSTICS, &hash), &report.rows)?;
            print_json(&serde_json::json!({"config_hash": hash, "summary": report.summary}))
        }
        Cmd::Experiment(a) => {
            let mut cfg = cfg;
            apply_eval(&mut cfg, &a)?;
            let outcome = experiment::run_experiment(&cfg, Some(&out))?;
            for (phase, d) in &outcome.timings {
                eprintln!("{phase}: {:.1}s", d.as_secs_f64());
            }
            print_json(&serde_json::json!({
                "config_hash": outcome.config_hash,
                "sft_table": out.join("tables/sft.csv"),
                "rl_table": out.join("tables/rl.csv"),
            }))
        }
    }
}

fn apply_eval(cfg: &mut RunConfig, a: &EvalArgs) -> Result<()> {
    if let Some(k) = a.k {
        cfg.experiment.k = k;
    }
    if let Some(n) = a.n {
        cfg.experiment.n = n;
    }
    cfg.validate()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
