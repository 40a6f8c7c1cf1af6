//! The `pgot` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 detector abort,
//! 3 file error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::detector::DetectorKind;
use crate::error::{Error, Result};
use crate::metrics::{
    distribution_stats, write_metrics_csv, MetricsRow, PairedEvaluation, DEFAULT_BINS,
};
use crate::pareto::{frontier_indices, RewardVector};
use crate::store::FrontierStore;
use crate::testbed::{build_suite, PolicyState, RewardKind, Suite};
use crate::trainer::record::{read_metrics_csv, write_records_csv};
use crate::trainer::{
    evaluate_policy, evaluation_noise, precompute_frontiers, run_with, Checkpoint, Method,
    ModeSchedule, RunOptions, TrainingConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "pgot",
    version,
    about = "Pareto-frontier-guided transport experiments on a synthetic testbed"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic suite and print its per-prompt bounds.
    Suite(SuiteArgs),
    /// Sample candidates from the base policy and store per-prompt frontiers.
    Precompute(PrecomputeArgs),
    /// Run a training schedule and write its run directory.
    Train(TrainArgs),
    /// Compare two runs on paired fixed-noise samples.
    Eval(EvalArgs),
    /// Emit CSV data behind frontier, curve, bound and statistics plots.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long, default_value_t = 20)]
    pub prompts: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "suite.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Candidates per prompt.
    #[arg(long = "M", short = 'm', default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "frontiers.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Training config JSON; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frontier store; computed from the base policy when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub schedule: Option<ModeSchedule>,
    /// Comma-separated per-reward weights, e.g. 2,3,2,3.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Comma-separated initially active reward indices.
    #[arg(long, value_delimiter = ',')]
    pub active: Option<Vec<usize>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorKindArg>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run directory name under --out; defaults to the method name.
    #[arg(long)]
    pub label: Option<String>,
    /// Replace an existing run directory with the same label.
    #[arg(long)]
    pub force: bool,
    /// Write every transport plan to plans.jsonl.
    #[arg(long)]
    pub dump_plans: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DetectorKindArg {
    Oracle,
    Statistical,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Compare against this checkpoint of the baseline run instead of its
    /// final policy (0 = the untrained generator).
    #[arg(long)]
    pub baseline_checkpoint: Option<u64>,
    /// Suite file; defaults to the copy stored in the candidate run.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// Run directories to include.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "plot-data")]
    pub out: PathBuf,
    /// Suite file; defaults to the copy stored in the first run.
    #[arg(long)]
    pub suite: Option<PathBuf>,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DetectorAbort { .. } => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the exit code. Output goes to
/// `out`, diagnostics to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Suite(a) => cmd_suite(&a, out),
        Command::Precompute(a) => cmd_precompute(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::PlotData(a) => cmd_plot_data(&a, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn kind_name(k: RewardKind) -> &'static str {
    match k {
        RewardKind::Strong => "strong",
        RewardKind::Weak => "weak",
    }
}

pub fn cmd_suite(a: &SuiteArgs, out: &mut dyn Write) -> Result<()> {
    let suite = build_suite(a.prompts, a.dim, a.seed)?;
    write_text(&a.out, &(suite.to_json()? + "\n"))?;
    let io = |r: std::io::Result<()>| r.map_err(stdout_err);
    io(write!(out, "{:<8} {:>7}", "prompt", "radius"))?;
    for (k, kind) in suite.kinds.iter().enumerate() {
        io(write!(
            out,
            " {:>12}",
            format!("R{k}({})", kind_name(*kind))
        ))?;
    }
    io(writeln!(out))?;
    for p in &suite.prompts {
        io(write!(out, "{:<8} {:>7.3}", p.prompt_id, p.radius))?;
        for b in &p.bounds {
            io(write!(out, " {:>12.4}", b))?;
        }
        io(writeln!(out))?;
    }
    io(writeln!(out, "wrote {}", a.out.display()))
}

pub fn cmd_precompute(a: &PrecomputeArgs, out: &mut dyn Write) -> Result<()> {
    let suite = Suite::load(&a.suite)?;
    let store = precompute_frontiers(&PolicyState::base(&suite), &suite, a.m, a.seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    store.save(&a.out)?;
    let mut sizes = store.sizes();
    sizes.sort_unstable();
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    writeln!(
        out,
        "{} frontiers from M = {}: q min {} median {} max {} mean {:.2}\nwrote {}",
        sizes.len(),
        a.m,
        sizes[0],
        sizes[sizes.len() / 2],
        sizes[sizes.len() - 1],
        mean,
        a.out.display()
    )
    .map_err(stdout_err)
}

fn resolve_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut c = match &a.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(m) = a.method {
        c.method = m;
    }
    if let Some(s) = a.schedule {
        c.mode_schedule = s;
    }
    if let Some(w) = &a.weights {
        c.weights = w.clone();
    }
    if let Some(act) = &a.active {
        c.active_rewards = Some(act.clone());
    }
    if let Some(e) = a.epsilon {
        c.epsilon = e;
    }
    if let Some(lr) = a.learning_rate {
        c.learning_rate = lr;
    }
    if let Some(s) = a.steps {
        c.steps = s;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(d) = a.detector {
        c.detector.kind = match d {
            DetectorKindArg::Oracle => DetectorKind::Oracle,
            DetectorKindArg::Statistical => DetectorKind::Statistical,
        };
    }
    Ok(c)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let suite = Suite::load(&a.suite)?;
    let config = resolve_config(a)?;
    config.validate(suite.reward_count())?;
    let store = a.store.as_deref().map(FrontierStore::load).transpose()?;
    let label = a
        .label
        .clone()
        .unwrap_or_else(|| config.method.as_str().to_string());
    let dir = a.out.join(&label);
    if dir.exists() {
        if !a.force {
            return Err(Error::Config(format!(
                "run directory {} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write_text(&dir.join("config.json"), &config.to_json())?;
    write_text(&dir.join("suite.json"), &(suite.to_json()? + "\n"))?;

    let options = RunOptions {
        dump_plans: a.dump_plans,
        checkpoint_dir: Some(ckpt_dir),
    };
    let output = run_with(&config, &suite, store.as_ref(), options)?;
    write_records_csv(&dir.join("records.csv"), &output.records)?;
    write_text(
        &dir.join("final_policy.json"),
        &to_json(&output.final_policy),
    )?;
    write_text(&dir.join("events.json"), &to_json(&output.events))?;
    write_text(
        &dir.join("observations.json"),
        &to_json(&output.observations),
    )?;
    if a.dump_plans {
        let mut text = String::new();
        for p in &output.plans {
            text.push_str(&serde_json::to_string(p).expect("serializable"));
            text.push('\n');
        }
        write_text(&dir.join("plans.jsonl"), &text)?;
    }

    let io = |r: std::io::Result<()>| r.map_err(stdout_err);
    for e in &output.events {
        io(writeln!(
            out,
            "step {:>5}: {}{} ({})",
            e.step,
            e.decision.action.as_str(),
            e.decision
                .flagged_reward
                .map(|k| format!(" reward {k}"))
                .unwrap_or_default(),
            e.decision.rationale
        ))?;
    }
    if let Some(last) = output.records.last() {
        io(writeln!(
            out,
            "final step {}: JDR2 {:.2}  JDR4 {:.2}  JCR4 {:.2}  hacked {}",
            last.metrics.step, last.metrics.jdr2, last.metrics.jdr4, last.metrics.jcr4, last.hacked
        ))?;
    }
    io(writeln!(out, "wrote {}", dir.display()))
}

/// Policy of a run directory: a checkpoint, or the final policy.
fn run_policy(dir: &Path, checkpoint: Option<u64>) -> Result<PolicyState> {
    match checkpoint {
        Some(step) => Ok(
            Checkpoint::load(&crate::trainer::checkpoint::checkpoint_path(
                &dir.join("checkpoints"),
                step,
            ))?
            .policy,
        ),
        None => {
            let path = dir.join("final_policy.json");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e))
        }
    }
}

fn run_config(dir: &Path) -> Result<TrainingConfig> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    TrainingConfig::from_json(&text).map_err(|e| Error::format(&path, e))
}

fn run_suite(dir: &Path, explicit: Option<&Path>) -> Result<Suite> {
    Suite::load(
        &explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.join("suite.json")),
    )
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let suite = run_suite(&a.candidate, a.suite.as_deref())?;
    let cand_cfg = run_config(&a.candidate)?;
    let base_cfg = run_config(&a.baseline)?;
    if cand_cfg.seed != base_cfg.seed || cand_cfg.eval_samples != base_cfg.eval_samples {
        return Err(Error::Pairing(format!(
            "runs use different evaluation seeds ({} vs {}) or sample counts ({} vs {})",
            cand_cfg.seed, base_cfg.seed, cand_cfg.eval_samples, base_cfg.eval_samples
        )));
    }
    if a.suite.is_none() {
        let other = run_suite(&a.baseline, None)?;
        if other != suite {
            return Err(Error::Pairing(
                "runs were trained on different suites".into(),
            ));
        }
    }
    let candidate = run_policy(&a.candidate, None)?;
    let baseline = run_policy(&a.baseline, a.baseline_checkpoint)?;
    candidate.validate(&suite)?;
    baseline.validate(&suite)?;
    let noise = evaluation_noise(&suite, cand_cfg.seed, cand_cfg.eval_samples);
    let cand = evaluate_policy(&suite, &candidate, &noise);
    let base = evaluate_policy(&suite, &baseline, &noise);
    let stats = distribution_stats(&cand, &base, DEFAULT_BINS)?;
    let pairing = PairedEvaluation::full(cand, base)?;
    let row = MetricsRow::from_pairing(candidate.step, &pairing, &cand_cfg.jdr2_subset, &stats)?;
    if let Some(path) = &a.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_metrics_csv(path, std::slice::from_ref(&row))?;
    }
    let names: Vec<String> = suite
        .kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| format!("win_{k}({})", &kind_name(*kind)[..1]))
        .collect();
    crate::metrics::comparison_table(&row, &names, out).map_err(stdout_err)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e))
}

pub fn cmd_plot_data(a: &PlotDataArgs, out: &mut dyn Write) -> Result<()> {
    let suite = run_suite(&a.runs[0], a.suite.as_deref())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let k = suite.reward_count();
    let first_cfg = run_config(&a.runs[0])?;
    let noise = evaluation_noise(&suite, first_cfg.seed, first_cfg.eval_samples);
    let pair = first_cfg.jdr2_subset.clone();

    let mut methods: Vec<(String, PolicyState)> = vec![("base".into(), PolicyState::base(&suite))];
    let mut curves: Vec<(String, Vec<MetricsRow>)> = Vec::new();
    for dir in &a.runs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let policy = run_policy(dir, None)?;
        policy.validate(&suite)?;
        methods.push((label.clone(), policy));
        let rows = read_metrics_csv(&dir.join("records.csv"))?;
        curves.push((label, rows.into_iter().map(|(r, _)| r).collect()));
    }

    // frontier scatter over the jdr2 reward pair
    let path = a.out.join("frontier.csv");
    let mut w = csv_writer(&path)?;
    let fmt = |e: csv::Error| Error::format(&path, e);
    w.write_record(["prompt_id", "method", "r1", "r2", "on_frontier"])
        .map_err(fmt)?;
    let n = first_cfg.eval_samples;
    for (label, policy) in &methods {
        let rewards = evaluate_policy(&suite, policy, &noise);
        for (i, chunk) in rewards.chunks(n).enumerate() {
            let pts: Vec<RewardVector> = chunk
                .iter()
                .map(|r| r.select(&pair))
                .collect::<Result<_>>()?;
            let on = frontier_indices(&pts)?;
            for (j, p) in pts.iter().enumerate() {
                w.write_record([
                    suite.prompts[i].prompt_id.clone(),
                    label.clone(),
                    format!("{:?}", p[0]),
                    format!("{:?}", p[p.len().min(2) - 1]),
                    on.binary_search(&j).is_ok().to_string(),
                ])
                .map_err(fmt)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = a.out.join("curves.csv");
    let mut w = csv_writer(&path)?;
    let fmt = |e: csv::Error| Error::format(&path, e);
    w.write_record(["step", "method", "jdr2", "jdr4", "jcr4"])
        .map_err(fmt)?;
    for (label, rows) in &curves {
        for r in rows {
            w.write_record([
                r.step.to_string(),
                label.clone(),
                format!("{:?}", r.jdr2),
                format!("{:?}", r.jdr4),
                format!("{:?}", r.jcr4),
            ])
            .map_err(fmt)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = a.out.join("stats.csv");
    let mut w = csv_writer(&path)?;
    let fmt = |e: csv::Error| Error::format(&path, e);
    let mut header = vec!["step".to_string(), "method".to_string()];
    for prefix in ["mean", "std", "kl"] {
        header.extend((0..k).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header).map_err(fmt)?;
    for (label, rows) in &curves {
        for r in rows {
            let mut rec = vec![r.step.to_string(), label.clone()];
            for col in [&r.mean, &r.std, &r.kl] {
                rec.extend(col.iter().map(|v| format!("{v:?}")));
            }
            w.write_record(&rec).map_err(fmt)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    // spread of each reward under the untrained generator, per prompt
    let path = a.out.join("bounds.csv");
    let mut w = csv_writer(&path)?;
    let fmt = |e: csv::Error| Error::format(&path, e);
    w.write_record([
        "prompt_id",
        "reward",
        "kind",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "bound",
    ])
    .map_err(fmt)?;
    let base = evaluate_policy(&suite, &methods[0].1, &noise);
    for (i, chunk) in base.chunks(n).enumerate() {
        for r in 0..k {
            let mut vals: Vec<f64> = chunk.iter().map(|v| v[r]).collect();
            vals.sort_by(f64::total_cmp);
            let mut rec = vec![
                suite.prompts[i].prompt_id.clone(),
                r.to_string(),
                kind_name(suite.kinds[r]).to_string(),
            ];
            rec.extend(
                [0.0, 0.25, 0.5, 0.75, 1.0]
                    .iter()
                    .map(|&q| format!("{:?}", quantile(&vals, q))),
            );
            rec.push(format!("{:?}", suite.prompts[i].bounds[r]));
            w.write_record(&rec).map_err(fmt)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    writeln!(
        out,
        "wrote frontier.csv, curves.csv, stats.csv, bounds.csv to {}",
        a.out.display()
    )
    .map_err(stdout_err)
}
