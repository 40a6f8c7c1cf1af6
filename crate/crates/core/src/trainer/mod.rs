//! The staged training loop and its baselines.
//!
//! A run starts in offline mode with every configured reward. Every
//! `detect_interval` steps the detector inspects the recent window:
//! a removal drops the flagged reward, restores an older checkpoint and
//! re-extracts the frontiers on the remaining rewards; a stall with only
//! strong rewards left switches to online mode.

pub mod checkpoint;
pub mod config;
pub mod record;
pub mod steps;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

pub use checkpoint::Checkpoint;
pub use config::{Method, Mode, ModeSchedule, TrainingConfig};
pub use record::{DetectorEvent, StepRecord, WindowObservation};
pub use steps::{
    apply_update, baseline_step, baseline_update, frontier_bounds, offline_step, offline_update,
    online_step, online_update, PromptStep, PromptUpdate,
};

use crate::detector::{
    self, hack_summary, oracle_detect, statistical_detect, window_kl, Action, DetectionWindow,
    DetectorContext, DetectorDecision, DetectorKind, WindowSample, WindowStep,
};
use crate::error::{Error, Result};
use crate::metrics::{distribution_stats, mean, MetricsRow, PairedEvaluation};
use crate::ot::TransportPlan;
use crate::pareto::{extract_frontier_with_ids, RewardVector};
use crate::rng::{stream, EVAL_STEP, PRECOMPUTE_STEP};
use crate::store::FrontierStore;
use crate::testbed::{noise, PolicyState, PromptPolicy, RewardKind, Sample, Suite};

/// Samples `m` candidates per prompt from `policy`, scores every reward and
/// keeps each prompt's frontier.
pub fn precompute_frontiers(
    policy: &PolicyState,
    suite: &Suite,
    m: usize,
    seed: u64,
) -> Result<FrontierStore> {
    if m < 2 {
        return Err(Error::validation(format!(
            "frontier precomputation needs M >= 2, got {m}"
        )));
    }
    policy.validate(suite)?;
    let frontiers = (0..suite.prompts.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, PRECOMPUTE_STEP, i as u64, 0);
            let samples = suite.sample(&policy.prompts[i], i, m, &mut rng)?;
            let rewards: Vec<RewardVector> = samples.into_iter().map(|s| s.rewards).collect();
            let ids: Vec<String> = (0..m).map(|j| j.to_string()).collect();
            extract_frontier_with_ids(&suite.prompts[i].prompt_id, &rewards, &ids)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut store = FrontierStore::new();
    for f in frontiers {
        store.insert(f)?;
    }
    Ok(store)
}

/// Fixed evaluation noise: `n` draws per prompt from the evaluation stream.
pub fn evaluation_noise(suite: &Suite, seed: u64, n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..suite.prompts.len())
        .map(|i| noise(&mut stream(seed, EVAL_STEP, i as u64, 0), n, suite.dim))
        .collect()
}

/// Reward vectors of `policy` on fixed noise, prompt-major.
pub fn evaluate_policy(
    suite: &Suite,
    policy: &PolicyState,
    noise: &[Vec<Vec<f64>>],
) -> Vec<RewardVector> {
    policy
        .prompts
        .iter()
        .zip(noise)
        .enumerate()
        .flat_map(|(i, (p, etas))| {
            etas.iter()
                .map(move |eta| suite.sample_from_noise(p, i, eta.clone()).rewards)
        })
        .collect()
}

/// Extra behaviour for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every transport plan in the output.
    pub dump_plans: bool,
    /// Write `ckpt_<step>.json` files here as they are taken.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanDump {
    pub step: u64,
    pub prompt_id: String,
    pub plan: TransportPlan,
}

/// Per-prompt averages over the last step's candidates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBatch {
    pub prompt: usize,
    pub mean_rewards: Vec<f64>,
    pub mean_quality: f64,
    /// Candidates hacked with respect to every reward model.
    pub hacked: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub final_policy: PolicyState,
    pub final_active: Vec<usize>,
    pub final_mode: Mode,
    pub checkpoints: Vec<Checkpoint>,
    pub events: Vec<DetectorEvent>,
    pub observations: Vec<WindowObservation>,
    pub final_batch: Vec<PromptBatch>,
    pub plans: Vec<PlanDump>,
}

impl RunOutput {
    pub fn removals(&self) -> Vec<&DetectorEvent> {
        self.events.iter().filter(|e| e.is_removal()).collect()
    }

    pub fn switch_step(&self) -> Option<u64> {
        self.events
            .iter()
            .find(|e| e.decision.action == Action::SwitchStrategy)
            .map(|e| e.step)
    }
}

struct Trainer<'a> {
    config: &'a TrainingConfig,
    suite: &'a Suite,
    options: RunOptions,
    store: Option<FrontierStore>,
    frontiers: Option<FrontierStore>,
    active: Vec<usize>,
    mode: Mode,
    policy: PolicyState,
    components: Option<Vec<PolicyState>>,
    window: DetectionWindow,
    eval_noise: Vec<Vec<Vec<f64>>>,
    reference: Vec<RewardVector>,
    /// Decision restored from a checkpoint, replayed instead of re-detecting.
    pending: Option<(Option<DetectorDecision>, bool)>,
    out: RunOutput,
}

/// What one prompt contributed to a step.
struct PromptOutcome {
    policy: PromptPolicy,
    components: Option<Vec<PromptPolicy>>,
    samples: Vec<Sample>,
    update: PromptUpdate,
}

impl<'a> Trainer<'a> {
    fn new(
        config: &'a TrainingConfig,
        suite: &'a Suite,
        store: Option<&FrontierStore>,
        options: RunOptions,
    ) -> Result<Self> {
        let k = suite.reward_count();
        config.validate(k)?;
        let base = PolicyState::base(suite);
        let store = match store {
            Some(s) => Some(s.clone()),
            None if config.method.needs_frontiers(config.mode_schedule) => Some(
                precompute_frontiers(&base, suite, config.frontier_candidates, config.seed)?,
            ),
            None => None,
        };
        if let Some(s) = &store {
            if s.dim() != k {
                return Err(Error::Config(format!(
                    "frontier store has {} rewards per point, suite has {k}",
                    s.dim()
                )));
            }
            if let Some(p) = suite.prompts.iter().find(|p| s.get(&p.prompt_id).is_none()) {
                return Err(Error::Config(format!(
                    "frontier store has no record for {}",
                    p.prompt_id
                )));
            }
        }
        let active = config.active_or_all(k);
        let frontiers = store.as_ref().map(|s| s.restrict(&active)).transpose()?;
        let mode = match (config.method, config.mode_schedule) {
            (Method::Pgot, ModeSchedule::Online) => Mode::Online,
            (Method::Pgot, _) => Mode::Offline,
            _ => Mode::Baseline,
        };
        let components =
            (config.method == Method::RewardSoup).then(|| vec![base.clone(); active.len()]);
        let eval_noise = evaluation_noise(suite, config.seed, config.eval_samples);
        let reference = evaluate_policy(suite, &base, &eval_noise);
        Ok(Self {
            config,
            suite,
            options,
            store,
            frontiers,
            active: active.clone(),
            mode,
            policy: base.clone(),
            components,
            window: DetectionWindow::new(config.detector.window)?,
            eval_noise,
            reference,
            pending: None,
            out: RunOutput {
                records: Vec::new(),
                final_policy: base,
                final_active: active,
                final_mode: mode,
                checkpoints: Vec::new(),
                events: Vec::new(),
                observations: Vec::new(),
                final_batch: Vec::new(),
                plans: Vec::new(),
            },
        })
    }

    fn take_checkpoint(
        &mut self,
        step: u64,
        decision: Option<DetectorDecision>,
        acted: bool,
    ) -> Result<()> {
        let ckpt = Checkpoint {
            step,
            policy: self.policy.clone(),
            active_rewards: self.active.clone(),
            mode: self.mode,
            decision,
            acted,
            components: self.components.clone(),
        };
        if let Some(dir) = &self.options.checkpoint_dir {
            ckpt.save(dir)?;
        }
        self.out.checkpoints.push(ckpt);
        Ok(())
    }

    fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.policy.validate(self.suite)?;
        self.policy = ckpt.policy.clone();
        self.components = ckpt.components.clone();
        self.active = ckpt.active_rewards.clone();
        self.mode = ckpt.mode;
        self.frontiers = self
            .store
            .as_ref()
            .map(|s| s.restrict(&self.active))
            .transpose()?;
        Ok(())
    }

    /// Runs both detectors on the window and applies the configured one.
    fn detect(&mut self, step: u64) -> Result<(DetectorDecision, bool)> {
        let cfg = &self.config.detector;
        let ctx = DetectorContext {
            suite: self.suite,
            active: &self.active,
        };
        let oracle = oracle_detect(&self.window, &ctx, cfg);
        let statistical = statistical_detect(&self.window, &self.active, cfg);
        let summary = hack_summary(&self.window, self.suite, &self.active);
        self.out.observations.push(WindowObservation {
            step,
            kl: window_kl(&self.window, cfg.bins).unwrap_or_default(),
            hacked_fraction: summary.hacked as f64 / summary.samples.max(1) as f64,
            oracle: oracle.clone(),
            statistical: statistical.clone(),
        });
        let decision = match cfg.kind {
            DetectorKind::Oracle => oracle,
            DetectorKind::Statistical => statistical,
        };
        if self.config.method != Method::Pgot {
            return Ok((decision, false));
        }
        match decision.action {
            Action::Continue => Ok((decision, false)),
            Action::RemoveAndRevert => {
                let k = decision.flagged_reward.expect("removal names a reward");
                let remaining: Vec<usize> =
                    self.active.iter().copied().filter(|&a| a != k).collect();
                if remaining.is_empty() {
                    return Err(Error::DetectorAbort {
                        step,
                        rationale: decision.rationale,
                    });
                }
                let horizon = step.saturating_sub(self.config.detect_interval);
                let target = self
                    .out
                    .checkpoints
                    .iter()
                    .rev()
                    .find(|c| c.step <= horizon)
                    .or(self.out.checkpoints.first())
                    .cloned()
                    .ok_or_else(|| Error::validation("no checkpoint to revert to"))?;
                self.restore(&target)?;
                self.policy.step = step;
                self.active = remaining;
                self.frontiers = self
                    .store
                    .as_ref()
                    .map(|s| s.restrict(&self.active))
                    .transpose()?;
                self.out.events.push(DetectorEvent {
                    step,
                    decision: decision.clone(),
                    reverted_to: Some(target.step),
                });
                Ok((decision, true))
            }
            Action::SwitchStrategy => {
                let all_strong = self
                    .active
                    .iter()
                    .all(|&k| self.suite.kinds[k] == RewardKind::Strong);
                if self.config.mode_schedule == ModeSchedule::Staged
                    && self.mode == Mode::Offline
                    && all_strong
                {
                    self.mode = Mode::Online;
                    self.out.events.push(DetectorEvent {
                        step,
                        decision: decision.clone(),
                        reverted_to: None,
                    });
                    Ok((decision, true))
                } else {
                    Ok((decision, false))
                }
            }
        }
    }

    fn prompt_outcome(&self, i: usize, step: u64) -> Result<PromptOutcome> {
        let cfg = self.config;
        let suite = self.suite;
        let policy = &self.policy.prompts[i];
        let p = cfg.workers;
        let gen = |pol: &PromptPolicy, offset: u64| {
            steps::generate(
                suite,
                pol,
                i,
                cfg.seed,
                step,
                p,
                cfg.candidates_per_worker,
                offset,
            )
        };
        let frontier = || -> Result<&crate::pareto::ParetoFrontier> {
            let id = &suite.prompts[i].prompt_id;
            self.frontiers
                .as_ref()
                .and_then(|s| s.get(id))
                .ok_or_else(|| Error::Config(format!("no frontier for prompt {id}")))
        };
        let samples = gen(policy, 0)?;
        let (update, components) = match (cfg.method, self.mode) {
            (Method::Pgot, Mode::Offline) => (
                offline_update(
                    suite,
                    i,
                    policy,
                    &samples,
                    frontier()?,
                    &self.active,
                    cfg.frontier_mode,
                    cfg.sinkhorn(),
                    self.options.dump_plans,
                )?,
                None,
            ),
            (Method::Pgot, _) => (
                online_update(
                    suite,
                    i,
                    policy,
                    &samples,
                    &self.active,
                    cfg.sinkhorn(),
                    self.options.dump_plans,
                )?,
                None,
            ),
            (Method::RewardSoup, _) => {
                let comps = self
                    .components
                    .as_ref()
                    .expect("soup runs carry components");
                let mut next = Vec::with_capacity(comps.len());
                let mut loss = 0.0;
                for (c, (&k, comp)) in self.active.iter().zip(comps).enumerate() {
                    let cp = &comp.prompts[i];
                    let cs = gen(cp, (c as u64 + 1) * p as u64)?;
                    let u = baseline_update(
                        suite,
                        i,
                        cp,
                        &cs,
                        &[k],
                        Method::GlobalBound,
                        &cfg.weights,
                        cfg.global_bound,
                        None,
                    )?;
                    loss += u.loss;
                    next.push(apply_update(cp, &u, cfg.learning_rate));
                }
                let mut u = PromptUpdate {
                    grad_mean: vec![0.0; suite.dim],
                    grad_log_std: vec![0.0; suite.dim],
                    loss,
                    skipped: false,
                    nonconverged: 0,
                    plans: Vec::new(),
                };
                u.skipped = next.is_empty();
                (u, Some(next))
            }
            (variant, _) => {
                let bounds = match variant {
                    Method::WeightedSumBounds | Method::SeparateConstraints => {
                        Some(frontier_bounds(frontier()?))
                    }
                    _ => None,
                };
                (
                    baseline_update(
                        suite,
                        i,
                        policy,
                        &samples,
                        &self.active,
                        variant,
                        &cfg.weights,
                        cfg.global_bound,
                        bounds.as_deref(),
                    )?,
                    None,
                )
            }
        };
        let next = match &components {
            Some(_) => policy.clone(),
            None => apply_update(policy, &update, cfg.learning_rate),
        };
        Ok(PromptOutcome {
            policy: next,
            components,
            samples,
            update,
        })
    }

    fn step(&mut self, step: u64) -> Result<()> {
        let mut decision = None;
        let mut acted = false;
        if step > 0 && step.is_multiple_of(self.config.detect_interval) {
            let (d, a) = match self.pending.take() {
                Some(p) => p,
                None => {
                    let (d, a) = self.detect(step)?;
                    (Some(d), a)
                }
            };
            decision = d;
            acted = a;
            self.window.clear();
            self.take_checkpoint(step, decision.clone(), acted)?;
        }
        self.pending = None;

        let outcomes = (0..self.suite.prompts.len())
            .into_par_iter()
            .map(|i| self.prompt_outcome(i, step))
            .collect::<Result<Vec<_>>>()?;

        let all: Vec<usize> = (0..self.suite.reward_count()).collect();
        let mut loss = 0.0;
        let (mut hacked, mut hacked_active, mut skipped, mut nonconverged) = (0, 0, 0, 0);
        let mut qualities = Vec::new();
        let mut window_samples = Vec::new();
        let mut final_batch = Vec::with_capacity(outcomes.len());
        let mut soup_components: Option<Vec<Vec<PromptPolicy>>> = None;
        for (i, o) in outcomes.into_iter().enumerate() {
            loss += o.update.loss;
            skipped += usize::from(o.update.skipped);
            nonconverged += o.update.nonconverged;
            let mut prompt_hacked = 0;
            for s in &o.samples {
                let r = s.rewards.values();
                if self.suite.is_hacked_eval(i, r, s.quality, &all) {
                    prompt_hacked += 1;
                }
                if self.suite.is_hacked_eval(i, r, s.quality, &self.active) {
                    hacked_active += 1;
                }
                qualities.push(s.quality);
            }
            hacked += prompt_hacked;
            let k = self.suite.reward_count();
            final_batch.push(PromptBatch {
                prompt: i,
                mean_rewards: (0..k)
                    .map(|j| mean(&o.samples.iter().map(|s| s.rewards[j]).collect::<Vec<_>>()))
                    .collect(),
                mean_quality: mean(&o.samples.iter().map(|s| s.quality).collect::<Vec<_>>()),
                hacked: prompt_hacked,
            });
            if self.options.dump_plans {
                let id = &self.suite.prompts[i].prompt_id;
                self.out
                    .plans
                    .extend(o.update.plans.iter().map(|plan| PlanDump {
                        step,
                        prompt_id: id.clone(),
                        plan: plan.clone(),
                    }));
            }
            window_samples.extend(o.samples.into_iter().map(|s| WindowSample {
                prompt: i,
                z: s.z,
                rewards: s.rewards,
                quality: s.quality,
            }));
            self.policy.prompts[i] = o.policy;
            if let Some(c) = o.components {
                soup_components.get_or_insert_with(Vec::new).push(c);
            }
        }
        if let Some(per_prompt) = soup_components {
            let comps = self
                .components
                .as_mut()
                .expect("soup runs carry components");
            for (i, cs) in per_prompt.into_iter().enumerate() {
                for (c, pp) in cs.into_iter().enumerate() {
                    comps[c].prompts[i] = pp;
                    comps[c].step = step + 1;
                }
            }
            let weights: Vec<f64> = self
                .active
                .iter()
                .map(|&k| self.config.weights[k])
                .collect();
            let parts: Vec<(f64, &PolicyState)> =
                weights.iter().copied().zip(comps.iter()).collect();
            self.policy = PolicyState::average(&parts)?;
        }
        self.policy.step = step + 1;

        self.window.push(WindowStep {
            step,
            samples: window_samples,
        });
        let current = self.window.last().expect("just pushed").snapshot();
        let reference = self.window.first().expect("nonempty").snapshot();
        let stats = distribution_stats(&current, &reference, self.config.detector.bins)?;
        let evaluated = evaluate_policy(self.suite, &self.policy, &self.eval_noise);
        let pairing = PairedEvaluation::full(evaluated, self.reference.clone())?;
        let metrics = MetricsRow::from_pairing(step, &pairing, &self.config.jdr2_subset, &stats)?;
        self.out.records.push(StepRecord {
            metrics,
            mode: self.mode,
            active: self.active.clone(),
            q_mean: mean(&qualities),
            loss,
            hacked,
            hacked_active,
            skipped,
            nonconverged,
            decision,
            acted,
        });
        self.out.final_batch = final_batch;
        Ok(())
    }

    fn run_from(mut self, start: u64) -> Result<RunOutput> {
        for step in start..self.config.steps {
            self.step(step)?;
        }
        self.out.final_policy = self.policy;
        self.out.final_active = self.active;
        self.out.final_mode = self.mode;
        Ok(self.out)
    }
}

/// Runs `config` on `suite`. Frontiers are precomputed from the base policy
/// when the method needs them and no store is supplied.
pub fn run(
    config: &TrainingConfig,
    suite: &Suite,
    store: Option<&FrontierStore>,
) -> Result<RunOutput> {
    run_with(config, suite, store, RunOptions::default())
}

pub fn run_with(
    config: &TrainingConfig,
    suite: &Suite,
    store: Option<&FrontierStore>,
    options: RunOptions,
) -> Result<RunOutput> {
    let mut t = Trainer::new(config, suite, store, options)?;
    t.take_checkpoint(0, None, false)?;
    t.run_from(0)
}

/// Continues a run from the checkpoint taken at `from_step`. `checkpoints`
/// must contain it plus every earlier checkpoint a revert might need.
/// The output holds records for `from_step..steps` only.
pub fn resume(
    config: &TrainingConfig,
    suite: &Suite,
    store: Option<&FrontierStore>,
    checkpoints: &[Checkpoint],
    from_step: u64,
    options: RunOptions,
) -> Result<RunOutput> {
    let mut t = Trainer::new(config, suite, store, options)?;
    let ckpt = checkpoints
        .iter()
        .find(|c| c.step == from_step)
        .ok_or_else(|| Error::validation(format!("no checkpoint for step {from_step}")))?
        .clone();
    if from_step > 0 && !from_step.is_multiple_of(config.detect_interval) {
        return Err(Error::validation(format!(
            "checkpoints are taken every {} steps; {from_step} is not one of them",
            config.detect_interval
        )));
    }
    t.out.checkpoints = checkpoints
        .iter()
        .filter(|c| c.step <= from_step)
        .cloned()
        .collect();
    t.restore(&ckpt)?;
    t.pending = Some((ckpt.decision.clone(), ckpt.acted));
    t.out.checkpoints.retain(|c| c.step < from_step);
    if from_step == 0 {
        t.out.checkpoints.push(ckpt);
    }
    t.run_from(from_step)
}

/// Parameter average of already-trained policies, weighted by `weights`.
pub fn reward_soup(policies: &[PolicyState], weights: &[f64]) -> Result<PolicyState> {
    if policies.len() != weights.len() {
        return Err(Error::Dimension {
            expected: policies.len(),
            actual: weights.len(),
        });
    }
    let parts: Vec<(f64, &PolicyState)> = weights.iter().copied().zip(policies).collect();
    PolicyState::average(&parts)
}

/// The detector implementation a config selects, for callers that drive
/// their own loops.
pub fn configured_detector(config: &TrainingConfig) -> Box<dyn detector::Detector + Send + Sync> {
    detector::from_config(&config.detector)
}
