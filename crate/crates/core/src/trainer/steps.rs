//! Single-prompt update rules.
//!
//! Every rule produces `∂L/∂R` for some of the sampled candidates; the chain
//! rule through the analytic reward gradients and the reparameterized sampler
//! (`z = μ + exp(ℓ) ⊙ η`) turns that into gradients on the policy mean and
//! log-std.

use crate::error::{Error, Result};
use crate::ot::{ot_loss, ot_loss_gradient, SinkhornParams, TransportPlan};
use crate::pareto::{
    dominated_by_frontier, dominating_indices, FrontierMode, ParetoFrontier, RewardVector,
};
use crate::rng::stream;
use crate::testbed::{PromptPolicy, Sample, Suite};

use super::config::{Method, TrainingConfig};

/// Gradient of one prompt's loss with respect to its policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptUpdate {
    pub grad_mean: Vec<f64>,
    pub grad_log_std: Vec<f64>,
    pub loss: f64,
    /// No candidate received a training signal.
    pub skipped: bool,
    /// Sinkhorn solves that hit `max_iter` first.
    pub nonconverged: usize,
    pub plans: Vec<TransportPlan>,
}

impl PromptUpdate {
    fn zero(d: usize) -> Self {
        Self {
            grad_mean: vec![0.0; d],
            grad_log_std: vec![0.0; d],
            loss: 0.0,
            skipped: true,
            nonconverged: 0,
            plans: Vec::new(),
        }
    }
}

/// One gradient-descent step on a prompt policy.
pub fn apply_update(
    policy: &PromptPolicy,
    update: &PromptUpdate,
    learning_rate: f64,
) -> PromptPolicy {
    let step = |p: &[f64], g: &[f64]| {
        p.iter()
            .zip(g)
            .map(|(p, g)| p - learning_rate * g)
            .collect()
    };
    PromptPolicy {
        mean: step(&policy.mean, &update.grad_mean),
        log_std: step(&policy.log_std, &update.grad_log_std),
    }
}

/// Draws the step's candidates: `workers` streams of `per_worker` samples,
/// concatenated in worker order.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    suite: &Suite,
    policy: &PromptPolicy,
    prompt: usize,
    seed: u64,
    step: u64,
    workers: usize,
    per_worker: usize,
    worker_offset: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(workers * per_worker);
    for w in 0..workers as u64 {
        let mut rng = stream(seed, step, prompt as u64, worker_offset + w);
        out.extend(suite.sample(policy, prompt, per_worker, &mut rng)?);
    }
    Ok(out)
}

/// Candidates' rewards restricted to `active`, in that order.
pub fn project(samples: &[Sample], active: &[usize]) -> Result<Vec<RewardVector>> {
    samples.iter().map(|s| s.rewards.select(active)).collect()
}

/// Accumulates `Σ_j (∂L/∂R_j)·(∂R_j/∂θ)` over the listed candidates.
/// `dl_dr[a]` pairs with reward `active[a]`.
fn chain_rule(
    suite: &Suite,
    prompt: usize,
    policy: &PromptPolicy,
    samples: &[Sample],
    active: &[usize],
    terms: &[(usize, Vec<f64>)],
    update: &mut PromptUpdate,
) {
    let std = policy.std();
    for (j, dl_dr) in terms {
        let s = &samples[*j];
        let grads = suite.reward_gradient(prompt, &s.z);
        for (a, &k) in active.iter().enumerate() {
            let c = dl_dr[a];
            if c == 0.0 {
                continue;
            }
            for (d, gk) in grads[k].iter().enumerate() {
                let dz = c * gk;
                update.grad_mean[d] += dz;
                update.grad_log_std[d] += dz * s.eta[d] * std[d];
            }
        }
    }
}

/// Transport the candidates the frontier dominates onto the frontier.
/// `frontier` must already be expressed in the `active` coordinates.
#[allow(clippy::too_many_arguments)]
pub fn offline_update(
    suite: &Suite,
    prompt: usize,
    policy: &PromptPolicy,
    samples: &[Sample],
    frontier: &ParetoFrontier,
    active: &[usize],
    mode: FrontierMode,
    params: SinkhornParams,
    keep_plans: bool,
) -> Result<PromptUpdate> {
    if frontier.dim() != active.len() {
        return Err(Error::Dimension {
            expected: active.len(),
            actual: frontier.dim(),
        });
    }
    let mut update = PromptUpdate::zero(suite.dim);
    let projected = project(samples, active)?;
    let sources = dominated_by_frontier(&projected, frontier, mode)?;
    if sources.is_empty() {
        return Ok(update);
    }
    let src: Vec<RewardVector> = sources.iter().map(|&j| projected[j].clone()).collect();
    let (loss, plan) = ot_loss(&src, &frontier.points, params)?;
    let grads = ot_loss_gradient(&src, &frontier.points, &plan)?;
    let terms: Vec<(usize, Vec<f64>)> = sources.into_iter().zip(grads).collect();
    chain_rule(suite, prompt, policy, samples, active, &terms, &mut update);
    update.loss = loss;
    update.skipped = false;
    update.nonconverged = usize::from(!plan.converged);
    if keep_plans {
        update.plans.push(plan);
    }
    Ok(update)
}

/// Pull every candidate toward the pooled candidates that dominate it.
/// Each candidate is a singleton source; the batch loss is the sum.
pub fn online_update(
    suite: &Suite,
    prompt: usize,
    policy: &PromptPolicy,
    samples: &[Sample],
    active: &[usize],
    params: SinkhornParams,
    keep_plans: bool,
) -> Result<PromptUpdate> {
    let mut update = PromptUpdate::zero(suite.dim);
    let pool = project(samples, active)?;
    let mut terms = Vec::new();
    for (j, x) in pool.iter().enumerate() {
        let dom = dominating_indices(x, &pool)?;
        if dom.is_empty() {
            continue;
        }
        let target: Vec<RewardVector> = dom.iter().map(|&m| pool[m].clone()).collect();
        let source = std::slice::from_ref(x);
        let (loss, plan) = ot_loss(source, &target, params)?;
        let mut g = ot_loss_gradient(source, &target, &plan)?;
        update.loss += loss;
        update.nonconverged += usize::from(!plan.converged);
        terms.push((j, g.remove(0)));
        if keep_plans {
            update.plans.push(plan);
        }
    }
    if terms.is_empty() {
        return Ok(update);
    }
    chain_rule(suite, prompt, policy, samples, active, &terms, &mut update);
    update.skipped = false;
    Ok(update)
}

/// Per-reward bounds of a prompt: componentwise max of its frontier.
pub fn frontier_bounds(frontier: &ParetoFrontier) -> Vec<f64> {
    (0..frontier.dim())
        .map(|k| {
            frontier
                .points
                .iter()
                .map(|p| p[k])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Scalarized baselines. `bounds` (in `active` order) is required by the two
/// bound-matching variants; `weights` is indexed by global reward index.
#[allow(clippy::too_many_arguments)]
pub fn baseline_update(
    suite: &Suite,
    prompt: usize,
    policy: &PromptPolicy,
    samples: &[Sample],
    active: &[usize],
    variant: Method,
    weights: &[f64],
    global_bound: f64,
    bounds: Option<&[f64]>,
) -> Result<PromptUpdate> {
    let mut update = PromptUpdate::zero(suite.dim);
    let pool = project(samples, active)?;
    let n = pool.len() as f64;
    let w: Vec<f64> = active.iter().map(|&k| weights[k]).collect();
    let need_bounds = || -> Result<&[f64]> {
        let b = bounds.ok_or_else(|| {
            Error::Config(format!(
                "{} needs per-prompt frontier bounds",
                variant.as_str()
            ))
        })?;
        if b.len() != active.len() {
            return Err(Error::Dimension {
                expected: active.len(),
                actual: b.len(),
            });
        }
        Ok(b)
    };
    let mut terms = Vec::with_capacity(pool.len());
    let mut loss = 0.0;
    match variant {
        Method::GlobalBound => {
            let dl: Vec<f64> = w.iter().map(|wk| -wk / n).collect();
            for (j, r) in pool.iter().enumerate() {
                let weighted: f64 = r.values().iter().zip(&w).map(|(r, w)| r * w).sum();
                loss += (global_bound - weighted) / n;
                terms.push((j, dl.clone()));
            }
        }
        Method::WeightedSumBounds => {
            let b = need_bounds()?;
            let total: f64 = w.iter().sum();
            let bbar: f64 = b.iter().zip(&w).map(|(b, w)| b * w).sum::<f64>() / total;
            for (j, r) in pool.iter().enumerate() {
                let rbar: f64 = r.values().iter().zip(&w).map(|(r, w)| r * w).sum::<f64>() / total;
                let gap = bbar - rbar;
                loss += gap * gap / n;
                terms.push((j, w.iter().map(|wk| -2.0 * gap * wk / total / n).collect()));
            }
        }
        Method::SeparateConstraints => {
            let b = need_bounds()?;
            for (j, r) in pool.iter().enumerate() {
                let gaps: Vec<f64> = b.iter().zip(r.values()).map(|(b, r)| b - r).collect();
                loss += gaps.iter().map(|g| g * g).sum::<f64>() / n;
                terms.push((j, gaps.iter().map(|g| -2.0 * g / n).collect()));
            }
        }
        Method::RewardSoup => {
            return Err(Error::validation(
                "reward soup combines trained policies at evaluation time and has no training step",
            ))
        }
        Method::Pgot => return Err(Error::validation("pgot is not a baseline")),
    }
    chain_rule(suite, prompt, policy, samples, active, &terms, &mut update);
    update.loss = loss;
    update.skipped = false;
    Ok(update)
}

/// Outcome of a self-contained step on one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptStep {
    pub policy: PromptPolicy,
    pub samples: Vec<Sample>,
    pub update: PromptUpdate,
}

/// Samples with the step's seeded streams, transports onto `frontier`, and
/// takes one descent step.
pub fn offline_step(
    suite: &Suite,
    policy: &PromptPolicy,
    prompt: usize,
    frontier: &ParetoFrontier,
    active: &[usize],
    config: &TrainingConfig,
    step: u64,
) -> Result<PromptStep> {
    let samples = generate(
        suite,
        policy,
        prompt,
        config.seed,
        step,
        config.workers,
        config.candidates_per_worker,
        0,
    )?;
    let update = offline_update(
        suite,
        prompt,
        policy,
        &samples,
        frontier,
        active,
        config.frontier_mode,
        config.sinkhorn(),
        false,
    )?;
    Ok(PromptStep {
        policy: apply_update(policy, &update, config.learning_rate),
        samples,
        update,
    })
}

/// Samples `P·n` candidates, pulls each toward its dominating set, and takes
/// one descent step.
pub fn online_step(
    suite: &Suite,
    policy: &PromptPolicy,
    prompt: usize,
    active: &[usize],
    config: &TrainingConfig,
    step: u64,
) -> Result<PromptStep> {
    if config.batch_size() < 2 {
        return Err(Error::Config(
            "online mode needs at least two pooled candidates".into(),
        ));
    }
    let samples = generate(
        suite,
        policy,
        prompt,
        config.seed,
        step,
        config.workers,
        config.candidates_per_worker,
        0,
    )?;
    let update = online_update(
        suite,
        prompt,
        policy,
        &samples,
        active,
        config.sinkhorn(),
        false,
    )?;
    Ok(PromptStep {
        policy: apply_update(policy, &update, config.learning_rate),
        samples,
        update,
    })
}

/// One descent step on a scalarized baseline loss.
#[allow(clippy::too_many_arguments)]
pub fn baseline_step(
    suite: &Suite,
    policy: &PromptPolicy,
    prompt: usize,
    active: &[usize],
    config: &TrainingConfig,
    variant: Method,
    bounds: Option<&[f64]>,
    step: u64,
) -> Result<PromptStep> {
    if matches!(variant, Method::RewardSoup | Method::Pgot) {
        return Err(Error::validation(format!(
            "{} has no baseline step",
            variant.as_str()
        )));
    }
    let samples = generate(
        suite,
        policy,
        prompt,
        config.seed,
        step,
        config.workers,
        config.candidates_per_worker,
        0,
    )?;
    let update = baseline_update(
        suite,
        prompt,
        policy,
        &samples,
        active,
        variant,
        &config.weights,
        config.global_bound,
        bounds,
    )?;
    Ok(PromptStep {
        policy: apply_update(policy, &update, config.learning_rate),
        samples,
        update,
    })
}
