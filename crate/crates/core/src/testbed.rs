//! Synthetic multi-reward generator.
//!
//! Each prompt owns a latent domain with a feasible ball `F = {‖z − c‖ ≤ r}`
//! and a hidden quality `Q(z) = −‖z − c‖`. Work happens in normalized
//! coordinates `y = (z − c)/r`, split into the shortcut coordinate
//! `t = ⟨s, y⟩` and the remainder `y⊥ = y − t·s`.
//!
//! * Strong reward `k`: `b_k · σ(κ(1 − ‖y⊥ − o_k‖²/λ²)) · h(t)` with
//!   `h(t) = 1 − β·σ(κ_h(t²/τ² − 1))`. It peaks at `y = o_k` inside `F`, so its
//!   supremum over the whole space is attained on `F` and it can never be hacked.
//! * Weak reward: `b_W · σ(κ(1 − ‖y⊥ − o_W‖²/λ²)) + α·⟨s, z − c⟩`, a quality
//!   bump plus a linear term that grows without bound along `s`.
//!
//! `o_k = δ(0.8u + 0.6v_k)` with `u` the quality direction and `v_k ⊥ u, s`;
//! the weak bump sits at the mean of the strong offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::RewardVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Strong,
    Weak,
}

/// Shape constants shared by every prompt in a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedParams {
    /// Slope of the weak reward's shortcut term.
    pub alpha: f64,
    pub kappa: f64,
    pub lambda: f64,
    /// Depth of the strong rewards' penalty along the shortcut.
    pub beta: f64,
    pub tau: f64,
    pub kappa_h: f64,
    /// Distance of the reward peaks from the feasible center (normalized units).
    pub delta: f64,
    /// Distance of the initial policy mean from the center (normalized units).
    pub base_offset: f64,
    /// Initial per-coordinate std (normalized units).
    pub base_std: f64,
    /// Multiplier on the weak reward's bump height.
    pub weak_scale: f64,
    pub bound_range: (f64, f64),
    pub radius_range: (f64, f64),
}

impl Default for TestbedParams {
    fn default() -> Self {
        Self {
            alpha: 1.6,
            kappa: 1.5,
            lambda: 1.5,
            beta: 0.5,
            tau: 1.2,
            kappa_h: 1.5,
            delta: 0.05,
            base_offset: 0.35,
            base_std: 0.4,
            weak_scale: 30.0,
            bound_range: (0.7, 1.3),
            radius_range: (0.8, 1.2),
        }
    }
}

/// Reward kinds of the default four-reward suite: three strong, one weak.
pub const DEFAULT_KINDS: [RewardKind; 4] = [
    RewardKind::Strong,
    RewardKind::Strong,
    RewardKind::Weak,
    RewardKind::Strong,
];

/// Minimum relative spread `(max − min)/mean` of each reward's bound profile
/// across prompts.
pub const MIN_BOUND_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptDomain {
    pub prompt_id: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub quality_direction: Vec<f64>,
    pub shortcut_direction: Vec<f64>,
    /// Peak location of each reward in normalized coordinates.
    pub reward_offsets: Vec<Vec<f64>>,
    /// Height scale `b_k` of each reward.
    pub bound_profile: Vec<f64>,
    /// Supremum of each reward over the feasible ball.
    pub bounds: Vec<f64>,
    /// Quality on the feasible boundary.
    pub q_min: f64,
    pub base_mean: Vec<f64>,
    pub base_log_std: Vec<f64>,
}

impl PromptDomain {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn quality(&self, z: &[f64]) -> f64 {
        -norm(&sub(z, &self.center))
    }

    pub fn is_feasible(&self, z: &[f64]) -> bool {
        self.quality(z) >= self.q_min
    }
}

/// A full synthetic experiment: prompts, reward kinds and shape constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub seed: u64,
    pub dim: usize,
    pub kinds: Vec<RewardKind>,
    pub params: TestbedParams,
    pub prompts: Vec<PromptDomain>,
}

/// Reward values, optional per-reward gradients and quality at one latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rewards: Vec<f64>,
    pub gradients: Option<Vec<Vec<f64>>>,
    pub quality: f64,
}

/// One generated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    /// Standard-normal noise that produced `z`.
    pub eta: Vec<f64>,
    pub rewards: RewardVector,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPolicy {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PromptPolicy {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// `mean + exp(log_std) ⊙ eta`.
    pub fn latent(&self, eta: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eta)
            .map(|((m, l), e)| m + l.exp() * e)
            .collect()
    }
}

/// Per-prompt diagonal Gaussian generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyState {
    pub step: u64,
    pub prompts: Vec<PromptPolicy>,
}

impl PolicyState {
    /// The suite's initial generator.
    pub fn base(suite: &Suite) -> Self {
        Self {
            step: 0,
            prompts: suite
                .prompts
                .iter()
                .map(|p| PromptPolicy {
                    mean: p.base_mean.clone(),
                    log_std: p.base_log_std.clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self, suite: &Suite) -> Result<()> {
        if self.prompts.len() != suite.prompts.len() {
            return Err(Error::Dimension {
                expected: suite.prompts.len(),
                actual: self.prompts.len(),
            });
        }
        for p in &self.prompts {
            for v in [&p.mean, &p.log_std] {
                if v.len() != suite.dim {
                    return Err(Error::Dimension {
                        expected: suite.dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::validation("policy parameters must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Weighted parameter average; weights are normalized to sum to one.
    pub fn average(parts: &[(f64, &PolicyState)]) -> Result<PolicyState> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("nothing to average"))?
            .1;
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0)) || total <= 0.0 {
            return Err(Error::validation(
                "averaging weights must be nonnegative with a positive sum",
            ));
        }
        let mut out = first.clone();
        for (i, p) in out.prompts.iter_mut().enumerate() {
            for (field, pick) in [
                (
                    &mut p.mean,
                    (|q: &PromptPolicy| &q.mean) as fn(&PromptPolicy) -> &Vec<f64>,
                ),
                (&mut p.log_std, |q: &PromptPolicy| &q.log_std),
            ] {
                for (d, x) in field.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (w, s) in parts {
                        let v = s.prompts.get(i).and_then(|q| pick(q).get(d)).ok_or(
                            Error::Dimension {
                                expected: first.prompts.len(),
                                actual: s.prompts.len(),
                            },
                        )?;
                        acc += w * v;
                    }
                    *x = acc / total;
                }
            }
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gaussian draw orthogonalized against `basis` (assumed orthonormal) and
/// normalized. `None` when nothing is left of it.
fn orthogonal_unit(rng: &mut impl Rng, d: usize, basis: &[&[f64]]) -> Option<Vec<f64>> {
    let mut v = gaussian_vec(rng, d);
    for b in basis {
        let c = dot(&v, b);
        axpy(&mut v, -c, b);
    }
    let n = norm(&v);
    (n > 1e-9).then(|| v.iter().map(|x| x / n).collect())
}

impl TestbedParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("tau", self.tau),
            ("kappa_h", self.kappa_h),
            ("base_std", self.base_std),
            ("weak_scale", self.weak_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("base_offset", self.base_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.beta >= 1.0 {
            return Err(Error::validation("beta must be below 1"));
        }
        if self.delta >= 1.0 {
            return Err(Error::validation(
                "delta must be below 1 so reward peaks lie inside F",
            ));
        }
        for (name, (lo, hi)) in [
            ("bound_range", self.bound_range),
            ("radius_range", self.radius_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::validation(format!(
                    "{name} must satisfy 0 < lo <= hi"
                )));
            }
        }
        Ok(())
    }

    fn bump_peak(&self) -> f64 {
        sigmoid(self.kappa)
    }

    fn strong_bound(&self, b: f64) -> f64 {
        b * self.bump_peak() * (1.0 - self.beta * sigmoid(-self.kappa_h))
    }

    /// Max over the feasible ball of the weak reward. The optimum puts `y⊥`
    /// on the line through the bump center and spends the rest of the unit
    /// norm on the shortcut, leaving a 1-D search over `a = ⟨y⊥, ô⟩`.
    fn weak_bound(&self, b: f64, offset_norm: f64, radius: f64) -> f64 {
        let f = |a: f64| {
            let dist = a - offset_norm;
            b * sigmoid(self.kappa * (1.0 - dist * dist / (self.lambda * self.lambda)))
                + self.alpha * radius * (1.0 - a * a).max(0.0).sqrt()
        };
        let grid = 20_000;
        let step = 2.0 / grid as f64;
        let best = (0..=grid)
            .map(|i| -1.0 + i as f64 * step)
            .max_by(|x, y| f(*x).total_cmp(&f(*y)))
            .unwrap_or(0.0);
        // golden-section refinement inside the winning cell
        let (mut lo, mut hi) = ((best - step).max(-1.0), (best + step).min(1.0));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if f(x1) < f(x2) {
                lo = x1;
            } else {
                hi = x2;
            }
        }
        f(best).max(f(0.5 * (lo + hi)))
    }
}

/// Stretches `values` about their mean so `(max − min)/mean ≥ min_spread`.
fn enforce_spread(values: &mut [f64], min_spread: f64) {
    if values.len() < 2 {
        return;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let spread = (hi - lo) / m;
    if spread >= min_spread {
        return;
    }
    let scale = if hi > lo {
        min_spread * m / (hi - lo)
    } else {
        0.0
    };
    if scale == 0.0 {
        // all equal: spread them evenly
        let n = values.len() as f64;
        for (i, v) in values.iter_mut().enumerate() {
            *v = m * (1.0 + min_spread * (i as f64 / (n - 1.0) - 0.5));
        }
        return;
    }
    for v in values.iter_mut() {
        *v = m + (*v - m) * scale;
    }
}

/// Default suite: the four-reward kind layout and default shape constants.
pub fn build_suite(n_prompts: usize, d: usize, seed: u64) -> Result<Suite> {
    build_suite_with(n_prompts, d, seed, &DEFAULT_KINDS, TestbedParams::default())
}

pub fn build_suite_with(
    n_prompts: usize,
    d: usize,
    seed: u64,
    kinds: &[RewardKind],
    params: TestbedParams,
) -> Result<Suite> {
    if n_prompts == 0 {
        return Err(Error::validation("n_prompts must be at least 1"));
    }
    if d < 2 {
        return Err(Error::validation(format!(
            "latent dimension must be at least 2 (got {d}); the shortcut needs an orthogonal complement"
        )));
    }
    if kinds.is_empty() {
        return Err(Error::validation("at least one reward model is required"));
    }
    params.validate()?;
    let k = kinds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_prompts).map(|_| gaussian_vec(&mut rng, d)).collect();
    let radius_dist = Uniform::new_inclusive(params.radius_range.0, params.radius_range.1)
        .map_err(|e| Error::validation(e.to_string()))?;
    let radii: Vec<f64> = (0..n_prompts)
        .map(|_| radius_dist.sample(&mut rng))
        .collect();
    let bound_dist = Uniform::new_inclusive(params.bound_range.0, params.bound_range.1)
        .map_err(|e| Error::validation(e.to_string()))?;
    let mut profile: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..n_prompts)
                .map(|_| bound_dist.sample(&mut rng))
                .collect()
        })
        .collect();
    for (column, kind) in profile.iter_mut().zip(kinds) {
        enforce_spread(column, MIN_BOUND_SPREAD);
        if *kind == RewardKind::Weak {
            column.iter_mut().for_each(|b| *b *= params.weak_scale);
        }
    }

    let mut prompts = Vec::with_capacity(n_prompts);
    for i in 0..n_prompts {
        let u = orthogonal_unit(&mut rng, d, &[]).expect("nonzero gaussian draw");
        let s = orthogonal_unit(&mut rng, d, &[&u]).expect("d >= 2 leaves room for the shortcut");
        let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let o = match orthogonal_unit(&mut rng, d, &[&u, &s]) {
                Some(v) => u
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| params.delta * (0.8 * a + 0.6 * b))
                    .collect(),
                None => u.iter().map(|a| params.delta * a).collect(),
            };
            offsets.push(o);
        }
        let strong: Vec<&Vec<f64>> = offsets
            .iter()
            .zip(kinds)
            .filter(|(_, kind)| **kind == RewardKind::Strong)
            .map(|(o, _)| o)
            .collect();
        let weak_offset: Vec<f64> = if strong.is_empty() {
            u.iter().map(|a| params.delta * a).collect()
        } else {
            (0..d)
                .map(|j| strong.iter().map(|o| o[j]).sum::<f64>() / strong.len() as f64)
                .collect()
        };
        for (o, kind) in offsets.iter_mut().zip(kinds) {
            if *kind == RewardKind::Weak {
                o.clone_from(&weak_offset);
            }
        }
        let w = orthogonal_unit(&mut rng, d, &[&s]).expect("d >= 2 leaves room off the shortcut");

        let r = radii[i];
        let c = &centers[i];
        let bound_profile: Vec<f64> = profile.iter().map(|col| col[i]).collect();
        let bounds = kinds
            .iter()
            .zip(&bound_profile)
            .zip(&offsets)
            .map(|((kind, &b), o)| match kind {
                RewardKind::Strong => params.strong_bound(b),
                RewardKind::Weak => params.weak_bound(b, norm(o), r),
            })
            .collect();
        prompts.push(PromptDomain {
            prompt_id: format!("p{i:04}"),
            center: c.clone(),
            radius: r,
            quality_direction: u,
            shortcut_direction: s,
            reward_offsets: offsets,
            bound_profile,
            bounds,
            q_min: -r,
            base_mean: c
                .iter()
                .zip(&w)
                .map(|(ci, wi)| ci + r * params.base_offset * wi)
                .collect(),
            base_log_std: vec![(params.base_std * r).ln(); d],
        });
    }
    Ok(Suite {
        seed,
        dim: d,
        kinds: kinds.to_vec(),
        params,
        prompts,
    })
}

impl Suite {
    pub fn reward_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn strong_indices(&self) -> Vec<usize> {
        self.indices_of(RewardKind::Strong)
    }

    pub fn weak_indices(&self) -> Vec<usize> {
        self.indices_of(RewardKind::Weak)
    }

    fn indices_of(&self, kind: RewardKind) -> Vec<usize> {
        (0..self.kinds.len())
            .filter(|&k| self.kinds[k] == kind)
            .collect()
    }

    pub fn prompt(&self, i: usize) -> Result<&PromptDomain> {
        self.prompts.get(i).ok_or_else(|| {
            Error::validation(format!(
                "prompt index {i} out of range ({} prompts)",
                self.prompts.len()
            ))
        })
    }

    pub fn prompt_index(&self, prompt_id: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p.prompt_id == prompt_id)
    }

    /// Structural checks for suites read from disk.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.dim < 2 {
            return Err(Error::validation("latent dimension must be at least 2"));
        }
        if self.prompts.is_empty() || self.kinds.is_empty() {
            return Err(Error::validation("suite needs prompts and reward models"));
        }
        let k = self.kinds.len();
        for p in &self.prompts {
            let dims = [
                p.center.len(),
                p.quality_direction.len(),
                p.shortcut_direction.len(),
                p.base_mean.len(),
                p.base_log_std.len(),
            ];
            if let Some(&bad) = dims.iter().find(|&&n| n != self.dim) {
                return Err(Error::Dimension {
                    expected: self.dim,
                    actual: bad,
                });
            }
            if [
                p.reward_offsets.len(),
                p.bound_profile.len(),
                p.bounds.len(),
            ]
            .iter()
            .any(|&n| n != k)
                || p.reward_offsets.iter().any(|o| o.len() != self.dim)
            {
                return Err(Error::validation(format!(
                    "prompt {} does not describe {k} rewards",
                    p.prompt_id
                )));
            }
            if p.radius.is_nan() || p.radius <= 0.0 {
                return Err(Error::validation(format!(
                    "prompt {} has radius <= 0",
                    p.prompt_id
                )));
            }
            for dir in [&p.quality_direction, &p.shortcut_direction] {
                if (norm(dir) - 1.0).abs() > 1e-9 {
                    return Err(Error::validation(format!(
                        "prompt {} has a non-unit direction",
                        p.prompt_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rewards, quality and optionally per-reward gradients at `z`.
    pub fn evaluate(&self, prompt: usize, z: &[f64], with_gradients: bool) -> Evaluation {
        let p = &self.prompts[prompt];
        let pr = &self.params;
        let r = p.radius;
        let y: Vec<f64> = z.iter().zip(&p.center).map(|(a, c)| (a - c) / r).collect();
        let s = &p.shortcut_direction;
        let t = dot(&y, s);
        let mut y_perp = y.clone();
        axpy(&mut y_perp, -t, s);

        let lam2 = pr.lambda * pr.lambda;
        let sh = sigmoid(pr.kappa_h * (t * t / (pr.tau * pr.tau) - 1.0));
        let h = 1.0 - pr.beta * sh;
        let dh_dt = -pr.beta * sh * (1.0 - sh) * pr.kappa_h * 2.0 * t / (pr.tau * pr.tau);

        let mut rewards = Vec::with_capacity(self.kinds.len());
        let mut gradients = with_gradients.then(|| Vec::with_capacity(self.kinds.len()));
        for (k, kind) in self.kinds.iter().enumerate() {
            let b = p.bound_profile[k];
            let v = sub(&y_perp, &p.reward_offsets[k]);
            let g = sigmoid(pr.kappa * (1.0 - dot(&v, &v) / lam2));
            // d g / d y = g(1 − g)·κ·(−2/λ²)·v; v is already orthogonal to s
            let dg = g * (1.0 - g) * pr.kappa * (-2.0 / lam2);
            match kind {
                RewardKind::Strong => {
                    rewards.push(b * g * h);
                    if let Some(gs) = gradients.as_mut() {
                        let mut grad: Vec<f64> = v.iter().map(|vi| b * dg * h * vi / r).collect();
                        axpy(&mut grad, b * g * dh_dt / r, s);
                        gs.push(grad);
                    }
                }
                RewardKind::Weak => {
                    rewards.push(b * g + pr.alpha * r * t);
                    if let Some(gs) = gradients.as_mut() {
                        let mut grad: Vec<f64> = v.iter().map(|vi| b * dg * vi / r).collect();
                        axpy(&mut grad, pr.alpha, s);
                        gs.push(grad);
                    }
                }
            }
        }
        Evaluation {
            rewards,
            gradients,
            quality: p.quality(z),
        }
    }

    pub fn rewards(&self, prompt: usize, z: &[f64]) -> Vec<f64> {
        self.evaluate(prompt, z, false).rewards
    }

    /// Analytic `∂R_k/∂z` for every reward model.
    pub fn reward_gradient(&self, prompt: usize, z: &[f64]) -> Vec<Vec<f64>> {
        self.evaluate(prompt, z, true)
            .gradients
            .expect("gradients requested")
    }

    pub fn quality(&self, prompt: usize, z: &[f64]) -> f64 {
        self.prompts[prompt].quality(z)
    }

    /// Some active reward above its feasible supremum while quality is below
    /// the feasible minimum.
    pub fn is_hacked(&self, prompt: usize, z: &[f64], active: &[usize]) -> bool {
        let e = self.evaluate(prompt, z, false);
        self.is_hacked_eval(prompt, &e.rewards, e.quality, active)
    }

    pub fn is_hacked_eval(
        &self,
        prompt: usize,
        rewards: &[f64],
        quality: f64,
        active: &[usize],
    ) -> bool {
        let p = &self.prompts[prompt];
        quality < p.q_min && active.iter().any(|&k| rewards[k] > p.bounds[k])
    }

    /// Draws `n` candidates from `policy` with reparameterized noise from `rng`.
    pub fn sample(
        &self,
        policy: &PromptPolicy,
        prompt: usize,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Sample>> {
        if n == 0 {
            return Err(Error::validation("sample count must be at least 1"));
        }
        if policy.mean.len() != self.dim || policy.log_std.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: policy.mean.len().max(policy.log_std.len()),
            });
        }
        if policy
            .log_std
            .iter()
            .chain(&policy.mean)
            .any(|v| !v.is_finite())
        {
            return Err(Error::validation("policy parameters must be finite"));
        }
        self.prompt(prompt)?;
        (0..n)
            .map(|_| {
                let eta = gaussian_vec(rng, self.dim);
                Ok(self.sample_from_noise(policy, prompt, eta))
            })
            .collect()
    }

    /// Candidate generated from a fixed noise vector.
    pub fn sample_from_noise(&self, policy: &PromptPolicy, prompt: usize, eta: Vec<f64>) -> Sample {
        let z = policy.latent(&eta);
        let e = self.evaluate(prompt, &z, false);
        Sample {
            rewards: RewardVector::new(e.rewards)
                .expect("testbed rewards are finite for finite latents"),
            quality: e.quality,
            z,
            eta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::validation(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Suite> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let suite: Suite = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        suite.validate()?;
        Ok(suite)
    }
}

/// Standard-normal noise matrix (`n × d`) from `rng`.
pub fn noise(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| gaussian_vec(rng, d)).collect()
}
