use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::ot::SinkhornParams;
use crate::pareto::FrontierMode;

/// Optimizer driving a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Frontier-guided transport with the staged detector loop.
    #[default]
    Pgot,
    /// Weighted reward sum against a single constant bound.
    GlobalBound,
    /// Squared gap between weighted-average frontier bounds and rewards.
    WeightedSumBounds,
    /// Sum of per-reward squared gaps to the frontier bounds.
    SeparateConstraints,
    /// Parameter average of single-reward policies.
    RewardSoup,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pgot => "pgot",
            Method::GlobalBound => "global-bound",
            Method::WeightedSumBounds => "weighted-sum-bounds",
            Method::SeparateConstraints => "separate-constraints",
            Method::RewardSoup => "reward-soup",
        }
    }

    /// Whether the method needs precomputed frontiers.
    pub fn needs_frontiers(&self, schedule: ModeSchedule) -> bool {
        match self {
            Method::Pgot => schedule != ModeSchedule::Online,
            Method::WeightedSumBounds | Method::SeparateConstraints => true,
            Method::GlobalBound | Method::RewardSoup => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeSchedule {
    Offline,
    Online,
    #[default]
    Staged,
}

/// Which PG-OT target is in use at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
    /// Scalarized baselines and the soup; no PG-OT target.
    Baseline,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Offline => "offline",
            Mode::Online => "online",
            Mode::Baseline => "baseline",
        }
    }
}

/// Every knob of a training run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub method: Method,
    pub mode_schedule: ModeSchedule,
    /// Initially active rewards; `None` means all of them.
    pub active_rewards: Option<Vec<usize>>,
    /// Per-reward weights for the scalarized baselines and the soup.
    pub weights: Vec<f64>,
    /// Constant `C` of the global-bound loss `C − Σ w_k R_k`.
    pub global_bound: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub learning_rate: f64,
    pub steps: u64,
    pub detect_interval: u64,
    /// Logical workers `P`.
    pub workers: usize,
    /// Candidates per worker `n`.
    pub candidates_per_worker: usize,
    /// Candidates per prompt when building frontiers (`M`).
    pub frontier_candidates: usize,
    pub frontier_mode: FrontierMode,
    pub seed: u64,
    /// Fixed-noise samples per prompt used for paired evaluation.
    pub eval_samples: usize,
    /// Reward pair reported as `jdr2`.
    pub jdr2_subset: Vec<usize>,
    pub detector: DetectorConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let ot = SinkhornParams::default();
        Self {
            method: Method::Pgot,
            mode_schedule: ModeSchedule::Staged,
            active_rewards: None,
            weights: vec![2.0, 3.0, 2.0, 3.0],
            global_bound: 10.0,
            epsilon: ot.epsilon,
            max_iter: ot.max_iter,
            tol: ot.tol,
            learning_rate: 0.01,
            steps: 2000,
            detect_interval: 100,
            workers: 1,
            candidates_per_worker: 16,
            frontier_candidates: 50,
            frontier_mode: FrontierMode::Any,
            seed: 0,
            eval_samples: 50,
            jdr2_subset: vec![0, 1],
            detector: DetectorConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn sinkhorn(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.workers * self.candidates_per_worker
    }

    pub fn active_or_all(&self, k: usize) -> Vec<usize> {
        self.active_rewards
            .clone()
            .unwrap_or_else(|| (0..k).collect())
    }

    /// Checks value ranges and consistency with a `k`-reward suite.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.detect_interval == 0 {
            return bad("detect_interval must be at least 1".into());
        }
        if self.workers == 0 || self.candidates_per_worker == 0 {
            return bad("workers and candidates_per_worker must be at least 1".into());
        }
        if self.method == Method::Pgot
            && self.mode_schedule != ModeSchedule::Offline
            && self.batch_size() < 2
        {
            return bad("online mode needs workers * candidates_per_worker >= 2".into());
        }
        if self.frontier_candidates < 2 {
            return bad(format!(
                "frontier_candidates must be at least 2, got {}",
                self.frontier_candidates
            ));
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be at least 1".into());
        }
        if !self.global_bound.is_finite() {
            return bad("global_bound must be finite".into());
        }
        self.sinkhorn()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.detector.validate()?;
        if self.weights.len() != k {
            return bad(format!(
                "weights has {} entries but the suite has {k} rewards",
                self.weights.len()
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("weights must be positive".into());
        }
        let active = self.active_or_all(k);
        if active.is_empty() {
            return bad("active_rewards must not be empty".into());
        }
        let mut seen = vec![false; k];
        for &a in &active {
            if a >= k || std::mem::replace(&mut seen[a], true) {
                return bad(format!(
                    "active_rewards entry {a} is out of range or repeated"
                ));
            }
        }
        if self.jdr2_subset.is_empty() || self.jdr2_subset.iter().any(|&i| i >= k) {
            return bad(format!("jdr2_subset must name rewards below {k}"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
