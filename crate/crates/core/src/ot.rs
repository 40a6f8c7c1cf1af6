//! Entropic optimal transport between discrete reward distributions.
//!
//! The solver works on dual potentials in the log domain, so very small
//! regularization strengths do not underflow the Gibbs kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::RewardVector;

/// Row-major `n × q` matrix of squared Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    q: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Wraps precomputed costs; every entry must be finite and nonnegative.
    pub fn from_entries(n: usize, q: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || q == 0 {
            return Err(Error::validation(
                "cost matrix needs at least one row and column",
            ));
        }
        if entries.len() != n * q {
            return Err(Error::Dimension {
                expected: n * q,
                actual: entries.len(),
            });
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::validation(
                "cost entries must be finite and nonnegative",
            ));
        }
        Ok(Self { n, q, entries })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.q
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.entries[j * self.q + m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

pub fn cost_matrix(source: &[RewardVector], target: &[RewardVector]) -> Result<CostMatrix> {
    let first = source
        .first()
        .ok_or_else(|| Error::validation("transport source is empty"))?;
    if target.is_empty() {
        return Err(Error::validation("transport target is empty"));
    }
    let k = first.len();
    for v in source.iter().chain(target) {
        if v.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: v.len(),
            });
        }
    }
    let mut entries = Vec::with_capacity(source.len() * target.len());
    for s in source {
        for t in target {
            entries.push(
                s.values()
                    .iter()
                    .zip(t.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
            );
        }
    }
    Ok(CostMatrix {
        n: source.len(),
        q: target.len(),
        entries,
    })
}

/// Solver settings. Defaults: `epsilon = 0.1`, `max_iter = 1000`, `tol = 1e-6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::validation(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Entropic coupling between a source and a target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` coupling.
    pub gamma: Vec<f64>,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    pub epsilon: f64,
    pub iterations_used: usize,
    /// L∞ violation of the row and column marginals.
    pub marginal_error: f64,
    pub converged: bool,
}

impl TransportPlan {
    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.gamma[j * self.cols + m]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.gamma
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.gamma.chunks(self.cols) {
            for (o, g) in out.iter_mut().zip(row) {
                *o += g;
            }
        }
        out
    }
}

/// Uniform probability vector of length `n`.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_weights(name: &str, w: &[f64], expected: usize) -> Result<()> {
    if w.len() != expected {
        return Err(Error::Dimension {
            expected,
            actual: w.len(),
        });
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::validation(format!(
            "{name} has negative or non-finite weights"
        )));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::validation(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `log Σ exp(x_i)`, with an all `-inf` input mapping to `-inf`.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn. Always returns the last iterate; `converged` reports
/// whether the marginal error dropped to `tol` within `max_iter` sweeps.
pub fn sinkhorn(
    cost: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    params: SinkhornParams,
) -> Result<TransportPlan> {
    params.validate()?;
    let (n, q) = (cost.rows(), cost.cols());
    check_weights("source weights", mu, n)?;
    check_weights("target weights", nu, q)?;
    let eps = params.epsilon;
    let log_mu: Vec<f64> = mu.iter().map(|w| w.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; q];

    let log_gamma = |f: &[f64], g: &[f64], j: usize, m: usize| (f[j] + g[m] - cost.get(j, m)) / eps;

    let mut iterations_used = 0;
    let mut marginal_error = f64::INFINITY;
    for it in 1..=params.max_iter {
        for j in 0..n {
            f[j] = if mu[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                let lse = log_sum_exp((0..q).map(|m| (g[m] - cost.get(j, m)) / eps));
                eps * (log_mu[j] - lse)
            };
        }
        for m in 0..q {
            g[m] = if nu[m] == 0.0 {
                f64::NEG_INFINITY
            } else {
                let lse = log_sum_exp((0..n).map(|j| (f[j] - cost.get(j, m)) / eps));
                eps * (log_nu[m] - lse)
            };
        }
        if f.iter()
            .chain(&g)
            .any(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(Error::Numerical(format!(
                "Sinkhorn potentials diverged at iteration {it} (epsilon = {eps}, max cost = {})",
                cost.entries().iter().fold(0.0_f64, |a, &b| a.max(b))
            )));
        }
        // Columns are exact after the g update; only rows can be off.
        marginal_error = (0..n)
            .map(|j| {
                let row: f64 = (0..q).map(|m| log_gamma(&f, &g, j, m).exp()).sum();
                (row - mu[j]).abs()
            })
            .fold(0.0, f64::max);
        iterations_used = it;
        if marginal_error <= params.tol {
            break;
        }
    }

    let mut gamma = Vec::with_capacity(n * q);
    for j in 0..n {
        for m in 0..q {
            gamma.push(log_gamma(&f, &g, j, m).exp());
        }
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "transport plan has non-finite entries (epsilon = {eps})"
        )));
    }
    let plan = TransportPlan {
        rows: n,
        cols: q,
        gamma,
        source_weights: mu.to_vec(),
        target_weights: nu.to_vec(),
        epsilon: eps,
        iterations_used,
        marginal_error: 0.0,
        converged: false,
    };
    let col_err = plan
        .col_sums()
        .iter()
        .zip(nu)
        .map(|(c, w)| (c - w).abs())
        .fold(0.0, f64::max);
    let marginal_error = marginal_error.max(col_err);
    Ok(TransportPlan {
        marginal_error,
        converged: marginal_error <= params.tol,
        ..plan
    })
}

/// Linear transport cost `⟨γ, C⟩`.
pub fn transport_cost(cost: &CostMatrix, plan: &TransportPlan) -> Result<f64> {
    if (cost.rows(), cost.cols()) != (plan.rows, plan.cols) {
        return Err(Error::Dimension {
            expected: cost.rows() * cost.cols(),
            actual: plan.rows * plan.cols,
        });
    }
    Ok(cost
        .entries()
        .iter()
        .zip(&plan.gamma)
        .map(|(c, g)| c * g)
        .sum())
}

/// Regularized objective `⟨γ, C⟩ + ε·KL(γ ‖ μ⊗ν)` minimized by Sinkhorn.
pub fn entropic_objective(cost: &CostMatrix, plan: &TransportPlan) -> Result<f64> {
    let linear = transport_cost(cost, plan)?;
    let mut kl = 0.0;
    for j in 0..plan.rows {
        for m in 0..plan.cols {
            let g = plan.get(j, m);
            if g > 0.0 {
                kl += g * (g / (plan.source_weights[j] * plan.target_weights[m])).ln();
            }
        }
    }
    Ok(linear + plan.epsilon * kl)
}

/// Transport cost between uniform distributions over `source` and `target`.
/// The entropy term is not part of the returned loss.
pub fn ot_loss(
    source: &[RewardVector],
    target: &[RewardVector],
    params: SinkhornParams,
) -> Result<(f64, TransportPlan)> {
    let cost = cost_matrix(source, target)?;
    let plan = sinkhorn(
        &cost,
        &uniform(source.len()),
        &uniform(target.len()),
        params,
    )?;
    Ok((transport_cost(&cost, &plan)?, plan))
}

/// Same as [`ot_loss`] with caller-supplied marginals.
pub fn ot_loss_weighted(
    source: &[RewardVector],
    target: &[RewardVector],
    mu: &[f64],
    nu: &[f64],
    params: SinkhornParams,
) -> Result<(f64, TransportPlan)> {
    let cost = cost_matrix(source, target)?;
    let plan = sinkhorn(&cost, mu, nu, params)?;
    Ok((transport_cost(&cost, &plan)?, plan))
}

/// Gradient of `⟨γ, C⟩` with respect to each source point, `γ` held fixed:
/// `g_j = Σ_m γ[j][m] · 2 (source_j − target_m)`.
pub fn ot_loss_gradient(
    source: &[RewardVector],
    target: &[RewardVector],
    plan: &TransportPlan,
) -> Result<Vec<Vec<f64>>> {
    if plan.rows != source.len() {
        return Err(Error::Dimension {
            expected: plan.rows,
            actual: source.len(),
        });
    }
    if plan.cols != target.len() {
        return Err(Error::Dimension {
            expected: plan.cols,
            actual: target.len(),
        });
    }
    let k = source.first().map_or(0, RewardVector::len);
    for v in source.iter().chain(target) {
        if v.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: v.len(),
            });
        }
    }
    Ok(source
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut grad = vec![0.0; k];
            for (m, t) in target.iter().enumerate() {
                let w = 2.0 * plan.get(j, m);
                if w == 0.0 {
                    continue;
                }
                for ((gk, a), b) in grad.iter_mut().zip(s.values()).zip(t.values()) {
                    *gk += w * (a - b);
                }
            }
            grad
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rv(v: &[f64]) -> RewardVector {
        RewardVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        let c = cost_matrix(&[rv(&[0.0, 0.0])], &[rv(&[3.0, 4.0])]).unwrap();
        assert_eq!(c.entries(), &[25.0]);
        let pts = [rv(&[0.0, 1.0]), rv(&[2.0, -1.0])];
        let c = cost_matrix(&pts, &pts).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), 0.0);
        assert_eq!(c.get(0, 1), 8.0);
        assert!(matches!(
            cost_matrix(&[rv(&[0.0])], &[rv(&[0.0, 1.0])]),
            Err(Error::Dimension { .. })
        ));
        assert!(cost_matrix(&[], &pts).is_err());
    }

    #[test]
    fn single_cell_plan_is_forced() {
        for eps in [1e-3, 0.1, 10.0] {
            let c = CostMatrix::from_entries(1, 1, vec![3.5]).unwrap();
            let p = sinkhorn(&c, &[1.0], &[1.0], SinkhornParams::with_epsilon(eps)).unwrap();
            assert_abs_diff_eq!(p.gamma[0], 1.0, epsilon = 1e-12);
            assert!(p.converged);
        }
    }

    #[test]
    fn two_by_two_diagonal() {
        let c = CostMatrix::from_entries(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = sinkhorn(
            &c,
            &uniform(2),
            &uniform(2),
            SinkhornParams::with_epsilon(0.01),
        )
        .unwrap();
        assert!(p.converged);
        assert_abs_diff_eq!(p.get(0, 0), 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(p.get(1, 1), 0.5, epsilon = 1e-4);
        assert!(p.get(0, 1) < 1e-4 && p.get(1, 0) < 1e-4);
    }

    #[test]
    fn rejects_bad_marginals_and_params() {
        let c = CostMatrix::from_entries(1, 2, vec![0.0, 1.0]).unwrap();
        let p = SinkhornParams::default();
        assert!(matches!(
            sinkhorn(&c, &[1.0], &[0.6, 0.6], p),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            sinkhorn(&c, &[1.0], &[1.5, -0.5], p),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            sinkhorn(&c, &[1.0], &[1.0], p),
            Err(Error::Dimension { .. })
        ));
        let bad = SinkhornParams { epsilon: 0.0, ..p };
        assert!(sinkhorn(&c, &[1.0], &[0.5, 0.5], bad).is_err());
        assert!(CostMatrix::from_entries(1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn zero_weight_rows_get_no_mass() {
        let c = CostMatrix::from_entries(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = sinkhorn(&c, &[1.0, 0.0], &uniform(2), SinkhornParams::default()).unwrap();
        assert_eq!(p.get(1, 0), 0.0);
        assert_eq!(p.get(1, 1), 0.0);
        assert_abs_diff_eq!(p.get(0, 0), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = CostMatrix::from_entries(3, 2, vec![0.0, 1.0, 0.7, 0.2, 0.4, 0.9]).unwrap();
        let params = SinkhornParams {
            epsilon: 0.5,
            max_iter: 1,
            tol: 1e-15,
        };
        let p = sinkhorn(&c, &[0.5, 0.3, 0.2], &uniform(2), params).unwrap();
        assert_eq!(p.iterations_used, 1);
        assert!(!p.converged);
    }

    #[test]
    fn ot_loss_examples() {
        let (loss, plan) =
            ot_loss(&[rv(&[0.0, 0.0])], &[rv(&[1.0, 0.0])], Default::default()).unwrap();
        assert_eq!(loss, 1.0);
        let g = ot_loss_gradient(&[rv(&[0.0, 0.0])], &[rv(&[1.0, 0.0])], &plan).unwrap();
        assert_eq!(g, vec![vec![-2.0, 0.0]]);

        let pts = [rv(&[0.0, 1.0]), rv(&[1.0, 0.0]), rv(&[0.5, 0.5])];
        let (loss, _) = ot_loss(&pts, &pts, SinkhornParams::with_epsilon(0.01)).unwrap();
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn zero_mass_row_has_zero_gradient() {
        let src = [rv(&[0.0, 0.0]), rv(&[5.0, 5.0])];
        let tgt = [rv(&[1.0, 1.0])];
        let c = cost_matrix(&src, &tgt).unwrap();
        let plan = sinkhorn(&c, &[1.0, 0.0], &[1.0], Default::default()).unwrap();
        let g = ot_loss_gradient(&src, &tgt, &plan).unwrap();
        assert_eq!(g[1], vec![0.0, 0.0]);
    }
}
