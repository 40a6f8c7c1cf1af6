//! Strict Pareto dominance over reward vectors (larger is better in every
//! coordinate), dominance matrices, frontier extraction and dominating-set
//! queries.
//!
//! Everything here is the direct `O(M² K)` construction; candidate sets are a
//! few hundred points at most.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in K-dimensional reward space. Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation(
                "reward vector must have at least one entry",
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "reward vector entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Keeps only the coordinates listed in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let v = self.0.get(i).ok_or_else(|| {
                Error::validation(format!(
                    "reward index {i} out of range for K = {}",
                    self.len()
                ))
            })?;
            out.push(*v);
        }
        Self::new(out)
    }
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RewardVector> for Vec<f64> {
    fn from(v: RewardVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for RewardVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for RewardVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}

/// `a ≥ b` everywhere and `a > b` somewhere. Callers guarantee equal lengths.
#[inline]
pub(crate) fn dominates_slice(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Strict Pareto dominance of `a` over `b`.
pub fn dominates(a: &RewardVector, b: &RewardVector) -> Result<bool> {
    check_dim(a.len(), b.len())?;
    Ok(dominates_slice(a.values(), b.values()))
}

fn check_set(set: &[RewardVector]) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::validation("reward set must not be empty"))?;
    let k = first.len();
    for v in set {
        check_dim(k, v.len())?;
    }
    Ok(k)
}

/// Binary matrix with `get(m, n)` true iff candidate `m` dominates candidate `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominanceMatrix {
    size: usize,
    entries: Vec<bool>,
}

impl DominanceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, m: usize, n: usize) -> bool {
        self.entries[m * self.size + n]
    }

    /// Column sums: how many candidates dominate each candidate.
    pub fn domination_counts(&self) -> Vec<usize> {
        (0..self.size)
            .map(|n| (0..self.size).filter(|&m| self.get(m, n)).count())
            .collect()
    }

    /// Rows as 0/1 integers, convenient for printing and comparisons.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.entries
            .chunks(self.size)
            .map(|row| row.iter().map(|&b| b as u8).collect())
            .collect()
    }
}

pub fn dominance_matrix(set: &[RewardVector]) -> Result<DominanceMatrix> {
    check_set(set)?;
    let size = set.len();
    let mut entries = vec![false; size * size];
    for (m, a) in set.iter().enumerate() {
        for (n, b) in set.iter().enumerate() {
            entries[m * size + n] = dominates_slice(a.values(), b.values());
        }
    }
    Ok(DominanceMatrix { size, entries })
}

/// Indices of the candidates with a domination count of zero, in input order.
pub fn frontier_indices(set: &[RewardVector]) -> Result<Vec<usize>> {
    let matrix = dominance_matrix(set)?;
    Ok(matrix
        .domination_counts()
        .into_iter()
        .enumerate()
        .filter_map(|(j, count)| (count == 0).then_some(j))
        .collect())
}

/// Mutually non-dominated reward vectors for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier {
    pub prompt_id: String,
    pub points: Vec<RewardVector>,
    pub source_sample_ids: Vec<String>,
}

impl ParetoFrontier {
    /// Number of frontier points (`q` in the frontier-size statistics).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reward dimension of the stored points.
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, RewardVector::len)
    }

    /// Checks the frontier invariants: nonempty, parallel ids, consistent
    /// dimension and mutual non-domination.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::validation(format!(
                "frontier for prompt {} is empty",
                self.prompt_id
            )));
        }
        if self.points.len() != self.source_sample_ids.len() {
            return Err(Error::validation(format!(
                "frontier for prompt {} has {} points but {} sample ids",
                self.prompt_id,
                self.points.len(),
                self.source_sample_ids.len()
            )));
        }
        check_set(&self.points)?;
        for (i, a) in self.points.iter().enumerate() {
            for (j, b) in self.points.iter().enumerate() {
                if i != j && dominates_slice(a.values(), b.values()) {
                    return Err(Error::validation(format!(
                        "frontier for prompt {}: point {} dominates point {}",
                        self.prompt_id, self.source_sample_ids[i], self.source_sample_ids[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Projects the points onto the reward coordinates in `active` and keeps
    /// the ones that remain non-dominated there.
    ///
    /// A candidate that is non-dominated on a subset of coordinates is also
    /// non-dominated on the full set, so re-extracting from the stored
    /// frontier recovers the subset frontier of the original candidates
    /// (exact ties aside).
    pub fn restrict(&self, active: &[usize]) -> Result<ParetoFrontier> {
        let projected = self
            .points
            .iter()
            .map(|p| p.select(active))
            .collect::<Result<Vec<_>>>()?;
        extract_frontier_with_ids(&self.prompt_id, &projected, &self.source_sample_ids)
    }
}

/// Frontier of `set`, with sample ids equal to the candidate indices.
pub fn extract_frontier(prompt_id: &str, set: &[RewardVector]) -> Result<ParetoFrontier> {
    let ids: Vec<String> = (0..set.len()).map(|i| i.to_string()).collect();
    extract_frontier_with_ids(prompt_id, set, &ids)
}

/// Frontier of `set`, carrying the given per-candidate ids along.
/// Exact duplicates of a frontier point are all kept.
pub fn extract_frontier_with_ids(
    prompt_id: &str,
    set: &[RewardVector],
    sample_ids: &[String],
) -> Result<ParetoFrontier> {
    if sample_ids.len() != set.len() {
        return Err(Error::validation(format!(
            "{} candidates but {} sample ids",
            set.len(),
            sample_ids.len()
        )));
    }
    let keep = frontier_indices(set)?;
    Ok(ParetoFrontier {
        prompt_id: prompt_id.to_string(),
        points: keep.iter().map(|&j| set[j].clone()).collect(),
        source_sample_ids: keep.iter().map(|&j| sample_ids[j].clone()).collect(),
    })
}

/// Indices of the pool members that strictly dominate `x`.
pub fn dominating_indices(x: &RewardVector, pool: &[RewardVector]) -> Result<Vec<usize>> {
    for p in pool {
        check_dim(x.len(), p.len())?;
    }
    Ok(pool
        .iter()
        .enumerate()
        .filter_map(|(m, p)| dominates_slice(p.values(), x.values()).then_some(m))
        .collect())
}

/// Every pool member that strictly dominates `x`. May be empty.
pub fn dominating_set(x: &RewardVector, pool: &[RewardVector]) -> Result<Vec<RewardVector>> {
    Ok(dominating_indices(x, pool)?
        .into_iter()
        .map(|m| pool[m].clone())
        .collect())
}

/// How samples qualify as "dominated by the frontier".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontierMode {
    /// Dominated by at least one frontier point.
    #[default]
    Any,
    /// Dominated by every frontier point.
    All,
}

/// Indices of `samples` that the frontier dominates under `mode`.
pub fn dominated_by_frontier(
    samples: &[RewardVector],
    frontier: &ParetoFrontier,
    mode: FrontierMode,
) -> Result<Vec<usize>> {
    let k = frontier.dim();
    for s in samples {
        check_dim(k, s.len())?;
    }
    let hit = |s: &RewardVector| {
        let mut it = frontier
            .points
            .iter()
            .map(|f| dominates_slice(f.values(), s.values()));
        match mode {
            FrontierMode::Any => it.any(|d| d),
            FrontierMode::All => it.all(|d| d),
        }
    };
    Ok(samples
        .iter()
        .enumerate()
        .filter_map(|(j, s)| hit(s).then_some(j))
        .collect())
}
