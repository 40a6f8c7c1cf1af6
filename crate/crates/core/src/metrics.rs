//! Paired-comparison metrics and histogram distribution statistics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::{dominates_slice, RewardVector};

/// Index-aligned candidate/baseline reward vectors plus the reward subset
/// under comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEvaluation {
    samples: Vec<RewardVector>,
    baselines: Vec<RewardVector>,
    subset: Vec<usize>,
    k: usize,
}

impl PairedEvaluation {
    pub fn new(
        samples: Vec<RewardVector>,
        baselines: Vec<RewardVector>,
        subset: Vec<usize>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("paired evaluation is empty"));
        }
        if samples.len() != baselines.len() {
            return Err(Error::Pairing(format!(
                "{} samples but {} baselines",
                samples.len(),
                baselines.len()
            )));
        }
        let k = samples[0].len();
        for v in samples.iter().chain(&baselines) {
            if v.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    actual: v.len(),
                });
            }
        }
        if subset.is_empty() {
            return Err(Error::validation("reward subset is empty"));
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= k) {
            return Err(Error::validation(format!(
                "reward index {bad} out of range for K = {k}"
            )));
        }
        Ok(Self {
            samples,
            baselines,
            subset,
            k,
        })
    }

    /// Pairing over every reward coordinate.
    pub fn full(samples: Vec<RewardVector>, baselines: Vec<RewardVector>) -> Result<Self> {
        let k = samples.first().map_or(0, RewardVector::len);
        Self::new(samples, baselines, (0..k).collect())
    }

    /// Same pairs, different reward subset.
    pub fn with_subset(&self, subset: Vec<usize>) -> Result<Self> {
        Self::new(self.samples.clone(), self.baselines.clone(), subset)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn reward_count(&self) -> usize {
        self.k
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    fn project(&self, v: &RewardVector) -> Vec<f64> {
        self.subset.iter().map(|&i| v[i]).collect()
    }

    fn rate(&self, hit: impl Fn(&[f64], &[f64]) -> bool) -> f64 {
        let count = self
            .samples
            .iter()
            .zip(&self.baselines)
            .filter(|(s, b)| hit(&self.project(s), &self.project(b)))
            .count();
        100.0 * count as f64 / self.len() as f64
    }
}

/// Percentage of pairs where the sample strictly dominates its baseline on
/// the subset.
pub fn jdr(eval: &PairedEvaluation) -> f64 {
    eval.rate(dominates_slice)
}

/// Percentage of pairs where the baseline strictly dominates the sample on
/// the subset.
pub fn jcr(eval: &PairedEvaluation) -> f64 {
    eval.rate(|s, b| dominates_slice(b, s))
}

/// Percentage of pairs where the sample beats the baseline on reward `k`.
/// Ties are losses.
pub fn win_rate(eval: &PairedEvaluation, k: usize) -> Result<f64> {
    if k >= eval.reward_count() {
        return Err(Error::validation(format!(
            "reward index {k} out of range for K = {}",
            eval.reward_count()
        )));
    }
    let wins = eval
        .samples
        .iter()
        .zip(&eval.baselines)
        .filter(|(s, b)| s[k] > b[k])
        .count();
    Ok(100.0 * wins as f64 / eval.len() as f64)
}

/// Per-reward summary of a batch relative to a reference batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kl_to_reference: Vec<f64>,
}

pub const DEFAULT_BINS: usize = 16;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `KL(p ‖ q)` between two samples using equal-width bins over their pooled
/// range and add-one smoothing. Zero when the pooled range is degenerate.
pub fn histogram_kl(current: &[f64], reference: &[f64], bins: usize) -> f64 {
    let (lo, hi) = current
        .iter()
        .chain(reference)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    // inputs are finite, so this only catches an empty or constant pool
    if hi <= lo {
        return 0.0;
    }
    let width = (hi - lo) / bins as f64;
    let histogram = |xs: &[f64]| {
        let mut counts = vec![1.0; bins];
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.into_iter().map(|c| c / total).collect::<Vec<_>>()
    };
    let p = histogram(current);
    let q = histogram(reference);
    p.iter()
        .zip(&q)
        .map(|(p, q)| p * (p / q).ln())
        .sum::<f64>()
        .max(0.0)
}

fn column(set: &[RewardVector], k: usize) -> Vec<f64> {
    set.iter().map(|v| v[k]).collect()
}

pub fn distribution_stats(
    current: &[RewardVector],
    reference: &[RewardVector],
    bins: usize,
) -> Result<DistributionStats> {
    if current.len() < 2 || reference.len() < 2 {
        return Err(Error::validation(
            "distribution statistics need at least 2 samples per side",
        ));
    }
    if bins < 2 {
        return Err(Error::validation(
            "distribution statistics need at least 2 bins",
        ));
    }
    let k = current[0].len();
    for v in current.iter().chain(reference) {
        if v.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: v.len(),
            });
        }
    }
    let mut stats = DistributionStats {
        mean: Vec::with_capacity(k),
        std: Vec::with_capacity(k),
        kl_to_reference: Vec::with_capacity(k),
    };
    for i in 0..k {
        let cur = column(current, i);
        stats.mean.push(mean(&cur));
        stats.std.push(std_dev(&cur));
        stats
            .kl_to_reference
            .push(histogram_kl(&cur, &column(reference, i), bins));
    }
    Ok(stats)
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub jdr2: f64,
    pub jdr4: f64,
    pub jcr4: f64,
    pub win: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Strong-pair subset used for the two-reward domination rate.
pub const DEFAULT_JDR2_SUBSET: [usize; 2] = [0, 1];

impl MetricsRow {
    /// Joint rates and win rates of `eval` (whose subset is ignored), with
    /// `jdr2` over `strong_pair` and `jdr4`/`jcr4` over every reward.
    pub fn from_pairing(
        step: u64,
        eval: &PairedEvaluation,
        strong_pair: &[usize],
        stats: &DistributionStats,
    ) -> Result<Self> {
        let k = eval.reward_count();
        let all = eval.with_subset((0..k).collect())?;
        Ok(Self {
            step,
            jdr2: jdr(&eval.with_subset(strong_pair.to_vec())?),
            jdr4: jdr(&all),
            jcr4: jcr(&all),
            win: (0..k).map(|i| win_rate(&all, i)).collect::<Result<_>>()?,
            mean: stats.mean.clone(),
            std: stats.std.clone(),
            kl: stats.kl_to_reference.clone(),
        })
    }

    pub fn header(k: usize) -> Vec<String> {
        let mut h = vec!["step".into(), "jdr2".into(), "jdr4".into(), "jcr4".into()];
        for prefix in ["win", "mean", "std", "kl"] {
            h.extend((0..k).map(|i| format!("{prefix}_{i}")));
        }
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut out = vec![
            self.step.to_string(),
            fmt_f64(self.jdr2),
            fmt_f64(self.jdr4),
            fmt_f64(self.jcr4),
        ];
        for col in [&self.win, &self.mean, &self.std, &self.kl] {
            out.extend(col.iter().map(|v| fmt_f64(*v)));
        }
        out
    }

    /// Parses the leading metrics columns of a CSV row whose header is `header`.
    pub fn parse(
        header: &csv::StringRecord,
        row: &csv::StringRecord,
    ) -> std::result::Result<Self, String> {
        let get = |name: &str| -> std::result::Result<f64, String> {
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| format!("missing column {name}"))?;
            row.get(idx)
                .ok_or_else(|| format!("row too short for column {name}"))?
                .parse::<f64>()
                .map_err(|e| format!("column {name}: {e}"))
        };
        let k = header.iter().filter(|h| h.starts_with("win_")).count();
        let series = |prefix: &str| -> std::result::Result<Vec<f64>, String> {
            (0..k).map(|i| get(&format!("{prefix}_{i}"))).collect()
        };
        Ok(Self {
            step: get("step")? as u64,
            jdr2: get("jdr2")?,
            jdr4: get("jdr4")?,
            jcr4: get("jcr4")?,
            win: series("win")?,
            mean: series("mean")?,
            std: series("std")?,
            kl: series("kl")?,
        })
    }
}

/// Shortest decimal form that round-trips.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.win.len());
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let map = |e: csv::Error| Error::format(path, e);
    w.write_record(MetricsRow::header(k)).map_err(map)?;
    for r in rows {
        w.write_record(r.fields()).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Plain-text comparison table in the layout of a results table:
/// per-reward win rates followed by the joint metrics.
pub fn comparison_table(
    row: &MetricsRow,
    names: &[String],
    out: &mut dyn Write,
) -> std::io::Result<()> {
    for name in names.iter().take(row.win.len()) {
        write!(out, "{name:>10} ")?;
    }
    writeln!(out, "{:>8} {:>8} {:>8}", "JDR2", "JDR4", "JCR4")?;
    for w in &row.win {
        write!(out, "{:>10.2} ", w)?;
    }
    writeln!(out, "{:>8.2} {:>8.2} {:>8.2}", row.jdr2, row.jdr4, row.jcr4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rvs(points: &[&[f64]]) -> Vec<RewardVector> {
        points
            .iter()
            .map(|p| RewardVector::new(p.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn identical_pairs_score_zero() {
        let s = rvs(&[&[1.0, 2.0], &[0.0, 0.0]]);
        let e = PairedEvaluation::full(s.clone(), s).unwrap();
        assert_eq!(jdr(&e), 0.0);
        assert_eq!(jcr(&e), 0.0);
        assert_eq!(win_rate(&e, 0).unwrap(), 0.0);
        assert_eq!(win_rate(&e, 1).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_rates() {
        let s = rvs(&[&[1.0, 1.0], &[1.0, 0.0], &[0.0, 0.0], &[2.0, -1.0]]);
        let b = rvs(&[&[0.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let e = PairedEvaluation::full(s, b).unwrap();
        assert_eq!(jdr(&e), 25.0);
        assert_eq!(win_rate(&e, 0).unwrap(), 75.0);
        assert!(win_rate(&e, 2).is_err());

        let mut s = Vec::new();
        let mut b = Vec::new();
        for i in 0..10 {
            b.push(RewardVector::new(vec![1.0; 4]).unwrap());
            let v = if i < 3 { 0.0 } else { 1.0 + (i % 2) as f64 };
            let mut sv = vec![v; 4];
            if i >= 3 {
                sv[0] = 0.5;
                sv[1] = 1.5;
            }
            s.push(RewardVector::new(sv).unwrap());
        }
        assert_eq!(jcr(&PairedEvaluation::full(s, b).unwrap()), 30.0);
    }

    #[test]
    fn pairing_errors() {
        let s = rvs(&[&[1.0, 1.0]]);
        assert!(matches!(
            PairedEvaluation::full(s.clone(), vec![]),
            Err(Error::Pairing(_))
        ));
        assert!(PairedEvaluation::full(vec![], vec![]).is_err());
        assert!(PairedEvaluation::new(s.clone(), s, vec![2]).is_err());
    }

    #[test]
    fn distribution_stats_examples() {
        let xs: Vec<RewardVector> = (0..50)
            .map(|i| RewardVector::new(vec![(i as f64 * 0.37).sin()]).unwrap())
            .collect();
        let st = distribution_stats(&xs, &xs, DEFAULT_BINS).unwrap();
        assert!(st.kl_to_reference[0] < 0.01);

        let sd = st.std[0];
        let shifted: Vec<RewardVector> = xs
            .iter()
            .map(|v| RewardVector::new(vec![v[0] + 10.0 * sd]).unwrap())
            .collect();
        let st = distribution_stats(&shifted, &xs, DEFAULT_BINS).unwrap();
        assert!(st.kl_to_reference[0] > 1.0);

        let flat = vec![RewardVector::new(vec![3.0]).unwrap(); 5];
        let st = distribution_stats(&flat, &flat, DEFAULT_BINS).unwrap();
        assert_eq!(st.std[0], 0.0);
        assert_eq!(st.kl_to_reference[0], 0.0);
        assert_abs_diff_eq!(st.mean[0], 3.0);

        assert!(distribution_stats(&flat[..1], &flat, 16).is_err());
        assert!(distribution_stats(&flat, &flat, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            step: 3,
            jdr2: 12.5,
            jdr4: 0.1,
            jcr4: 0.0,
            win: vec![1.0, 2.0],
            mean: vec![0.3, 0.4],
            std: vec![0.01, 0.02],
            kl: vec![0.0, 1e-9],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&path, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .starts_with("step,jdr2,jdr4,jcr4,win_0,win_1,mean_0,mean_1,std_0,std_1,kl_0,kl_1\n"));
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let header = rdr.headers().unwrap().clone();
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(MetricsRow::parse(&header, &rec).unwrap(), row);
    }
}
