use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{Action, DetectorDecision};
use crate::error::{Error, Result};
use crate::metrics::{fmt_f64, MetricsRow};

use super::config::Mode;

/// Telemetry for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Metrics of the post-update policy against the step-0 policy, plus
    /// batch statistics of the step's candidates.
    pub metrics: MetricsRow,
    pub mode: Mode,
    pub active: Vec<usize>,
    pub q_mean: f64,
    pub loss: f64,
    /// Candidates hacked with respect to every reward model.
    pub hacked: usize,
    /// Candidates hacked with respect to the active rewards only.
    pub hacked_active: usize,
    /// Prompts that produced no training signal.
    pub skipped: usize,
    pub nonconverged: usize,
    /// Decision taken at the start of this step, if the detector ran.
    pub decision: Option<DetectorDecision>,
    /// Whether the decision changed the run (baselines only observe).
    pub acted: bool,
}

const EXTRA_COLUMNS: [&str; 12] = [
    "mode",
    "active",
    "q_mean",
    "loss",
    "hacked",
    "hacked_active",
    "skipped",
    "nonconverged",
    "action",
    "flagged",
    "acted",
    "rationale",
];

impl StepRecord {
    pub fn step(&self) -> u64 {
        self.metrics.step
    }

    pub fn header(k: usize) -> Vec<String> {
        let mut h = MetricsRow::header(k);
        h.extend(EXTRA_COLUMNS.iter().map(|s| s.to_string()));
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut f = self.metrics.fields();
        let (action, flagged, rationale) = match &self.decision {
            Some(d) => (
                d.action.as_str().to_string(),
                d.flagged_reward.map(|k| k.to_string()).unwrap_or_default(),
                d.rationale.clone(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        f.extend([
            self.mode.as_str().to_string(),
            self.active
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            fmt_f64(self.q_mean),
            fmt_f64(self.loss),
            self.hacked.to_string(),
            self.hacked_active.to_string(),
            self.skipped.to_string(),
            self.nonconverged.to_string(),
            action,
            flagged,
            self.acted.to_string(),
            rationale,
        ]);
        f
    }
}

pub fn write_records_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let k = records.first().map_or(0, |r| r.metrics.win.len());
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let map = |e: csv::Error| Error::format(path, e);
    w.write_record(StepRecord::header(k)).map_err(map)?;
    for r in records {
        w.write_record(r.fields()).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Raw `action` and `flagged` cells of a records row.
pub type DecisionCells = (String, String);

/// Reads the metrics columns of a records (or metrics) CSV, together with
/// the raw decision columns when present.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(MetricsRow, Option<DecisionCells>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => Error::format(path, e),
    })?;
    let header = rdr.headers().map_err(|e| Error::format(path, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (action, flagged) = (col("action"), col("flagged"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let row = MetricsRow::parse(&header, &rec).map_err(|e| Error::format(path, e))?;
        let extra = match (action, flagged) {
            (Some(a), Some(f)) => Some((
                rec.get(a).unwrap_or_default().to_string(),
                rec.get(f).unwrap_or_default().to_string(),
            )),
            _ => None,
        };
        out.push((row, extra));
    }
    Ok(out)
}

/// A decision that the trainer acted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEvent {
    pub step: u64,
    pub decision: DetectorDecision,
    /// Checkpoint restored by a revert.
    pub reverted_to: Option<u64>,
}

impl DetectorEvent {
    pub fn is_removal(&self) -> bool {
        self.decision.action == Action::RemoveAndRevert
    }
}

/// Both detectors' view of a window, recorded for every method so the
/// statistical detector can be studied on runs it does not control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowObservation {
    pub step: u64,
    pub oracle: DetectorDecision,
    pub statistical: DetectorDecision,
    /// Per-reward KL between the window's newest and oldest snapshot.
    pub kl: Vec<f64>,
    pub hacked_fraction: f64,
}
