use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorDecision;
use crate::error::{Error, Result};
use crate::testbed::PolicyState;

use super::config::Mode;

/// Snapshot taken at the start of a step, after any detector action.
///
/// Random streams are keyed by step, so this is all the state a replay needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub step: u64,
    pub policy: PolicyState,
    pub active_rewards: Vec<usize>,
    pub mode: Mode,
    /// Decision taken at `step` before this snapshot was written.
    pub decision: Option<DetectorDecision>,
    #[serde(default)]
    pub acted: bool,
    /// Per-component policies of a reward-soup run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<PolicyState>>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.json"))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = checkpoint_path(dir, self.step);
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    /// Every `ckpt_<step>.json` in `dir`, ordered by step.
    pub fn load_dir(dir: &Path) -> Result<Vec<Checkpoint>> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let is_ckpt = name
                .strip_prefix("ckpt_")
                .and_then(|rest| rest.strip_suffix(".json"))
                .is_some_and(|n| n.parse::<u64>().is_ok());
            if is_ckpt {
                out.push(Checkpoint::load(&entry.path())?);
            }
        }
        out.sort_by_key(|c| c.step);
        Ok(out)
    }
}
