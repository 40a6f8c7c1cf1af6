//! JSON-lines persistence for per-prompt frontiers.
//!
//! One record per prompt, sorted by `prompt_id`:
//! `{"prompt_id": .., "points": [[..], ..], "sample_ids": [..], "k": K}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::{ParetoFrontier, RewardVector};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    prompt_id: String,
    points: Vec<RewardVector>,
    sample_ids: Vec<String>,
    k: usize,
}

/// Frontiers keyed by prompt id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrontierStore {
    frontiers: BTreeMap<String, ParetoFrontier>,
}

impl FrontierStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frontier: ParetoFrontier) -> Result<()> {
        frontier.validate()?;
        if let Some(existing) = self.frontiers.values().next() {
            if existing.dim() != frontier.dim() {
                return Err(Error::Dimension {
                    expected: existing.dim(),
                    actual: frontier.dim(),
                });
            }
        }
        self.frontiers.insert(frontier.prompt_id.clone(), frontier);
        Ok(())
    }

    pub fn get(&self, prompt_id: &str) -> Option<&ParetoFrontier> {
        self.frontiers.get(prompt_id)
    }

    pub fn len(&self) -> usize {
        self.frontiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frontiers.is_empty()
    }

    /// Frontiers in prompt-id order.
    pub fn iter(&self) -> impl Iterator<Item = &ParetoFrontier> {
        self.frontiers.values()
    }

    /// Reward dimension of the stored points (0 when empty).
    pub fn dim(&self) -> usize {
        self.frontiers
            .values()
            .next()
            .map_or(0, ParetoFrontier::dim)
    }

    /// Frontier sizes in prompt-id order.
    pub fn sizes(&self) -> Vec<usize> {
        self.iter().map(ParetoFrontier::len).collect()
    }

    /// Every frontier re-extracted on the reward coordinates in `active`.
    pub fn restrict(&self, active: &[usize]) -> Result<FrontierStore> {
        let mut out = FrontierStore::new();
        for f in self.iter() {
            out.insert(f.restrict(active)?)?;
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for f in self.iter() {
            let rec = Record {
                prompt_id: f.prompt_id.clone(),
                points: f.points.clone(),
                sample_ids: f.source_sample_ids.clone(),
                k: f.dim(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a store; every frontier must be mutually
    /// non-dominated and records must be sorted and unique.
    pub fn load(path: &Path) -> Result<FrontierStore> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = FrontierStore::new();
        let mut last: Option<String> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
            let rec: Record = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            if rec.points.iter().any(|p| p.len() != rec.k) {
                return Err(at(format!("points do not all have k = {} entries", rec.k)));
            }
            if let Some(prev) = &last {
                if *prev >= rec.prompt_id {
                    return Err(at(format!(
                        "records not sorted by prompt_id ({prev} before {})",
                        rec.prompt_id
                    )));
                }
            }
            last = Some(rec.prompt_id.clone());
            store
                .insert(ParetoFrontier {
                    prompt_id: rec.prompt_id,
                    points: rec.points,
                    source_sample_ids: rec.sample_ids,
                })
                .map_err(|e| at(e.to_string()))?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::extract_frontier;

    fn frontier(id: &str, pts: &[&[f64]]) -> ParetoFrontier {
        let set: Vec<RewardVector> = pts
            .iter()
            .map(|p| RewardVector::new(p.to_vec()).unwrap())
            .collect();
        extract_frontier(id, &set).unwrap()
    }

    #[test]
    fn round_trip_sorted() {
        let mut s = FrontierStore::new();
        s.insert(frontier("p1", &[&[1.0, 0.0], &[0.0, 1.0]]))
            .unwrap();
        s.insert(frontier("p0", &[&[0.25, 0.5]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        s.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"prompt_id":"p0","points":[[0.25,0.5]],"sample_ids":["0"],"k":2}"#
        );
        assert_eq!(FrontierStore::load(&path).unwrap(), s);
    }

    #[test]
    fn load_rejects_dominated_points_and_disorder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"prompt_id":"a","points":[[1,1],[0,0]],"sample_ids":["0","1"],"k":2}"#,
        )
        .unwrap();
        assert!(matches!(
            FrontierStore::load(&path),
            Err(Error::Format { .. })
        ));

        std::fs::write(
            &path,
            "{\"prompt_id\":\"b\",\"points\":[[1]],\"sample_ids\":[\"0\"],\"k\":1}\n\
             {\"prompt_id\":\"a\",\"points\":[[1]],\"sample_ids\":[\"0\"],\"k\":1}\n",
        )
        .unwrap();
        assert!(FrontierStore::load(&path).is_err());
        assert!(matches!(
            FrontierStore::load(&dir.path().join("missing.jsonl")),
            Err(Error::Io { .. })
        ));
    }
}
