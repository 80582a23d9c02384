use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lockstep::DetectionParams;
use crate::store::IoCounters;
use crate::Mode;

/// One reported lockstep, with original (pre-renumbering) ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedLockstep {
    pub seed: usize,
    pub users: Vec<String>,
    /// Insertion order.
    pub products: Vec<String>,
    /// Product id -> time center, epoch seconds.
    pub centers: BTreeMap<String, f64>,
    pub mode: Mode,
    /// Sum of member scores.
    pub score: u64,
    /// Iteration at which the seed stopped changing; absent if still live.
    #[serde(default)]
    pub iteration_converged: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub live_seeds: usize,
    pub objective: u64,
    pub io: IoCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub params: DetectionParams,
    pub dataset_id: String,
    pub threads: usize,
    pub max_iterations: usize,
    pub iterations: usize,
    /// False when the iteration cap was hit with live seeds left.
    pub converged: bool,
    pub seeds_total: usize,
    pub seeds_dead: usize,
    pub shards: usize,
    pub blocks: u64,
    pub io: IoCounters,
    pub trace: Vec<IterationTrace>,
    /// Free-form resolved configuration echoed by callers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

/// Serialized output of a detection run. Contains no wall-clock values, so
/// deterministic runs produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub meta: ReportMeta,
    pub locksteps: Vec<ReportedLockstep>,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
