//! Run summaries. `Metrics` depends only on the scenario and the commands,
//! so it is byte-identical across runs; wall-clock figures live in `Timing`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::IntentStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub frames: u64,
    pub steps_completed: u64,
    pub steps_remaining: usize,
    pub plan_complete: bool,
    pub goals_satisfied: bool,
    pub structure_parts: usize,
    pub structure_height: i32,
    pub stable: bool,
    pub stability_score: f64,
    /// Share of correct picks the monitor confirmed.
    pub pick_confirmation_rate: Option<f64>,
    /// Share of deliberate wrong picks the monitor flagged.
    pub wrong_pick_flag_rate: Option<f64>,
    /// Recognised intended actions over intended actions.
    pub accuracy: Option<f64>,
    pub intents: Option<IntentStats>,
    pub deviations: u64,
    pub replans: u64,
    pub replan_failures: u64,
    pub candidates_offered: u64,
    pub selections: u64,
    pub notices: u64,
    pub events: BTreeMap<String, u64>,
    pub state_hash: String,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub schema_version: u32,
    pub frames: u64,
    pub latency_p50_us: u64,
    pub latency_p99_us: u64,
    pub latency_max_us: u64,
    pub replan_ms: f64,
    pub wall_time_s: f64,
}

impl Timing {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("timing serializes");
        s.push('\n');
        s
    }
}

/// Nearest-rank percentile of sorted values; 0 when empty.
pub fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
