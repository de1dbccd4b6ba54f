use serde::{Deserialize, Serialize};

use super::metrics::SessionMetrics;
use crate::channel::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// bpm per minute
    pub hr_slope_min: f64,
    /// breaths/min per minute
    pub rr_slope_min: f64,
    pub stab_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { hr_slope_min: 0.2, rr_slope_min: 0.05, stab_max: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Calming,
    Neutral,
    Agitated,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Calming => "calming",
            Verdict::Neutral => "neutral",
            Verdict::Agitated => "agitated",
        })
    }
}

/// Outcome of one rule per input; `None` when the input metric is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub heart_rate: Option<bool>,
    pub respiratory_rate: Option<bool>,
    pub audio: Option<bool>,
}

impl RuleSet {
    fn all(&self) -> bool {
        [self.heart_rate, self.respiratory_rate, self.audio].iter().all(|r| *r == Some(true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalmingVerdict {
    pub verdict: Verdict,
    /// HR slope < -hr_slope_min, RR slope < -rr_slope_min, audio index < stab_max.
    pub calming_rules: RuleSet,
    /// HR slope > hr_slope_min, RR slope > rr_slope_min, audio index > 1 / stab_max.
    pub agitated_rules: RuleSet,
    /// Metrics a rule needed but could not read; non-empty forces `neutral`.
    pub missing_inputs: Vec<String>,
}

/// Decision table over heart-rate slope, respiratory-rate slope and the
/// audio stabilization index.
pub fn classify(metrics: &SessionMetrics, t: &Thresholds) -> CalmingVerdict {
    let hr = metrics.channel(Channel::HeartRate).slope_per_min;
    let rr = metrics.channel(Channel::RespiratoryRate).slope_per_min;
    let audio = metrics.channel(Channel::AudioRms).stabilization_index;

    let mut missing_inputs = Vec::new();
    if hr.is_none() {
        missing_inputs.push("heart_rate.slope_per_min".to_string());
    }
    if rr.is_none() {
        missing_inputs.push("respiratory_rate.slope_per_min".to_string());
    }
    if audio.is_none() {
        missing_inputs.push("audio_rms.stabilization_index".to_string());
    }

    let calming_rules = RuleSet {
        heart_rate: hr.map(|s| s < -t.hr_slope_min),
        respiratory_rate: rr.map(|s| s < -t.rr_slope_min),
        audio: audio.map(|s| s < t.stab_max),
    };
    let agitated_rules = RuleSet {
        heart_rate: hr.map(|s| s > t.hr_slope_min),
        respiratory_rate: rr.map(|s| s > t.rr_slope_min),
        audio: audio.map(|s| s > 1.0 / t.stab_max),
    };
    let verdict = if calming_rules.all() {
        Verdict::Calming
    } else if agitated_rules.all() {
        Verdict::Agitated
    } else {
        Verdict::Neutral
    };
    CalmingVerdict { verdict, calming_rules, agitated_rules, missing_inputs }
}
