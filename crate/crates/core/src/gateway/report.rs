use serde::{Deserialize, Serialize};

use crate::analytics::{CalmingVerdict, SessionMetrics, Thresholds, Verdict};

pub const MAX_PROMPT_WORDS: usize = 5;
pub const MAX_WORD_CHARS: usize = 32;
pub const MAX_NARRATIVE_CHARS: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Llm,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub session_id: String,
    pub prompt_words: Vec<String>,
    pub narrative: String,
    pub source: ReportSource,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("prompt_words must hold 1 to {MAX_PROMPT_WORDS} entries, got {0}")]
    WordCount(usize),
    #[error("prompt word `{0}` is empty or longer than {MAX_WORD_CHARS} characters")]
    BadWord(String),
    #[error("narrative has {0} characters, limit {MAX_NARRATIVE_CHARS}")]
    NarrativeTooLong(usize),
}

impl FeedbackReport {
    pub fn validate(&self) -> Result<(), ReportError> {
        validate_parts(&self.prompt_words, &self.narrative)
    }
}

pub(crate) fn validate_parts(words: &[String], narrative: &str) -> Result<(), ReportError> {
    if words.is_empty() || words.len() > MAX_PROMPT_WORDS {
        return Err(ReportError::WordCount(words.len()));
    }
    if let Some(w) = words.iter().find(|w| w.trim().is_empty() || w.chars().count() > MAX_WORD_CHARS) {
        return Err(ReportError::BadWord(w.clone()));
    }
    let n = narrative.chars().count();
    if n > MAX_NARRATIVE_CHARS {
        return Err(ReportError::NarrativeTooLong(n));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, decimals: usize, signed: bool) -> String {
    match v {
        Some(x) if signed => format!("{x:+.decimals$}"),
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".into(),
    }
}

/// Offline feedback: a fixed word table keyed by the verdict and a sentence
/// template filled with the session's metrics.
pub fn template_feedback(metrics: &SessionMetrics, verdict: &CalmingVerdict, thresholds: &Thresholds) -> FeedbackReport {
    let hr = metrics.channels.heart_rate.slope_per_min;
    let rr = metrics.channels.respiratory_rate.slope_per_min;
    let stab = metrics.channels.audio_rms.stabilization_index;

    let prompt_words: Vec<String> = match verdict.verdict {
        Verdict::Calming => {
            // relative margin by which each calming rule was met
            let mut ranked = [
                ("steady", hr.map_or(0.0, |s| (-s - thresholds.hr_slope_min) / thresholds.hr_slope_min)),
                ("calm", rr.map_or(0.0, |s| (-s - thresholds.rr_slope_min) / thresholds.rr_slope_min)),
                ("present", stab.map_or(0.0, |s| (thresholds.stab_max - s) / thresholds.stab_max)),
            ];
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            ranked.iter().map(|(w, _)| w.to_string()).collect()
        }
        Verdict::Neutral => vec!["settling".into(), "continuing".into()],
        Verdict::Agitated => vec!["restless".into(), "take a breath".into()],
    };

    let closing = match verdict.verdict {
        Verdict::Calming => "Your body settled as you wrote.",
        Verdict::Neutral if !verdict.missing_inputs.is_empty() => "Some signals were missing, so this is a partial picture.",
        Verdict::Neutral => "Your state held fairly even; keep going at your own pace.",
        Verdict::Agitated => "Your body grew more active; pause and breathe slowly before the next line.",
    };
    let mut narrative = format!(
        "You wrote for {} minutes. Heart rate moved {} bpm per minute, breathing {} breaths per minute per minute, and the sound steadiness index was {}. {}",
        fmt_opt(Some(metrics.duration_s / 60.0), 1, false),
        fmt_opt(hr, 2, true),
        fmt_opt(rr, 2, true),
        fmt_opt(stab, 2, false),
        closing,
    );
    if narrative.chars().count() > MAX_NARRATIVE_CHARS {
        narrative = narrative.chars().take(MAX_NARRATIVE_CHARS).collect();
    }
    FeedbackReport {
        session_id: metrics.session_id.clone(),
        prompt_words,
        narrative,
        source: ReportSource::Template,
        verdict: verdict.verdict,
    }
}
