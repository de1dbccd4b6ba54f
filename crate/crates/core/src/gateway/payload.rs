//! The document sent to the chat endpoint.
//!
//! Floats are rounded to 4 significant digits so that tiny numeric noise does
//! not change the prompt. Keys serialize in sorted order, which makes the
//! rendering byte-stable.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use super::GatewayError;
use crate::analytics::{cohort_trend, CalmingVerdict, ChannelMetrics, Scalar, SessionMetrics};
use crate::channel::{Channel, PerChannel};

pub const MAX_PAYLOAD_BYTES: usize = 32 * 1024;
pub const DEFAULT_COHORT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceInfo {
    pub installation_model: String,
    pub watch_model: String,
}

impl Default for DeviceInfo {
    fn default() -> Self {
        DeviceInfo {
            installation_model: "calligraphy writing table (HX711 load cell, CZN-15E microphone, Arduino Mega)".into(),
            watch_model: "Apple Watch".into(),
        }
    }
}

/// A channel's metrics, or `None` when the channel had no usable data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub session_id: String,
    pub start_ts_ms: i64,
    pub duration_s: f64,
    pub channels: PerChannel<Option<ChannelMetrics>>,
}

impl From<&SessionMetrics> for MetricsSnapshot {
    fn from(m: &SessionMetrics) -> Self {
        MetricsSnapshot {
            session_id: m.session_id.clone(),
            start_ts_ms: m.start_ts_ms,
            duration_s: m.duration_s,
            channels: m.channels.map(|_, cm| cm.mean.is_some().then_some(*cm)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub scalar: String,
    pub values: Vec<Option<f64>>,
    pub cross_session_r: Option<f64>,
    pub slope_per_session: Option<f64>,
}

/// How the last `k` sessions (oldest first, current one included) moved.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortContext {
    pub k: usize,
    pub sessions: usize,
    pub trends: Vec<TrendSummary>,
}

/// Trends of the per-channel means and audio/pressure stabilization over the
/// last `k` entries of `history`.
pub fn cohort_context(history: &[SessionMetrics], k: usize) -> CohortContext {
    let recent = &history[history.len().saturating_sub(k)..];
    let mut scalars: Vec<Scalar> = Channel::ALL.iter().map(|c| Scalar::mean(*c)).collect();
    scalars.extend(Channel::ALL.iter().map(|c| Scalar::stabilization(*c)));
    scalars.push(Scalar::Duration);
    let trends = scalars
        .into_iter()
        .map(|s| {
            let trend = cohort_trend(recent, s).ok();
            TrendSummary {
                scalar: s.to_string(),
                values: recent.iter().map(|m| s.of(m)).collect(),
                cross_session_r: trend.as_ref().map(|t| t.cross_session_r),
                slope_per_session: trend.as_ref().map(|t| t.cross_session_slope),
            }
        })
        .collect();
    CohortContext { k, sessions: recent.len(), trends }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    pub session_id: String,
    pub devices: DeviceInfo,
    pub metrics: MetricsSnapshot,
    pub verdict: CalmingVerdict,
    pub cohort: CohortContext,
}

impl FeedbackPayload {
    /// Compact JSON with rounded floats. Same input, same bytes.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("payload is plain data");
        round_floats(&mut v);
        v.to_string()
    }
}

pub fn build_payload(
    metrics: &SessionMetrics,
    verdict: &CalmingVerdict,
    cohort: CohortContext,
    devices: &DeviceInfo,
) -> Result<FeedbackPayload, GatewayError> {
    let payload = FeedbackPayload {
        session_id: metrics.session_id.clone(),
        devices: devices.clone(),
        metrics: MetricsSnapshot::from(metrics),
        verdict: verdict.clone(),
        cohort,
    };
    let bytes = payload.to_json().len();
    if bytes > MAX_PAYLOAD_BYTES {
        return Err(GatewayError::PayloadTooLarge { bytes, limit: MAX_PAYLOAD_BYTES });
    }
    Ok(payload)
}

/// Round to 4 significant digits.
pub fn round_sig4(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.3e}").parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig4).and_then(Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::analytics::{classify, Thresholds};

    pub(crate) fn fixture(with_heart_rate: bool) -> SessionMetrics {
        let mut channels: PerChannel<ChannelMetrics> = PerChannel::default();
        for (c, cm) in [
            (Channel::PressureRaw, 10.123456),
            (Channel::AudioRms, 0.2345678),
            (Channel::HeartRate, 71.98765),
            (Channel::RespiratoryRate, 15.55555),
        ] {
            *channels.get_mut(c) = ChannelMetrics {
                mean: Some(cm),
                std: Some(cm / 10.0),
                slope_per_min: Some(-0.5 * cm / 10.0),
                within_session_r: Some(-0.87654321),
                stabilization_index: Some(0.456789),
                missing_fraction: 0.0,
            };
        }
        if !with_heart_rate {
            channels.heart_rate = ChannelMetrics { missing_fraction: 1.0, ..Default::default() };
        }
        SessionMetrics { session_id: "01HX".into(), start_ts_ms: 1_700_000_000_000, duration_s: 612.345678, channels }
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig4(612.345678), 612.3);
        assert_eq!(round_sig4(-0.000123456), -0.0001235);
        assert_eq!(round_sig4(1234567.0), 1_235_000.0);
        assert_eq!(round_sig4(0.0), 0.0);
    }

    #[test]
    fn deterministic_bytes_and_rounded_numbers() {
        let m = fixture(true);
        let v = classify(&m, &Thresholds::default());
        let a = build_payload(&m, &v, cohort_context(std::slice::from_ref(&m), 10), &DeviceInfo::default()).unwrap().to_json();
        let b = build_payload(&m, &v, cohort_context(std::slice::from_ref(&m), 10), &DeviceInfo::default()).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"duration_s\":612.3"));
        assert!(a.contains("1700000000000"), "integers are not rounded");
        assert!(!a.contains("10.123456"));
    }

    #[test]
    fn missing_heart_rate_is_null() {
        let m = fixture(false);
        let v = classify(&m, &Thresholds::default());
        let p = build_payload(&m, &v, CohortContext::default(), &DeviceInfo::default()).unwrap();
        let doc: Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(doc["metrics"]["channels"]["heart_rate"], Value::Null);
        assert!(doc["metrics"]["channels"]["audio_rms"].is_object());
    }

    #[test]
    fn oversized_cohort_is_rejected() {
        let m = fixture(true);
        let v = classify(&m, &Thresholds::default());
        let history = vec![m.clone(); 1_000_000];
        let cohort = CohortContext {
            k: 1_000_000,
            sessions: history.len(),
            trends: vec![TrendSummary {
                scalar: "mean_heart_rate".into(),
                values: history.iter().map(|h| h.channels.heart_rate.mean).collect(),
                cross_session_r: None,
                slope_per_session: None,
            }],
        };
        assert!(matches!(
            build_payload(&m, &v, cohort, &DeviceInfo::default()),
            Err(GatewayError::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn cohort_context_uses_last_k() {
        let mut history = Vec::new();
        for i in 0..25 {
            let mut m = fixture(true);
            m.channels.heart_rate.mean = Some(80.0 - i as f64);
            history.push(m);
        }
        let ctx = cohort_context(&history, 10);
        assert_eq!(ctx.sessions, 10);
        let hr = ctx.trends.iter().find(|t| t.scalar == "mean_heart_rate").unwrap();
        assert_eq!(hr.values.first(), Some(&Some(65.0)));
        assert!((hr.cross_session_r.unwrap() + 1.0).abs() < 1e-12);
        let stab = ctx.trends.iter().find(|t| t.scalar == "stab_audio_rms").unwrap();
        assert_eq!(stab.cross_session_r, None, "constant across sessions");
    }
}
