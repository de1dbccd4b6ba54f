//! End-to-end helpers shared by the command line and the test suites:
//! segment a frame stream, align and measure sessions, and summarize a cohort.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::{cohort_trend, session_metrics_with, AnalyticsError, CohortTrend, Scalar, SessionMetrics, Thresholds, DEFAULT_ROLLING_WINDOW};
use crate::calibration::CalibrationProfile;
use crate::channel::Channel;
use crate::frame::SensorFrame;
use crate::ingest::{Segmenter, SegmenterConfig, SessionEvent};
use crate::session::Session;
use crate::timeline::{align, AlignConfig, TimelineError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub align: AlignConfig,
    pub rolling_window: usize,
    pub calibration: CalibrationProfile,
    pub thresholds: Thresholds,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            align: AlignConfig::default(),
            rolling_window: DEFAULT_ROLLING_WINDOW,
            calibration: CalibrationProfile::default(),
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

pub fn analyze_session(session: &Session, cfg: &AnalysisConfig) -> Result<SessionMetrics, AnalysisError> {
    let tl = align(session, &cfg.align, &cfg.calibration)?;
    Ok(session_metrics_with(&tl, cfg.rolling_window)?)
}

/// Run a frame stream through a fresh segmenter, in order, and return every
/// session it closes (including the one open at stream end). Frames the
/// segmenter refuses (stale, duplicate) are skipped.
pub fn segment_frames<'a>(
    frames: impl IntoIterator<Item = &'a SensorFrame>,
    device_id: &str,
    participant_id: &str,
    cfg: &SegmenterConfig,
) -> Vec<Session> {
    let mut seg = Segmenter::new(device_id, participant_id, cfg.clone());
    let mut out = Vec::new();
    let mut collect = |events: Vec<SessionEvent>| {
        out.extend(events.into_iter().filter_map(|e| match e {
            SessionEvent::Closed(s) => Some(s),
            SessionEvent::Opened { .. } => None,
        }))
    };
    for f in frames {
        if let Ok(events) = seg.feed(f) {
            collect(events);
        }
    }
    collect(seg.finish());
    out
}

/// The cross-session series plotted per session: channel means and
/// stabilization indices.
pub fn series_scalars() -> Vec<Scalar> {
    let mut s: Vec<Scalar> = Channel::ALL.iter().map(|c| Scalar::mean(*c)).collect();
    s.extend(Channel::ALL.iter().map(|c| Scalar::stabilization(*c)));
    s
}

/// One row per session, indexed by position in start order. Missing values
/// are empty cells.
pub fn write_series_csv<W: Write>(metrics: &[SessionMetrics], out: W) -> csv::Result<()> {
    let scalars = series_scalars();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["session_index".to_string()];
    header.extend(scalars.iter().map(Scalar::to_string));
    w.write_record(&header)?;
    for (i, m) in metrics.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(scalars.iter().map(|s| s.of(m).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub scalar: String,
    pub trend: Option<CohortTrend>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub sessions: usize,
    pub trends: Vec<TrendResult>,
    pub median_slope_per_min: MedianSlopes,
    /// Share of sessions with a stabilization index below 1, per channel.
    pub settled_fraction: MedianSlopes,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MedianSlopes {
    pub pressure_gf: Option<f64>,
    pub audio_rms: Option<f64>,
    pub heart_rate: Option<f64>,
    pub respiratory_rate: Option<f64>,
}

impl MedianSlopes {
    fn from_fn(mut f: impl FnMut(Channel) -> Option<f64>) -> Self {
        MedianSlopes {
            pressure_gf: f(Channel::PressureRaw),
            audio_rms: f(Channel::AudioRms),
            heart_rate: f(Channel::HeartRate),
            respiratory_rate: f(Channel::RespiratoryRate),
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn summarize_cohort(metrics: &[SessionMetrics]) -> CohortSummary {
    let trends = series_scalars()
        .into_iter()
        .map(|s| match cohort_trend(metrics, s) {
            Ok(t) => TrendResult { scalar: s.to_string(), trend: Some(t), error: None },
            Err(e) => TrendResult { scalar: s.to_string(), trend: None, error: Some(e.to_string()) },
        })
        .collect();
    let median_slope_per_min = MedianSlopes::from_fn(|c| {
        let slopes: Vec<f64> = metrics.iter().filter_map(|m| m.channel(c).slope_per_min).collect();
        median(&slopes)
    });
    let settled_fraction = MedianSlopes::from_fn(|c| {
        let idx: Vec<f64> = metrics.iter().filter_map(|m| m.channel(c).stabilization_index).collect();
        (!idx.is_empty()).then(|| idx.iter().filter(|s| **s < 1.0).count() as f64 / idx.len() as f64)
    });
    CohortSummary { sessions: metrics.len(), trends, median_slope_per_min, settled_fraction }
}

impl CohortSummary {
    pub fn trend(&self, scalar: Scalar) -> Option<&CohortTrend> {
        let name = scalar.to_string();
        self.trends.iter().find(|t| t.scalar == name).and_then(|t| t.trend.as_ref())
    }
}
