use serde::{Deserialize, Serialize};

use super::stats::{linreg_missing, mean, pearson_missing, sample_std, stabilization_index, StatsError};
use super::AnalyticsError;
use crate::channel::{Channel, PerChannel};
use crate::timeline::AlignedTimeline;

/// Rolling window for stabilization indices, in grid cells.
pub const DEFAULT_ROLLING_WINDOW: usize = 30;

/// Statistics of one aligned channel. Fields are `None` when the channel has
/// fewer than two present cells or the statistic is undefined (e.g. the
/// correlation of a constant signal).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub slope_per_min: Option<f64>,
    pub within_session_r: Option<f64>,
    pub stabilization_index: Option<f64>,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub start_ts_ms: i64,
    pub duration_s: f64,
    pub channels: PerChannel<ChannelMetrics>,
}

impl SessionMetrics {
    pub fn channel(&self, c: Channel) -> &ChannelMetrics {
        self.channels.get(c)
    }
}

pub fn session_metrics(tl: &AlignedTimeline) -> Result<SessionMetrics, AnalyticsError> {
    session_metrics_with(tl, DEFAULT_ROLLING_WINDOW)
}

pub fn session_metrics_with(tl: &AlignedTimeline, rolling_window: usize) -> Result<SessionMetrics, AnalyticsError> {
    if tl.column(Channel::PressureRaw).iter().all(Option::is_none) {
        return Err(AnalyticsError::DegenerateSession(format!("{}: pressure entirely missing", tl.session_id)));
    }
    let duration_ms = tl.session_end_ms - tl.grid_start_ms;
    if duration_ms <= 0 {
        return Err(AnalyticsError::DegenerateSession(format!("{}: zero duration", tl.session_id)));
    }
    let elapsed = tl.elapsed_s();
    let elapsed_opt: Vec<Option<f64>> = elapsed.iter().copied().map(Some).collect();
    let channels = PerChannel::from_fn(|c| channel_metrics(tl.column(c), &elapsed, &elapsed_opt, rolling_window));
    Ok(SessionMetrics {
        session_id: tl.session_id.clone(),
        start_ts_ms: tl.grid_start_ms,
        duration_s: duration_ms as f64 / 1000.0,
        channels,
    })
}

fn defined(r: Result<f64, StatsError>) -> Option<f64> {
    r.ok().filter(|v| v.is_finite())
}

fn channel_metrics(col: &[Option<f64>], elapsed: &[f64], elapsed_opt: &[Option<f64>], window: usize) -> ChannelMetrics {
    let present: Vec<f64> = col.iter().flatten().copied().collect();
    let missing_fraction = if col.is_empty() { 1.0 } else { 1.0 - present.len() as f64 / col.len() as f64 };
    if present.len() < 2 {
        return ChannelMetrics { missing_fraction, ..Default::default() };
    }
    ChannelMetrics {
        mean: Some(mean(&present)),
        std: sample_std(&present),
        slope_per_min: defined(linreg_missing(elapsed, col).map(|t| t.slope_per_min)),
        within_session_r: defined(pearson_missing(elapsed_opt, col)),
        stabilization_index: defined(stabilization_index(col, window)),
        missing_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline(n: usize, f: impl Fn(Channel, usize) -> Option<f64>) -> AlignedTimeline {
        AlignedTimeline {
            session_id: "s".into(),
            grid_start_ms: 0,
            grid_step_ms: 1000,
            session_end_ms: (n as i64 - 1) * 1000,
            columns: PerChannel::from_fn(|c| (0..n).map(|i| f(c, i)).collect()),
        }
    }

    #[test]
    fn constant_session() {
        let tl = timeline(200, |c, _| Some(if c == Channel::HeartRate { 70.0 } else { 1.0 }));
        let m = session_metrics(&tl).unwrap();
        assert_eq!(m.duration_s, 199.0);
        for (_, cm) in m.channels.iter() {
            assert_eq!(cm.slope_per_min, Some(0.0));
            assert_eq!(cm.stabilization_index, Some(1.0));
            assert_eq!(cm.std, Some(0.0));
            assert_eq!(cm.within_session_r, None);
            assert_eq!(cm.missing_fraction, 0.0);
        }
    }

    #[test]
    fn missing_heart_rate_channel() {
        let tl = timeline(100, |c, i| (c != Channel::HeartRate).then_some(i as f64 * 0.001));
        let m = session_metrics(&tl).unwrap();
        assert_eq!(m.channels.heart_rate, ChannelMetrics { missing_fraction: 1.0, ..Default::default() });
        assert!(m.channels.audio_rms.slope_per_min.is_some());
        assert!((m.channels.audio_rms.within_session_r.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_slope_per_minute() {
        let tl = timeline(121, |_, i| Some(80.0 - i as f64 / 60.0));
        let m = session_metrics(&tl).unwrap();
        assert!((m.channels.heart_rate.slope_per_min.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_fraction_counts_cells() {
        let tl = timeline(100, |c, i| if c == Channel::AudioRms && i % 4 == 0 { None } else { Some(1.0 + i as f64) });
        let m = session_metrics(&tl).unwrap();
        assert!((m.channels.audio_rms.missing_fraction - 0.25).abs() < 1e-12);
    }

    #[test]
    fn no_pressure_is_degenerate() {
        let tl = timeline(10, |c, _| (c != Channel::PressureRaw).then_some(1.0));
        assert!(matches!(session_metrics(&tl), Err(AnalyticsError::DegenerateSession(_))));
    }
}
