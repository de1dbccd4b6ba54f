//! Resampling a session's multi-rate channels onto one uniform grid.
//!
//! Dense channels (pressure, audio) are linearly interpolated between their
//! bracketing samples. Sparse channels (heart rate, respiratory rate) hold
//! their last reported value. A cell is missing when its contributing
//! samples are farther than the channel's `max_gap_ms`, and there is no
//! extrapolation before the first sample.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::channel::{Channel, PerChannel};
use crate::session::{ChannelSeries, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub grid_step_ms: i64,
    pub max_gap_ms: PerChannel<i64>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            grid_step_ms: 1000,
            max_gap_ms: PerChannel { pressure_gf: 5_000, audio_rms: 5_000, heart_rate: 30_000, respiratory_rate: 30_000 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimelineError {
    #[error("grid step must be > 0, got {0}")]
    BadStep(i64),
    #[error("session {0} has no pressure samples")]
    DegenerateSession(String),
}

/// All channels on one grid; `None` marks a missing cell. Pressure is in
/// gram-force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTimeline {
    pub session_id: String,
    pub grid_start_ms: i64,
    pub grid_step_ms: i64,
    pub session_end_ms: i64,
    pub columns: PerChannel<Vec<Option<f64>>>,
}

impl AlignedTimeline {
    pub fn len(&self) -> usize {
        self.columns.pressure_gf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, channel: Channel) -> &[Option<f64>] {
        self.columns.get(channel)
    }

    pub fn time_at(&self, i: usize) -> i64 {
        self.grid_start_ms + i as i64 * self.grid_step_ms
    }

    /// Seconds since grid start for every cell.
    pub fn elapsed_s(&self) -> Vec<f64> {
        (0..self.len()).map(|i| (i as i64 * self.grid_step_ms) as f64 / 1000.0).collect()
    }

    /// CSV with columns `t_ms,pressure_gf,audio_rms,heart_rate,respiratory_rate`;
    /// missing cells are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_ms", "pressure_gf", "audio_rms", "heart_rate", "respiratory_rate"])?;
        for i in 0..self.len() {
            let mut row = vec![self.time_at(i).to_string()];
            for c in Channel::ALL {
                row.push(self.column(c)[i].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear interpolation at `t_ms`; `None` outside the sample span.
pub fn interpolate_linear(series: &ChannelSeries, t_ms: i64) -> Option<f64> {
    interpolate_within(series, t_ms, i64::MAX)
}

fn interpolate_within(series: &ChannelSeries, t_ms: i64, max_gap_ms: i64) -> Option<f64> {
    let ts = &series.timestamps_ms;
    let idx = ts.partition_point(|t| *t < t_ms);
    if idx < ts.len() && ts[idx] == t_ms {
        return Some(series.values[idx]);
    }
    if idx == 0 || idx == ts.len() {
        return None;
    }
    let (t0, t1) = (ts[idx - 1], ts[idx]);
    if t_ms - t0 > max_gap_ms || t1 - t_ms > max_gap_ms {
        return None;
    }
    let (v0, v1) = (series.values[idx - 1], series.values[idx]);
    let frac = (t_ms - t0) as f64 / (t1 - t0) as f64;
    Some(v0 + (v1 - v0) * frac)
}

/// Value of the latest sample at or before `t_ms`, if it is at most
/// `max_gap_ms` old.
pub fn hold_last(series: &ChannelSeries, t_ms: i64, max_gap_ms: i64) -> Option<f64> {
    let idx = series.timestamps_ms.partition_point(|t| *t <= t_ms);
    if idx == 0 {
        return None;
    }
    let t0 = series.timestamps_ms[idx - 1];
    (t_ms - t0 <= max_gap_ms).then(|| series.values[idx - 1])
}

pub fn align(session: &Session, config: &AlignConfig, calibration: &CalibrationProfile) -> Result<AlignedTimeline, TimelineError> {
    if config.grid_step_ms <= 0 {
        return Err(TimelineError::BadStep(config.grid_step_ms));
    }
    if session.series(Channel::PressureRaw).is_empty() {
        return Err(TimelineError::DegenerateSession(session.session_id.clone()));
    }
    let start = session.start_ts_ms;
    let step = config.grid_step_ms;
    let n = ((session.end_ts_ms - start).max(0) / step + 1) as usize;

    let columns = PerChannel::from_fn(|channel| {
        let raw = session.series(channel);
        let calibrated;
        let series = if channel == Channel::PressureRaw {
            calibrated = ChannelSeries {
                channel,
                timestamps_ms: raw.timestamps_ms.clone(),
                values: raw.values.iter().map(|v| calibration.calibrate(*v)).collect(),
            };
            &calibrated
        } else {
            raw
        };
        let gap = *config.max_gap_ms.get(channel);
        (0..n)
            .map(|i| {
                let t = start + i as i64 * step;
                if channel.is_dense() {
                    interpolate_within(series, t, gap)
                } else {
                    hold_last(series, t, gap)
                }
            })
            .collect()
    });

    Ok(AlignedTimeline {
        session_id: session.session_id.clone(),
        grid_start_ms: start,
        grid_step_ms: step,
        session_end_ms: session.end_ts_ms,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(channel: Channel, pts: &[(i64, f64)]) -> ChannelSeries {
        ChannelSeries::new(channel, pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect()).unwrap()
    }

    fn identity() -> CalibrationProfile {
        CalibrationProfile::new("d", 0.0, 1.0).unwrap()
    }

    fn session(start: i64, end: i64) -> Session {
        Session::new_empty("s".into(), "p".into(), "d".into(), start, end)
    }

    #[test]
    fn interpolation_examples() {
        let s = series(Channel::AudioRms, &[(0, 0.0), (10, 1.0)]);
        assert_eq!(interpolate_linear(&s, 5), Some(0.5));
        assert_eq!(interpolate_linear(&s, 10), Some(1.0));
        assert_eq!(interpolate_linear(&s, 0), Some(0.0));
        assert_eq!(interpolate_linear(&s, 11), None);
        assert_eq!(interpolate_linear(&s, -1), None);
        assert_eq!(interpolate_linear(&ChannelSeries::empty(Channel::AudioRms), 0), None);
    }

    #[test]
    fn pressure_midpoint() {
        let mut s = session(0, 10_000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 0.0), (10_000, 10.0)]);
        let mut cfg = AlignConfig { grid_step_ms: 5000, ..Default::default() };
        cfg.max_gap_ms.pressure_gf = 10_000;
        let tl = align(&s, &cfg, &identity()).unwrap();
        assert_eq!(tl.columns.pressure_gf, vec![Some(0.0), Some(5.0), Some(10.0)]);
    }

    #[test]
    fn pressure_is_calibrated() {
        let mut s = session(0, 1000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 8400.0), (1000, 12600.0)]);
        let tl = align(&s, &AlignConfig::default(), &CalibrationProfile::default()).unwrap();
        assert_eq!(tl.columns.pressure_gf, vec![Some(0.0), Some(10.0)]);
    }

    #[test]
    fn hold_last_heart_rate() {
        let mut s = session(0, 5000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 1.0)]);
        s.channels.heart_rate = series(Channel::HeartRate, &[(0, 80.0), (5000, 76.0)]);
        let tl = align(&s, &AlignConfig::default(), &identity()).unwrap();
        let hr: Vec<_> = tl.columns.heart_rate.iter().map(|v| v.unwrap()).collect();
        assert_eq!(hr, vec![80.0, 80.0, 80.0, 80.0, 80.0, 76.0]);
    }

    #[test]
    fn single_sample_held_for_max_gap_then_missing() {
        let mut s = session(0, 60_000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 1.0)]);
        s.channels.heart_rate = series(Channel::HeartRate, &[(0, 70.0)]);
        let mut cfg = AlignConfig::default();
        cfg.max_gap_ms.heart_rate = 10_000;
        let tl = align(&s, &cfg, &identity()).unwrap();
        assert_eq!(tl.len(), 61);
        for (i, v) in tl.columns.heart_rate.iter().enumerate() {
            assert_eq!(v.is_some(), i <= 10, "cell {i}");
        }
    }

    #[test]
    fn reading_before_start_covers_first_cells() {
        let mut s = session(10_000, 20_000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(10_000, 1.0)]);
        s.channels.heart_rate = series(Channel::HeartRate, &[(8_000, 70.0)]);
        let tl = align(&s, &AlignConfig::default(), &identity()).unwrap();
        assert_eq!(tl.columns.heart_rate[0], Some(70.0));
    }

    #[test]
    fn dense_gap_marks_missing() {
        let mut s = session(0, 20_000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 1.0), (1000, 1.0), (20_000, 3.0)]);
        let tl = align(&s, &AlignConfig::default(), &identity()).unwrap();
        assert_eq!(tl.columns.pressure_gf[0], Some(1.0));
        assert_eq!(tl.columns.pressure_gf[1], Some(1.0));
        assert!(tl.columns.pressure_gf[2..20].iter().all(Option::is_none));
        assert_eq!(tl.columns.pressure_gf[20], Some(3.0));
        assert!(tl.columns.audio_rms.iter().all(Option::is_none));
    }

    #[test]
    fn errors() {
        let s = session(0, 1000);
        assert!(matches!(align(&s, &AlignConfig::default(), &identity()), Err(TimelineError::DegenerateSession(_))));
        let cfg = AlignConfig { grid_step_ms: 0, ..Default::default() };
        assert!(matches!(align(&s, &cfg, &identity()), Err(TimelineError::BadStep(0))));
    }

    #[test]
    fn csv_dump() {
        let mut s = session(0, 2000);
        s.channels.pressure_gf = series(Channel::PressureRaw, &[(0, 1.0), (2000, 3.0)]);
        s.channels.heart_rate = series(Channel::HeartRate, &[(1000, 70.0)]);
        let tl = align(&s, &AlignConfig::default(), &identity()).unwrap();
        let mut buf = Vec::new();
        tl.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_ms,pressure_gf,audio_rms,heart_rate,respiratory_rate\n0,1,,,\n1000,2,,70,\n2000,3,,70,\n"
        );
    }

    proptest! {
        #[test]
        fn length_formula_and_monotonic_grid(start in 0i64..1_000_000, dur in 0i64..200_000, step in 1i64..20_000) {
            let mut s = session(start, start + dur);
            s.channels.pressure_gf = series(Channel::PressureRaw, &[(start, 1.0)]);
            let cfg = AlignConfig { grid_step_ms: step, ..Default::default() };
            let tl = align(&s, &cfg, &identity()).unwrap();
            prop_assert_eq!(tl.len() as i64, dur / step + 1);
            for c in Channel::ALL {
                prop_assert_eq!(tl.column(c).len(), tl.len());
            }
            prop_assert!((1..tl.len()).all(|i| tl.time_at(i) > tl.time_at(i - 1)));
        }

        #[test]
        fn constant_in_constant_out(v in 0.0f64..1.0, hr in 21.0f64..249.0, n in 2usize..80, period in 50i64..3000) {
            let mut s = session(0, (n as i64 - 1) * period);
            let ts: Vec<i64> = (0..n as i64).map(|i| i * period).collect();
            s.channels.pressure_gf = ChannelSeries::new(Channel::PressureRaw, ts.clone(), vec![v * 100.0; n]).unwrap();
            s.channels.audio_rms = ChannelSeries::new(Channel::AudioRms, ts.clone(), vec![v; n]).unwrap();
            s.channels.heart_rate = ChannelSeries::new(Channel::HeartRate, ts, vec![hr; n]).unwrap();
            let tl = align(&s, &AlignConfig::default(), &identity()).unwrap();
            for x in tl.columns.audio_rms.iter().flatten() { prop_assert_eq!(*x, v); }
            for x in tl.columns.pressure_gf.iter().flatten() { prop_assert_eq!(*x, v * 100.0); }
            for x in tl.columns.heart_rate.iter().flatten() { prop_assert_eq!(*x, hr); }
        }

        #[test]
        fn grid_sampled_channel_is_reproduced(vals in proptest::collection::vec(0.0f64..1.0, 2..100), step in 100i64..5000) {
            let n = vals.len();
            let ts: Vec<i64> = (0..n as i64).map(|i| 7_000 + i * step).collect();
            let mut s = session(7_000, ts[n - 1]);
            s.channels.pressure_gf = ChannelSeries::new(Channel::PressureRaw, ts.clone(), vals.clone()).unwrap();
            s.channels.audio_rms = ChannelSeries::new(Channel::AudioRms, ts, vals.clone()).unwrap();
            let cfg = AlignConfig { grid_step_ms: step, ..Default::default() };
            let tl = align(&s, &cfg, &identity()).unwrap();
            for (i, v) in vals.iter().enumerate() {
                prop_assert!((tl.columns.audio_rms[i].unwrap() - v).abs() <= 1e-9);
                prop_assert!((tl.columns.pressure_gf[i].unwrap() - v).abs() <= 1e-9);
            }
        }
    }
}
