//! Per-device session segmentation.
//!
//! Frames first pass through a bounded reordering buffer keyed on their own
//! timestamps, then drive a two-state machine:
//!
//! * `Idle -> Active` once `arm_count` consecutive calibrated pressure samples
//!   exceed the threshold. The session starts at the first of them.
//! * `Active -> Idle` when a frame arrives more than `idle_timeout_ms` after
//!   the last above-threshold pressure sample, or when the stream ends. The
//!   session ends at that last above-threshold sample.
//!
//! Non-pressure frames attach to the session whose bounds, widened by the
//! idle timeout on both sides, contain them. Wall-clock time is never read.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::CalibrationProfile;
use crate::channel::{Channel, PerChannel};
use crate::frame::SensorFrame;
use crate::session::{ChannelSeries, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub pressure_threshold_gf: f64,
    pub arm_count: usize,
    pub idle_timeout_ms: i64,
    pub calibration: CalibrationProfile,
    pub max_out_of_order_ms: i64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            pressure_threshold_gf: 5.0,
            arm_count: 3,
            idle_timeout_ms: 30_000,
            calibration: CalibrationProfile::default(),
            max_out_of_order_ms: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("pressure threshold must be > 0, got {0}")]
    Threshold(f64),
    #[error("arm count must be >= 1")]
    ArmCount,
    #[error("idle timeout must be > 0, got {0}")]
    IdleTimeout(i64),
    #[error("out-of-order window must be >= 0, got {0}")]
    OutOfOrder(i64),
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.pressure_threshold_gf.is_finite() && self.pressure_threshold_gf > 0.0) {
            return Err(ConfigError::Threshold(self.pressure_threshold_gf));
        }
        if self.arm_count == 0 {
            return Err(ConfigError::ArmCount);
        }
        if self.idle_timeout_ms <= 0 {
            return Err(ConfigError::IdleTimeout(self.idle_timeout_ms));
        }
        if self.max_out_of_order_ms < 0 {
            return Err(ConfigError::OutOfOrder(self.max_out_of_order_ms));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SessionEvent {
    Opened { device_id: String, start_ts_ms: i64 },
    Closed(Session),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedError {
    #[error("stale frame at {ts}: newest seen is {newest}")]
    StaleFrame { ts: i64, newest: i64 },
    #[error("duplicate {channel} frame at {ts}")]
    DuplicateFrame { channel: Channel, ts: i64 },
    #[error("frame for device `{got}` fed to segmenter for `{expected}`")]
    WrongDevice { expected: String, got: String },
}

/// Frame accounting. For every segmenter,
/// `accepted == persisted + outside_session + buffered()`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SegmenterStats {
    pub accepted: u64,
    pub stale: u64,
    pub duplicate: u64,
    /// Accepted frames that fell outside every session window.
    pub outside_session: u64,
    /// Frames contained in emitted `Closed` sessions.
    pub persisted: u64,
    pub sessions_closed: u64,
}

struct OpenSession {
    start_ts_ms: i64,
    last_above_ts_ms: i64,
    channels: PerChannel<ChannelSeries>,
}

#[allow(clippy::large_enum_variant)]
enum Phase {
    Idle { arm: Vec<(i64, f64)> },
    Active(OpenSession),
}

/// Segmentation state for one device.
pub struct Segmenter {
    device_id: String,
    participant_id: String,
    config: SegmenterConfig,
    reorder: BTreeMap<(i64, Channel), f64>,
    newest_ts: Option<i64>,
    phase: Phase,
    pending: VecDeque<(Channel, i64, f64)>,
    stats: SegmenterStats,
}

impl Segmenter {
    pub fn new(device_id: impl Into<String>, participant_id: impl Into<String>, config: SegmenterConfig) -> Self {
        Segmenter {
            device_id: device_id.into(),
            participant_id: participant_id.into(),
            config,
            reorder: BTreeMap::new(),
            newest_ts: None,
            phase: Phase::Idle { arm: Vec::new() },
            pending: VecDeque::new(),
            stats: SegmenterStats::default(),
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn set_participant(&mut self, participant_id: impl Into<String>) {
        self.participant_id = participant_id.into();
    }

    pub fn stats(&self) -> SegmenterStats {
        self.stats
    }

    pub fn is_active(&self) -> bool {
        matches!(self.phase, Phase::Active(_))
    }

    /// Frames held anywhere inside the segmenter.
    pub fn buffered(&self) -> u64 {
        let phase = match &self.phase {
            Phase::Idle { arm } => arm.len(),
            Phase::Active(open) => open.channels.iter().map(|(_, s)| s.len()).sum(),
        };
        (self.reorder.len() + self.pending.len() + phase) as u64
    }

    pub fn feed(&mut self, frame: &SensorFrame) -> Result<Vec<SessionEvent>, FeedError> {
        if frame.device_id != self.device_id {
            return Err(FeedError::WrongDevice { expected: self.device_id.clone(), got: frame.device_id.clone() });
        }
        let ts = frame.timestamp_ms;
        if let Some(newest) = self.newest_ts {
            if ts < newest - self.config.max_out_of_order_ms {
                self.stats.stale += 1;
                return Err(FeedError::StaleFrame { ts, newest });
            }
        }
        let key = (ts, frame.channel);
        if self.reorder.contains_key(&key) {
            self.stats.duplicate += 1;
            return Err(FeedError::DuplicateFrame { channel: frame.channel, ts });
        }
        self.stats.accepted += 1;
        self.reorder.insert(key, frame.value);
        let newest = self.newest_ts.map_or(ts, |n| n.max(ts));
        self.newest_ts = Some(newest);

        let watermark = newest - self.config.max_out_of_order_ms;
        let mut events = Vec::new();
        while let Some(entry) = self.reorder.first_entry() {
            if entry.key().0 >= watermark {
                break;
            }
            let ((t, channel), value) = entry.remove_entry();
            self.process(channel, t, value, &mut events);
        }
        Ok(events)
    }

    /// Stream end: drain the reordering buffer and close any open session.
    pub fn finish(&mut self) -> Vec<SessionEvent> {
        let mut events = Vec::new();
        while let Some(((t, channel), value)) = self.reorder.pop_first() {
            self.process(channel, t, value, &mut events);
        }
        if let Phase::Active(_) = self.phase {
            events.push(self.close());
        }
        if let Phase::Idle { arm } = &mut self.phase {
            self.stats.outside_session += arm.len() as u64;
            arm.clear();
        }
        self.stats.outside_session += self.pending.len() as u64;
        self.pending.clear();
        events
    }

    fn process(&mut self, channel: Channel, ts: i64, value: f64, events: &mut Vec<SessionEvent>) {
        let idle = self.config.idle_timeout_ms;
        if let Phase::Active(open) = &self.phase {
            if ts - open.last_above_ts_ms > idle {
                events.push(self.close());
            }
        }

        if channel != Channel::PressureRaw {
            match &mut self.phase {
                Phase::Active(open) => open.channels.get_mut(channel).push(ts, value),
                Phase::Idle { arm } => {
                    let horizon = arm.first().map_or(ts, |(t, _)| *t) - idle;
                    self.pending.push_back((channel, ts, value));
                    while self.pending.front().is_some_and(|(_, t, _)| *t < horizon) {
                        self.pending.pop_front();
                        self.stats.outside_session += 1;
                    }
                }
            }
            return;
        }

        let above = self.config.calibration.calibrate(value) > self.config.pressure_threshold_gf;
        match &mut self.phase {
            Phase::Active(open) => {
                open.channels.pressure_gf.push(ts, value);
                if above {
                    open.last_above_ts_ms = ts;
                }
            }
            Phase::Idle { arm } => {
                if !above {
                    self.stats.outside_session += arm.len() as u64 + 1;
                    arm.clear();
                    let horizon = ts - idle;
                    while self.pending.front().is_some_and(|(_, t, _)| *t < horizon) {
                        self.pending.pop_front();
                        self.stats.outside_session += 1;
                    }
                    return;
                }
                arm.push((ts, value));
                if arm.len() < self.config.arm_count {
                    return;
                }
                let start = arm[0].0;
                let mut channels = PerChannel::from_fn(ChannelSeries::empty);
                for (t, v) in arm.drain(..) {
                    channels.pressure_gf.push(t, v);
                }
                for (c, t, v) in self.pending.drain(..) {
                    if t >= start - idle {
                        channels.get_mut(c).push(t, v);
                    } else {
                        self.stats.outside_session += 1;
                    }
                }
                self.phase = Phase::Active(OpenSession { start_ts_ms: start, last_above_ts_ms: ts, channels });
                events.push(SessionEvent::Opened { device_id: self.device_id.clone(), start_ts_ms: start });
            }
        }
    }

    fn close(&mut self) -> SessionEvent {
        let Phase::Active(mut open) = std::mem::replace(&mut self.phase, Phase::Idle { arm: Vec::new() }) else {
            unreachable!("close called while idle");
        };
        let end = open.last_above_ts_ms;
        let pressure = &mut open.channels.pressure_gf;
        let keep = pressure.timestamps_ms.partition_point(|t| *t <= end);
        self.stats.outside_session += (pressure.len() - keep) as u64;
        pressure.timestamps_ms.truncate(keep);
        pressure.values.truncate(keep);

        let session = Session {
            session_id: session_id(&self.device_id, &self.participant_id, open.start_ts_ms),
            participant_id: self.participant_id.clone(),
            device_id: self.device_id.clone(),
            start_ts_ms: open.start_ts_ms,
            end_ts_ms: end,
            channels: open.channels,
        };
        self.stats.persisted += session.frame_count() as u64;
        self.stats.sessions_closed += 1;
        SessionEvent::Closed(session)
    }
}

/// Feed one frame into a segmenter; see [`Segmenter::feed`].
pub fn feed_frame(state: &mut Segmenter, frame: &SensorFrame) -> Result<Vec<SessionEvent>, FeedError> {
    state.feed(frame)
}

/// Sortable id: the start timestamp in the ULID time field and a digest of
/// (device, participant, start) in the random field, so re-ingesting the same
/// stream reproduces the same id.
pub fn session_id(device_id: &str, participant_id: &str, start_ts_ms: i64) -> String {
    let mut h = Sha256::new();
    h.update(device_id.as_bytes());
    h.update([0]);
    h.update(participant_id.as_bytes());
    h.update([0]);
    h.update(start_ts_ms.to_be_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    let random = u128::from_be_bytes(bytes) & ((1u128 << 80) - 1);
    ulid::Ulid::from_parts(start_ts_ms.max(0) as u64, random).to_string()
}
