//! Segmented recordings of one writing sitting.

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, PerChannel};
use crate::frame::SensorFrame;

/// Samples of a single channel, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub channel: Channel,
    pub timestamps_ms: Vec<i64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("{channel}: {timestamps} timestamps but {values} values")]
    LengthMismatch { channel: Channel, timestamps: usize, values: usize },
    #[error("{channel}: timestamps not strictly increasing at index {index}")]
    NotIncreasing { channel: Channel, index: usize },
    #[error("{channel}: value {value} at index {index} outside channel range")]
    OutOfRange { channel: Channel, index: usize, value: f64 },
}

impl ChannelSeries {
    pub fn empty(channel: Channel) -> Self {
        ChannelSeries { channel, timestamps_ms: Vec::new(), values: Vec::new() }
    }

    pub fn new(channel: Channel, timestamps_ms: Vec<i64>, values: Vec<f64>) -> Result<Self, SeriesError> {
        let s = ChannelSeries { channel, timestamps_ms, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        if self.timestamps_ms.len() != self.values.len() {
            return Err(SeriesError::LengthMismatch {
                channel: self.channel,
                timestamps: self.timestamps_ms.len(),
                values: self.values.len(),
            });
        }
        if let Some(i) = self.timestamps_ms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SeriesError::NotIncreasing { channel: self.channel, index: i + 1 });
        }
        if let Some(i) = self.values.iter().position(|v| !self.channel.accepts(*v)) {
            return Err(SeriesError::OutOfRange { channel: self.channel, index: i, value: self.values[i] });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, timestamp_ms: i64, value: f64) {
        self.timestamps_ms.push(timestamp_ms);
        self.values.push(value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.timestamps_ms.iter().copied().zip(self.values.iter().copied())
    }
}

/// One closed session: a device's writing activity plus the watch readings
/// recorded around it.
///
/// Pressure samples lie in `[start_ts_ms, end_ts_ms]`. Other channels may
/// extend up to one idle timeout beyond either edge, which is how a reading
/// taken just before the first stroke still covers the start of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub device_id: String,
    pub start_ts_ms: i64,
    pub end_ts_ms: i64,
    pub channels: PerChannel<ChannelSeries>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("session ends ({end}) before it starts ({start})")]
    Inverted { start: i64, end: i64 },
    #[error("session has no pressure samples")]
    NoPressure,
    #[error("pressure sample at {0} lies outside the session bounds")]
    PressureOutOfBounds(i64),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("series stored under {slot} holds {found} samples")]
    WrongSlot { slot: Channel, found: Channel },
}

impl Session {
    pub fn new_empty(session_id: String, participant_id: String, device_id: String, start_ts_ms: i64, end_ts_ms: i64) -> Self {
        Session {
            session_id,
            participant_id,
            device_id,
            start_ts_ms,
            end_ts_ms,
            channels: PerChannel::from_fn(ChannelSeries::empty),
        }
    }

    pub fn series(&self, channel: Channel) -> &ChannelSeries {
        self.channels.get(channel)
    }

    pub fn frame_count(&self) -> usize {
        self.channels.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn duration_ms(&self) -> i64 {
        self.end_ts_ms - self.start_ts_ms
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.end_ts_ms < self.start_ts_ms {
            return Err(SessionError::Inverted { start: self.start_ts_ms, end: self.end_ts_ms });
        }
        for (slot, series) in self.channels.iter() {
            if series.channel != slot {
                return Err(SessionError::WrongSlot { slot, found: series.channel });
            }
            series.validate()?;
        }
        let pressure = self.series(Channel::PressureRaw);
        if pressure.is_empty() {
            return Err(SessionError::NoPressure);
        }
        if let Some(t) = pressure
            .timestamps_ms
            .iter()
            .find(|t| **t < self.start_ts_ms || **t > self.end_ts_ms)
        {
            return Err(SessionError::PressureOutOfBounds(*t));
        }
        Ok(())
    }

    /// All samples as wire frames, merged into global timestamp order
    /// (ties broken by channel order).
    pub fn frames(&self) -> Vec<SensorFrame> {
        let mut out: Vec<SensorFrame> = self
            .channels
            .iter()
            .flat_map(|(channel, series)| {
                series
                    .iter()
                    .map(move |(t, v)| SensorFrame::new(self.device_id.clone(), channel, t, v))
            })
            .collect();
        out.sort_by_key(|f| (f.timestamp_ms, f.channel));
        out
    }
}
