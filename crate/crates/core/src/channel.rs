//! Channel identities and per-channel containers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the four telemetry channels carried on the wire.
///
/// `PressureRaw` is the load-cell bridge reading in signed 24-bit converter
/// counts, `AudioRms` the microphone loudness level, and the remaining two
/// are watch readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    PressureRaw,
    AudioRms,
    HeartRate,
    RespiratoryRate,
}

/// Minimum and maximum converter counts for a 24-bit signed ADC.
pub const PRESSURE_COUNTS_MIN: f64 = -8_388_608.0;
pub const PRESSURE_COUNTS_MAX: f64 = 8_388_607.0;

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::PressureRaw,
        Channel::AudioRms,
        Channel::HeartRate,
        Channel::RespiratoryRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::PressureRaw => "pressure_raw",
            Channel::AudioRms => "audio_rms",
            Channel::HeartRate => "heart_rate",
            Channel::RespiratoryRate => "respiratory_rate",
        }
    }

    /// Position of the channel in [`Channel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether `value` lies inside the channel's validation range.
    ///
    /// Pressure and audio bounds are inclusive, the physiological bounds
    /// are open intervals.
    pub fn accepts(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            Channel::PressureRaw => (PRESSURE_COUNTS_MIN..=PRESSURE_COUNTS_MAX).contains(&value),
            Channel::AudioRms => (0.0..=1.0).contains(&value),
            Channel::HeartRate => value > 20.0 && value < 250.0,
            Channel::RespiratoryRate => value > 2.0 && value < 60.0,
        }
    }

    /// Clamp `value` into the validation range.
    ///
    /// Open bounds are approached by one ulp so the result is always accepted.
    pub fn clamp(self, value: f64) -> f64 {
        let (lo, hi) = match self {
            Channel::PressureRaw => (PRESSURE_COUNTS_MIN, PRESSURE_COUNTS_MAX),
            Channel::AudioRms => (0.0, 1.0),
            Channel::HeartRate => (next_up(20.0), next_down(250.0)),
            Channel::RespiratoryRate => (next_up(2.0), next_down(60.0)),
        };
        if value.is_nan() {
            return lo;
        }
        value.clamp(lo, hi)
    }

    /// Dense channels are linearly interpolated on the aligned grid; sparse
    /// ones hold their last reported value.
    pub fn is_dense(self) -> bool {
        matches!(self, Channel::PressureRaw | Channel::AudioRms)
    }

    /// Column name used once the channel has been aligned (pressure is
    /// expressed in gram-force by then).
    pub fn aligned_name(self) -> &'static str {
        match self {
            Channel::PressureRaw => "pressure_gf",
            other => other.as_str(),
        }
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel `{0}`")]
pub struct UnknownChannel(pub String);

impl FromStr for Channel {
    type Err = UnknownChannel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownChannel(s.to_string()))
    }
}

/// A value for each of the four channels.
///
/// Serialized with the aligned column names (`pressure_gf`, `audio_rms`,
/// `heart_rate`, `respiratory_rate`), which is how every downstream JSON
/// document keys its channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerChannel<T> {
    pub pressure_gf: T,
    pub audio_rms: T,
    pub heart_rate: T,
    pub respiratory_rate: T,
}

impl<T> PerChannel<T> {
    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        PerChannel {
            pressure_gf: f(Channel::PressureRaw),
            audio_rms: f(Channel::AudioRms),
            heart_rate: f(Channel::HeartRate),
            respiratory_rate: f(Channel::RespiratoryRate),
        }
    }

    pub fn get(&self, channel: Channel) -> &T {
        match channel {
            Channel::PressureRaw => &self.pressure_gf,
            Channel::AudioRms => &self.audio_rms,
            Channel::HeartRate => &self.heart_rate,
            Channel::RespiratoryRate => &self.respiratory_rate,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut T {
        match channel {
            Channel::PressureRaw => &mut self.pressure_gf,
            Channel::AudioRms => &mut self.audio_rms,
            Channel::HeartRate => &mut self.heart_rate,
            Channel::RespiratoryRate => &mut self.respiratory_rate,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Channel, &T) -> U) -> PerChannel<U> {
        PerChannel::from_fn(|c| f(c, self.get(c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &T)> {
        Channel::ALL.into_iter().map(move |c| (c, self.get(c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.as_str()));
        }
        assert!("pulse".parse::<Channel>().is_err());
    }

    #[test]
    fn ranges() {
        assert!(Channel::PressureRaw.accepts(PRESSURE_COUNTS_MIN));
        assert!(Channel::PressureRaw.accepts(PRESSURE_COUNTS_MAX));
        assert!(!Channel::PressureRaw.accepts(PRESSURE_COUNTS_MAX + 1.0));
        assert!(Channel::AudioRms.accepts(0.0));
        assert!(Channel::AudioRms.accepts(1.0));
        assert!(!Channel::AudioRms.accepts(1.5));
        assert!(!Channel::HeartRate.accepts(20.0));
        assert!(!Channel::HeartRate.accepts(250.0));
        assert!(Channel::HeartRate.accepts(68.0));
        assert!(!Channel::RespiratoryRate.accepts(2.0));
        assert!(!Channel::AudioRms.accepts(f64::NAN));
    }

    #[test]
    fn clamp_always_lands_inside_range() {
        for c in Channel::ALL {
            for v in [-1e12, -5.0, 0.0, 2.0, 20.0, 60.0, 250.0, 1e12, f64::NAN] {
                assert!(c.accepts(c.clamp(v)), "{c} {v}");
            }
        }
    }
}
