//! Load-cell tare/scale model for the pressure channel.

use serde::{Deserialize, Serialize};

/// Tare offset and scale for one load cell, in converter counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct CalibrationProfile {
    pub device_id: String,
    pub offset_counts: f64,
    pub scale_counts_per_gf: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("scale must be finite and non-zero, got {0}")]
    BadScale(f64),
    #[error("offset must be finite, got {0}")]
    BadOffset(f64),
}

#[derive(Deserialize)]
struct RawProfile {
    #[serde(default)]
    device_id: String,
    offset_counts: f64,
    scale_counts_per_gf: f64,
}

impl TryFrom<RawProfile> for CalibrationProfile {
    type Error = CalibrationError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        CalibrationProfile::new(raw.device_id, raw.offset_counts, raw.scale_counts_per_gf)
    }
}

impl CalibrationProfile {
    pub fn new(device_id: impl Into<String>, offset_counts: f64, scale_counts_per_gf: f64) -> Result<Self, CalibrationError> {
        if !offset_counts.is_finite() {
            return Err(CalibrationError::BadOffset(offset_counts));
        }
        if !scale_counts_per_gf.is_finite() || scale_counts_per_gf == 0.0 {
            return Err(CalibrationError::BadScale(scale_counts_per_gf));
        }
        Ok(CalibrationProfile { device_id: device_id.into(), offset_counts, scale_counts_per_gf })
    }

    /// Raw counts to gram-force. Negative results are returned as-is.
    pub fn calibrate(&self, raw_counts: f64) -> f64 {
        (raw_counts - self.offset_counts) / self.scale_counts_per_gf
    }

    /// Inverse of [`calibrate`](Self::calibrate).
    pub fn counts_for(&self, gram_force: f64) -> f64 {
        gram_force * self.scale_counts_per_gf + self.offset_counts
    }
}

impl Default for CalibrationProfile {
    /// Tare at 8400 counts, 420 counts per gram-force.
    fn default() -> Self {
        CalibrationProfile { device_id: String::new(), offset_counts: 8400.0, scale_counts_per_gf: 420.0 }
    }
}

pub fn calibrate_pressure(raw_counts: f64, profile: &CalibrationProfile) -> f64 {
    profile.calibrate(raw_counts)
}
