use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::SessionMetrics;
use super::stats::{ols, pearson};
use super::AnalyticsError;
use crate::channel::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Statistic {
    Mean,
    Std,
    Slope,
    WithinR,
    Stabilization,
}

impl Statistic {
    const ALL: [Statistic; 5] = [Statistic::Mean, Statistic::Std, Statistic::Slope, Statistic::WithinR, Statistic::Stabilization];

    fn prefix(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Std => "std",
            Statistic::Slope => "slope",
            Statistic::WithinR => "r",
            Statistic::Stabilization => "stab",
        }
    }
}

/// A per-session scalar, named like `mean_pressure_gf` or `stab_audio_rms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scalar {
    Duration,
    Channel(Channel, Statistic),
}

impl Scalar {
    pub fn mean(c: Channel) -> Self {
        Scalar::Channel(c, Statistic::Mean)
    }

    pub fn stabilization(c: Channel) -> Self {
        Scalar::Channel(c, Statistic::Stabilization)
    }

    pub fn of(&self, m: &SessionMetrics) -> Option<f64> {
        match *self {
            Scalar::Duration => Some(m.duration_s),
            Scalar::Channel(c, s) => {
                let cm = m.channel(c);
                match s {
                    Statistic::Mean => cm.mean,
                    Statistic::Std => cm.std,
                    Statistic::Slope => cm.slope_per_min,
                    Statistic::WithinR => cm.within_session_r,
                    Statistic::Stabilization => cm.stabilization_index,
                }
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Duration => f.write_str("duration_s"),
            Scalar::Channel(c, s) => write!(f, "{}_{}", s.prefix(), c.aligned_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scalar `{0}`")]
pub struct UnknownScalar(pub String);

impl FromStr for Scalar {
    type Err = UnknownScalar;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "duration_s" {
            return Ok(Scalar::Duration);
        }
        for stat in Statistic::ALL {
            for c in Channel::ALL {
                let candidate = Scalar::Channel(c, stat);
                if candidate.to_string() == s {
                    return Ok(candidate);
                }
            }
        }
        Err(UnknownScalar(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTrend {
    pub scalar_name: String,
    pub session_indices: Vec<usize>,
    pub scalar_values: Vec<f64>,
    pub cross_session_r: f64,
    /// Units per session.
    pub cross_session_slope: f64,
}

/// Trend of one scalar across sessions ordered by start time. Sessions where
/// the scalar is missing are skipped but keep their index.
pub fn cohort_trend(metrics: &[SessionMetrics], scalar: Scalar) -> Result<CohortTrend, AnalyticsError> {
    let (idx, vals): (Vec<usize>, Vec<f64>) = metrics
        .iter()
        .enumerate()
        .filter_map(|(i, m)| scalar.of(m).map(|v| (i, v)))
        .unzip();
    if vals.len() < 2 {
        return Err(AnalyticsError::TooFewSessions(vals.len()));
    }
    let x: Vec<f64> = idx.iter().map(|i| *i as f64).collect();
    let r = pearson(&x, &vals)?;
    let fit = ols(&x, &vals)?;
    Ok(CohortTrend {
        scalar_name: scalar.to_string(),
        session_indices: idx,
        scalar_values: vals,
        cross_session_r: r,
        cross_session_slope: fit.slope,
    })
}
