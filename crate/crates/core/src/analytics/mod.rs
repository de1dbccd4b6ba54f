//! Session statistics, cross-session trends and the calming classifier.

pub mod classify;
pub mod cohort;
pub mod metrics;
pub mod stats;

pub use classify::{classify, CalmingVerdict, RuleSet, Thresholds, Verdict};
pub use cohort::{cohort_trend, CohortTrend, Scalar, Statistic};
pub use metrics::{session_metrics, session_metrics_with, ChannelMetrics, SessionMetrics, DEFAULT_ROLLING_WINDOW};
pub use stats::{linreg, pearson, rolling_std, stabilization_index, StatsError, Trend};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("degenerate session: {0}")]
    DegenerateSession(String),
    #[error("need at least 2 sessions with the scalar present, got {0}")]
    TooFewSessions(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
