//! Post-session feedback: payload construction, the chat-endpoint client and
//! the offline template used whenever the endpoint cannot help.

pub mod client;
pub mod config;
pub mod mock;
pub mod payload;
pub mod report;

use log::warn;

pub use client::{extract_json_object, parse_reply, GatewayClient, SYSTEM_PROMPT};
pub use config::{GatewayConfig, DEFAULT_API_KEY_ENV};
pub use payload::{build_payload, cohort_context, CohortContext, DeviceInfo, FeedbackPayload, MetricsSnapshot, DEFAULT_COHORT_K, MAX_PAYLOAD_BYTES};
pub use report::{template_feedback, FeedbackReport, ReportError, ReportSource};

use crate::analytics::{CalmingVerdict, SessionMetrics, Thresholds};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("payload is {bytes} bytes, limit {limit}")]
    PayloadTooLarge { bytes: usize, limit: usize },
    #[error("gateway unreachable: {0}")]
    GatewayUnreachable(String),
    #[error("gateway timed out")]
    GatewayTimeout,
    #[error("gateway answered HTTP {0}")]
    BadStatus(u16),
    #[error("unusable gateway reply: {0}")]
    UnparseableReply(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::GatewayUnreachable(_) | GatewayError::GatewayTimeout => true,
            GatewayError::BadStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// A report plus why the endpoint was not used, if it was skipped or failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub report: FeedbackReport,
    pub fallback_reason: Option<GatewayError>,
}

/// Never fails: any gateway problem (or no gateway at all) yields the
/// template report.
pub fn generate_report(
    client: Option<&GatewayClient>,
    metrics: &SessionMetrics,
    verdict: &CalmingVerdict,
    history: &[SessionMetrics],
    devices: &DeviceInfo,
    thresholds: &Thresholds,
) -> ReportOutcome {
    let fallback = |reason: Option<GatewayError>| ReportOutcome { report: template_feedback(metrics, verdict, thresholds), fallback_reason: reason };
    let Some(client) = client else {
        return fallback(None);
    };
    let llm = build_payload(metrics, verdict, cohort_context(history, DEFAULT_COHORT_K), devices)
        .and_then(|p| client.request_feedback(&p));
    match llm {
        Ok(report) => ReportOutcome { report, fallback_reason: None },
        Err(e) => {
            warn!("feedback gateway failed ({e}); using the offline template");
            fallback(Some(e))
        }
    }
}
