pub mod aggregate;
pub mod analyze;
pub mod replay;
pub mod report;
pub mod selftest;
pub mod serve;
pub mod simulate;

use carrier_core::analytics::SessionMetrics;
use carrier_core::pipeline::{analyze_session, AnalysisConfig};
use carrier_core::store::{IndexEntry, SessionFilter};
use carrier_core::SessionStore;
use log::warn;

/// Metrics for every stored session matching `filter`, in start order.
/// Sessions that cannot be measured are skipped with a warning.
pub fn analyze_store(store: &SessionStore, filter: &SessionFilter, cfg: &AnalysisConfig) -> anyhow::Result<Vec<(IndexEntry, SessionMetrics)>> {
    let mut out = Vec::new();
    for entry in store.list_entries(filter)? {
        let session = store.load_session(&entry.session_id)?;
        match analyze_session(&session, cfg) {
            Ok(m) => out.push((entry, m)),
            Err(e) => warn!("skipping session {}: {e}", entry.session_id),
        }
    }
    Ok(out)
}
