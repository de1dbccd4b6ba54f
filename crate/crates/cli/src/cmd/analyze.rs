use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use carrier_core::analytics::{classify, SessionMetrics};
use carrier_core::pipeline::{analyze_session, AnalysisError};
use carrier_core::timeline::align;
use carrier_core::{Channel, SessionStore};

use crate::config::load_calibration;
use crate::output::{emit, num};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    session: String,
    /// Calibration profile JSON for the pressure channel
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Also write the aligned 1 Hz timeline here
    #[arg(long)]
    timeline_csv: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let mut cfg = ctx.config.analysis.clone();
    if let Some(p) = &a.calibration {
        cfg.calibration = load_calibration(p)?;
    }
    let store = SessionStore::open_read_only(&ctx.store);
    let session = store.load_session(&a.session)?;
    if let Some(path) = &a.timeline_csv {
        let tl = align(&session, &cfg.align, &cfg.calibration).map_err(AnalysisError::from)?;
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        tl.write_csv(BufWriter::new(f))?;
    }
    let metrics = analyze_session(&session, &cfg)?;
    let verdict = classify(&metrics, &cfg.thresholds);
    emit(ctx.json, &metrics, || format!("{}verdict: {}\n", table(&metrics), verdict.verdict))
}

pub fn table(m: &SessionMetrics) -> String {
    let mut s = format!("session {}  duration {:.0} s\n", m.session_id, m.duration_s);
    s += &format!("{:<18}{:>10}{:>10}{:>12}{:>8}{:>8}{:>9}\n", "channel", "mean", "std", "slope/min", "r", "stab", "missing");
    for c in Channel::ALL {
        let cm = m.channel(c);
        s += &format!(
            "{:<18}{:>10}{:>10}{:>12}{:>8}{:>8}{:>8.0}%\n",
            c.aligned_name(),
            num(cm.mean, 2),
            num(cm.std, 2),
            num(cm.slope_per_min, 3),
            num(cm.within_session_r, 2),
            num(cm.stabilization_index, 2),
            cm.missing_fraction * 100.0
        );
    }
    s
}
