use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context};
use carrier_core::pipeline::{summarize_cohort, write_series_csv, CohortSummary};
use carrier_core::store::SessionFilter;
use carrier_core::SessionStore;

use super::analyze_store;
use crate::output::{emit, num};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Per-session series CSV
    #[arg(long, default_value = "fig6.csv")]
    out: PathBuf,
    /// Only sessions from this participant
    #[arg(long)]
    participant: Option<String>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let store = SessionStore::open_read_only(&ctx.store);
    let filter = SessionFilter { participant: a.participant.clone(), ..Default::default() };
    let analyzed = analyze_store(&store, &filter, &ctx.config.analysis)?;
    if analyzed.is_empty() {
        bail!("no sessions in {}", ctx.store.display());
    }
    let metrics: Vec<_> = analyzed.into_iter().map(|(_, m)| m).collect();
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_series_csv(&metrics, BufWriter::new(f))?;
    let summary = summarize_cohort(&metrics);
    emit(ctx.json, &summary, || render(&summary) + &format!("wrote {}\n", a.out.display()))
}

pub fn render(s: &CohortSummary) -> String {
    let mut out = format!("{} sessions\n", s.sessions);
    out += &format!("{:<26}{:>10}{:>14}\n", "series", "r(index)", "slope/session");
    for t in &s.trends {
        match &t.trend {
            Some(tr) => out += &format!("{:<26}{:>10.3}{:>14.4}\n", t.scalar, tr.cross_session_r, tr.cross_session_slope),
            None => out += &format!("{:<26}{:>10}{:>14}  {}\n", t.scalar, "-", "-", t.error.as_deref().unwrap_or_default()),
        }
    }
    let (m, f) = (&s.median_slope_per_min, &s.settled_fraction);
    out += &format!("{:<26}{:>14}{:>10}\n", "channel", "median slope", "settled");
    for (name, slope, settled) in [
        ("pressure_gf", m.pressure_gf, f.pressure_gf),
        ("audio_rms", m.audio_rms, f.audio_rms),
        ("heart_rate", m.heart_rate, f.heart_rate),
        ("respiratory_rate", m.respiratory_rate, f.respiratory_rate),
    ] {
        out += &format!("{name:<26}{:>14}{:>10}\n", num(slope, 3), num(settled, 2));
    }
    out
}
