use std::path::PathBuf;

use anyhow::{bail, Context};
use carrier_core::analytics::classify;
use carrier_core::gateway::{generate_report, FeedbackReport, GatewayClient};
use carrier_core::store::SessionFilter;
use carrier_core::SessionStore;
use log::info;
use serde::Serialize;

use super::analyze_store;
use crate::config::load_gateway;
use crate::output::emit;
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    session: String,
    /// Feedback endpoint settings (JSON)
    #[arg(long, conflicts_with = "offline")]
    gateway_config: Option<PathBuf>,
    /// Use the built-in template instead of the feedback endpoint
    #[arg(long)]
    offline: bool,
}

#[derive(Serialize)]
struct Output {
    report: FeedbackReport,
    fallback_reason: Option<String>,
    path: PathBuf,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let gateway = if a.offline {
        None
    } else if let Some(p) = &a.gateway_config {
        Some(load_gateway(p)?)
    } else {
        if ctx.config.gateway.is_none() {
            info!("no gateway configured; writing the offline template");
        }
        ctx.config.gateway.clone()
    };
    let client = gateway.map(GatewayClient::new).transpose()?;

    let mut store = SessionStore::open(&ctx.store).with_context(|| format!("opening store {}", ctx.store.display()))?;
    let entry = store
        .index()?
        .into_iter()
        .find(|e| e.session_id == a.session)
        .with_context(|| format!("session {} not found in {}", a.session, ctx.store.display()))?;
    // history is the participant's sessions up to and including this one
    let filter = SessionFilter { participant: Some(entry.participant_id.clone()), start_to_ms: Some(entry.start_ts_ms), ..Default::default() };
    let history: Vec<_> = analyze_store(&store, &filter, &ctx.config.analysis)?.into_iter().map(|(_, m)| m).collect();
    let Some(metrics) = history.iter().find(|m| m.session_id == a.session).cloned() else {
        bail!("session {} has no usable pressure data", a.session);
    };
    let thresholds = &ctx.config.analysis.thresholds;
    let verdict = classify(&metrics, thresholds);
    let outcome = generate_report(client.as_ref(), &metrics, &verdict, &history, &ctx.config.devices, thresholds);
    let path = store.put_report(&a.session, &outcome.report)?;

    let out = Output { report: outcome.report, fallback_reason: outcome.fallback_reason.map(|e| e.to_string()), path };
    emit(ctx.json, &out, || {
        let r = &out.report;
        let mut s = format!("{}\n\n{}\n\nverdict: {}  source: {}\n", r.prompt_words.join(" · "), r.narrative, r.verdict, format!("{:?}", r.source).to_lowercase());
        if let Some(why) = &out.fallback_reason {
            s += &format!("gateway not used: {why}\n");
        }
        s += &format!("saved {}\n", out.path.display());
        s
    })
}
