use std::fs::File;
use std::io::BufWriter;
use std::sync::atomic::Ordering;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use carrier_core::analytics::{classify, Scalar, Verdict};
use carrier_core::gateway::generate_report;
use carrier_core::ingest::{replay_frames, IngestServer, Recording, Speed};
use carrier_core::pipeline::{summarize_cohort, write_series_csv};
use carrier_core::simulator::{generate_cohort, CohortSpec};
use carrier_core::store::SessionFilter;
use carrier_core::{Channel, SessionStore};
use log::warn;
use serde::Serialize;

use super::analyze_store;
use crate::output::{emit, num};
use crate::Ctx;

const PARTICIPANT: &str = "selftest";
const DRAIN_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    sessions: usize,
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: Option<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct Outcome {
    sessions_stored: usize,
    checks: Vec<Check>,
    report_words: Vec<String>,
    passed: bool,
}

fn sign(v: Option<f64>) -> &'static str {
    match v {
        Some(x) if x > 0.0 => "+",
        Some(x) if x < 0.0 => "-",
        Some(_) => "0",
        None => "?",
    }
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let tmp;
    let root = if ctx.store_given {
        ctx.store.clone()
    } else {
        tmp = tempfile::tempdir()?;
        tmp.path().to_path_buf()
    };

    let mut spec = CohortSpec::calming(a.sessions, a.seed);
    spec.base_profile.participant_id = PARTICIPANT.into();
    let cohort = generate_cohort(&spec)?;
    let expected = cohort.sessions.len() as u64;

    let store = SessionStore::open(&root).with_context(|| format!("opening store {}", root.display()))?;
    let before = store.index()?.len() as u64;
    let handle = IngestServer::bind("127.0.0.1:0", store, ctx.config.segmenter.clone())?.spawn()?;
    let rec = Recording { participant: Some(PARTICIPANT.into()), frames: cohort.sessions.concat() };
    replay_frames(&rec, handle.local_addr, Speed::Max)?;
    let deadline = Instant::now() + DRAIN_TIMEOUT;
    while handle.stats.sessions_persisted.load(Ordering::SeqCst) < expected && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(20));
    }
    let snap = handle.shutdown();
    if snap.sessions_persisted != expected {
        warn!("ingest stored {} sessions, expected {expected}", snap.sessions_persisted);
    }

    let mut store = SessionStore::open(&root)?;
    let filter = SessionFilter { participant: Some(PARTICIPANT.into()), ..Default::default() };
    let analyzed = analyze_store(&store, &filter, &ctx.config.analysis)?;
    let stored = store.index()?.len() as u64 - before;
    if analyzed.is_empty() {
        bail!("no sessions came through ingest");
    }
    let metrics: Vec<_> = analyzed.iter().map(|(_, m)| m.clone()).collect();
    write_series_csv(&metrics, BufWriter::new(File::create(root.join("fig6.csv"))?))?;
    let summary = summarize_cohort(&metrics);

    let thresholds = &ctx.config.analysis.thresholds;
    let last = metrics.last().expect("non-empty");
    let verdict = classify(last, thresholds);
    let report = generate_report(None, last, &verdict, &metrics, &ctx.config.devices, thresholds).report;
    store.put_report(&last.session_id, &report)?;

    let r = |s: Scalar| summary.trend(s).map(|t| t.cross_session_r);
    let calming = metrics.iter().filter(|m| classify(m, thresholds).verdict == Verdict::Calming).count() as f64 / metrics.len() as f64;
    let settled = &summary.settled_fraction;
    let med = &summary.median_slope_per_min;
    let check = |name, value: Option<f64>, ok: fn(f64) -> bool| Check { name, value, pass: value.is_some_and(ok) };
    let checks = vec![
        check("sessions_stored", Some(stored as f64), |v| v > 0.0),
        check("r_mean_pressure", r(Scalar::mean(Channel::PressureRaw)), |v| v > 0.5),
        check("r_mean_audio", r(Scalar::mean(Channel::AudioRms)), |v| v < -0.5),
        check("median_hr_slope", med.heart_rate, |v| v < 0.0),
        check("median_rr_slope", med.respiratory_rate, |v| v < 0.0),
        check("settled_pressure", settled.pressure_gf, |v| v >= 0.8),
        check("settled_audio", settled.audio_rms, |v| v >= 0.8),
        check("calming_fraction", Some(calming), |v| v >= 0.9),
    ];
    let passed = checks.iter().all(|c| c.pass) && stored == expected;
    let out = Outcome { sessions_stored: stored as usize, checks, report_words: report.prompt_words, passed };

    emit(ctx.json, &out, || {
        let mut s = format!("{} of {expected} sessions stored\n", out.sessions_stored);
        s += &format!("pressure mean trend: {}\n", sign(r(Scalar::mean(Channel::PressureRaw))));
        s += &format!("audio mean trend:    {}\n", sign(r(Scalar::mean(Channel::AudioRms))));
        s += &format!("heart rate slope:    {}\n", sign(med.heart_rate));
        s += &format!("resp rate slope:     {}\n", sign(med.respiratory_rate));
        for c in &out.checks {
            s += &format!("{:<5} {:<18} {}\n", if c.pass { "ok" } else { "FAIL" }, c.name, num(c.value, 3));
        }
        s += &format!("report: {}\n", out.report_words.join(", "));
        s
    })?;
    if !out.passed {
        bail!("selftest failed");
    }
    Ok(())
}
