use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use carrier_core::ingest::{replay_frames, Recording, Speed};
use carrier_core::pipeline::segment_frames;
use carrier_core::simulator::{frames_to_lines, generate_cohort, CohortSpec, SimProfile};
use carrier_core::SessionStore;
use clap::ValueEnum;
use serde::Serialize;

use crate::output::emit;
use crate::Ctx;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Calming,
    Agitated,
    Flat,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value = "calming")]
    preset: Preset,
    /// Full cohort spec as JSON; replaces --preset, --sessions and --seed
    #[arg(long, conflicts_with_all = ["preset", "sessions", "seed"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    sessions: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Override the session length
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    participant: Option<String>,
    /// Directory for session_NNN.jsonl files and manifest.json
    #[arg(long, required_unless_present_any = ["target", "ingest"])]
    out: Option<PathBuf>,
    /// Also stream every session, at full speed, to this ingest address
    #[arg(long)]
    target: Option<String>,
    /// Also segment the frames in-process and append the sessions to --store
    #[arg(long)]
    ingest: bool,
}

#[derive(Serialize)]
struct Summary {
    sessions: usize,
    frames: usize,
    out: Option<PathBuf>,
    streamed_frames: usize,
    ingested_sessions: usize,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing cohort spec {}", p.display()))?,
        None => match a.preset {
            Preset::Calming => CohortSpec::calming(a.sessions, a.seed),
            Preset::Agitated => CohortSpec::agitated(a.sessions, a.seed),
            Preset::Flat => CohortSpec::flat(a.sessions, SimProfile::flat(a.seed), a.seed),
        },
    };
    if let Some(d) = a.duration_s {
        spec.base_profile.session_duration_s = d;
    }
    if let Some(d) = a.device {
        spec.base_profile.device_id = d;
    }
    if let Some(p) = a.participant {
        spec.base_profile.participant_id = p;
    }
    let cohort = generate_cohort(&spec)?;
    let frames: usize = cohort.sessions.iter().map(Vec::len).sum();

    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        for (entry, frames) in cohort.manifest.sessions.iter().zip(&cohort.sessions) {
            fs::write(out.join(&entry.file), frames_to_lines(frames))?;
        }
        fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&cohort.manifest)? + "\n")?;
    }

    let mut streamed = 0;
    if let Some(target) = &a.target {
        let rec = Recording {
            participant: Some(spec.base_profile.participant_id.clone()),
            frames: cohort.sessions.concat(),
        };
        streamed = replay_frames(&rec, target.as_str(), Speed::Max)?.frames_sent;
    }

    let mut ingested = 0;
    if a.ingest {
        let mut store = SessionStore::open(&ctx.store)?;
        let seg = &ctx.config.segmenter;
        let p = &spec.base_profile;
        for s in segment_frames(cohort.sessions.iter().flatten(), &p.device_id, &p.participant_id, seg) {
            store.append_session(&s)?;
            ingested += 1;
        }
        if ingested == 0 {
            bail!("segmentation found no sessions in the simulated frames");
        }
    }

    let summary = Summary { sessions: cohort.sessions.len(), frames, out: a.out.clone(), streamed_frames: streamed, ingested_sessions: ingested };
    emit(ctx.json, &summary, || {
        let mut s = format!("generated {} sessions ({} frames)\n", summary.sessions, summary.frames);
        if let Some(o) = &summary.out {
            s += &format!("wrote session files and manifest.json to {}\n", o.display());
        }
        if a.target.is_some() {
            s += &format!("streamed {streamed} frames\n");
        }
        if a.ingest {
            s += &format!("stored {ingested} sessions in {}\n", ctx.store.display());
        }
        s
    })
}
