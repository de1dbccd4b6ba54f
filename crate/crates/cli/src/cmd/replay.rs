use std::path::PathBuf;

use anyhow::bail;
use carrier_core::ingest::{replay, Speed, DEFAULT_PORT};
use carrier_core::SessionStore;

use crate::output::emit;
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Frame-line file or stored session file
    #[arg(required_unless_present = "session", conflicts_with = "session")]
    file: Option<PathBuf>,
    /// Replay a session from --store instead of a file
    #[arg(long)]
    session: Option<String>,
    /// Ingest address [default: 127.0.0.1:7071]
    #[arg(long)]
    target: Option<String>,
    /// Speed factor such as 1, 10x, or `max`
    #[arg(long, default_value = "1")]
    speed: Speed,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let path = match (&a.file, &a.session) {
        (Some(f), _) => f.clone(),
        (None, Some(id)) => {
            let store = SessionStore::open_read_only(&ctx.store);
            let path = store.session_path(id);
            if !path.exists() {
                bail!("session {id} not found in {}", ctx.store.display());
            }
            path
        }
        (None, None) => unreachable!("clap requires one of file or --session"),
    };
    let target = a
        .target
        .or_else(|| ctx.config.listen.clone())
        .unwrap_or_else(|| format!("127.0.0.1:{DEFAULT_PORT}"));
    let summary = replay(&path, target.as_str(), a.speed)?;
    emit(ctx.json, &summary, || format!("sent {} frames to {target} in {} ms\n", summary.frames_sent, summary.elapsed_ms))
}
