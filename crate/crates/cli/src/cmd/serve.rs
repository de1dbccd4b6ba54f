use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use carrier_core::ingest::{IngestServer, DEFAULT_PORT};
use carrier_core::SessionStore;
use log::info;

use crate::config::load_calibration;
use crate::output::emit;
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// HOST:PORT to listen on [default: 127.0.0.1:7071]
    #[arg(long)]
    listen: Option<String>,
    /// Calibrated pressure that counts as writing
    #[arg(long)]
    threshold_gf: Option<f64>,
    /// Seconds without writing before a session closes
    #[arg(long)]
    idle_timeout_s: Option<f64>,
    /// Calibration profile JSON for the pressure channel
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Shut down cleanly once this many sessions are stored
    #[arg(long)]
    stop_after_sessions: Option<u64>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<()> {
    let mut seg = ctx.config.segmenter.clone();
    if let Some(t) = a.threshold_gf {
        seg.pressure_threshold_gf = t;
    }
    if let Some(s) = a.idle_timeout_s {
        seg.idle_timeout_ms = (s * 1000.0).round() as i64;
    }
    if let Some(p) = &a.calibration {
        seg.calibration = load_calibration(p)?;
    }
    let listen = a
        .listen
        .or_else(|| ctx.config.listen.clone())
        .unwrap_or_else(|| format!("127.0.0.1:{DEFAULT_PORT}"));

    let store = SessionStore::open(&ctx.store).with_context(|| format!("opening store {}", ctx.store.display()))?;
    let server = IngestServer::bind(listen.as_str(), store, seg)?;
    let handle = server.spawn()?;
    // scripts read the bound address from this line when listening on port 0
    println!("listening on {}", handle.local_addr);

    let flag = handle.shutdown_flag();
    let on_signal = flag.clone();
    ctrlc::set_handler(move || on_signal.store(true, Ordering::SeqCst)).context("installing signal handler")?;

    if let Some(n) = a.stop_after_sessions {
        let stats = handle.stats.clone();
        let flag = flag.clone();
        thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                if stats.sessions_persisted.load(Ordering::SeqCst) >= n {
                    info!("stored {n} sessions; stopping");
                    flag.store(true, Ordering::SeqCst);
                }
                thread::sleep(Duration::from_millis(50));
            }
        });
    }

    let snap = handle.wait();
    emit(ctx.json, &snap, || {
        format!(
            "stopped: {} connections, {} lines ({} invalid), {} stale, {} duplicate, {} sessions stored\n",
            snap.connections, snap.lines, snap.invalid_lines, snap.stale_frames, snap.duplicate_frames, snap.sessions_persisted
        )
    })
}
