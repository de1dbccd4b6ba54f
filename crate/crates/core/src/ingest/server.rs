//! Line-oriented TCP ingest service.
//!
//! Each connection gets its own reader thread and one segmenter per device it
//! streams. Closed sessions go to a single writer thread that owns the store.
//! A device may be streamed by one connection at a time; a second connection
//! claiming a busy device is dropped.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, error, info, warn};
use serde::Serialize;
use serde_json::Value;

use super::segmenter::{ConfigError, FeedError, Segmenter, SegmenterConfig, SessionEvent};
use crate::frame::{decode_object, parse_object, FrameError, PROTOCOL_VERSION};
use crate::session::Session;
use crate::store::{SessionStore, StoreError};

pub const DEFAULT_PORT: u16 = 7071;
pub const DEFAULT_PARTICIPANT: &str = "anonymous";
const MAX_LINE_BYTES: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("failed to start worker thread: {0}")]
    Spawn(io::Error),
}

/// Live counters, shared with the caller through [`ServerHandle::stats`].
#[derive(Debug, Default)]
pub struct IngestStats {
    pub connections: AtomicU64,
    pub rejected_connections: AtomicU64,
    pub lines: AtomicU64,
    pub invalid_lines: AtomicU64,
    pub accepted_frames: AtomicU64,
    pub stale_frames: AtomicU64,
    pub duplicate_frames: AtomicU64,
    pub sessions_persisted: AtomicU64,
    pub frames_persisted: AtomicU64,
    pub store_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IngestSnapshot {
    pub connections: u64,
    pub rejected_connections: u64,
    pub lines: u64,
    pub invalid_lines: u64,
    pub accepted_frames: u64,
    pub stale_frames: u64,
    pub duplicate_frames: u64,
    pub sessions_persisted: u64,
    pub frames_persisted: u64,
    pub store_errors: u64,
}

impl IngestStats {
    pub fn snapshot(&self) -> IngestSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::SeqCst);
        IngestSnapshot {
            connections: g(&self.connections),
            rejected_connections: g(&self.rejected_connections),
            lines: g(&self.lines),
            invalid_lines: g(&self.invalid_lines),
            accepted_frames: g(&self.accepted_frames),
            stale_frames: g(&self.stale_frames),
            duplicate_frames: g(&self.duplicate_frames),
            sessions_persisted: g(&self.sessions_persisted),
            frames_persisted: g(&self.frames_persisted),
            store_errors: g(&self.store_errors),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::SeqCst);
}

struct Shared {
    config: SegmenterConfig,
    stats: Arc<IngestStats>,
    shutdown: Arc<AtomicBool>,
    claims: Mutex<HashSet<String>>,
}

pub struct IngestServer {
    listener: TcpListener,
    store: SessionStore,
    config: SegmenterConfig,
}

impl IngestServer {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Display, store: SessionStore, config: SegmenterConfig) -> Result<Self, ServeError> {
        config.validate()?;
        let listener = TcpListener::bind(&addr).map_err(|source| ServeError::BindFailure { addr: addr.to_string(), source })?;
        listener
            .set_nonblocking(true)
            .map_err(|source| ServeError::BindFailure { addr: addr.to_string(), source })?;
        Ok(IngestServer { listener, store, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Start the accept loop and the store writer in background threads.
    pub fn spawn(self) -> Result<ServerHandle, ServeError> {
        let local_addr = self.listener.local_addr().map_err(ServeError::Spawn)?;
        let stats = Arc::new(IngestStats::default());
        let shutdown = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            config: self.config,
            stats: stats.clone(),
            shutdown: shutdown.clone(),
            claims: Mutex::new(HashSet::new()),
        });
        let (tx, rx) = mpsc::channel::<Session>();

        let writer_stats = stats.clone();
        let store = self.store;
        let writer = thread::Builder::new()
            .name("ingest-writer".into())
            .spawn(move || write_sessions(store, rx, &writer_stats))
            .map_err(ServeError::Spawn)?;

        let listener = self.listener;
        let acceptor = thread::Builder::new()
            .name("ingest-accept".into())
            .spawn(move || accept_loop(listener, shared, tx))
            .map_err(ServeError::Spawn)?;

        info!("ingest listening on {local_addr}");
        Ok(ServerHandle { local_addr, stats, shutdown, acceptor: Some(acceptor), writer: Some(writer) })
    }
}

pub struct ServerHandle {
    pub local_addr: SocketAddr,
    pub stats: Arc<IngestStats>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Flag that stops the service when set; [`ServerHandle::shutdown`] sets it too.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Stop accepting, close every open session as ended, persist it and
    /// wait for the writer to drain.
    pub fn shutdown(mut self) -> IngestSnapshot {
        self.stop();
        self.stats.snapshot()
    }

    /// Block until the shutdown flag is set elsewhere, then stop.
    pub fn wait(mut self) -> IngestSnapshot {
        while !self.shutdown.load(Ordering::SeqCst) {
            thread::sleep(POLL);
        }
        self.stop();
        self.stats.snapshot()
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, tx: Sender<Session>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                bump(&shared.stats.connections);
                debug!("connection from {peer}");
                let shared = shared.clone();
                let tx = tx.clone();
                let spawned = thread::Builder::new()
                    .name(format!("ingest-{peer}"))
                    .spawn(move || Connection::new(&shared, tx, peer).run(stream));
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => error!("cannot start reader for {peer}: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn write_sessions(mut store: SessionStore, rx: Receiver<Session>, stats: &IngestStats) {
    for session in rx {
        match store.append_session(&session) {
            Ok(id) => {
                bump(&stats.sessions_persisted);
                stats.frames_persisted.fetch_add(session.frame_count() as u64, Ordering::SeqCst);
                info!("persisted session {id} ({} frames)", session.frame_count());
            }
            Err(StoreError::Conflict(id)) => {
                bump(&stats.store_errors);
                warn!("session {id} already stored; dropped");
            }
            Err(e) => {
                bump(&stats.store_errors);
                error!("failed to persist session {}: {e}", session.session_id);
            }
        }
    }
}

struct Connection<'a> {
    shared: &'a Shared,
    tx: Sender<Session>,
    peer: SocketAddr,
    participant: String,
    segmenters: HashMap<String, Segmenter>,
    first_line: bool,
}

enum LineOutcome {
    Continue,
    Reject,
}

impl<'a> Connection<'a> {
    fn new(shared: &'a Shared, tx: Sender<Session>, peer: SocketAddr) -> Self {
        Connection {
            shared,
            tx,
            peer,
            participant: DEFAULT_PARTICIPANT.to_string(),
            segmenters: HashMap::new(),
            first_line: true,
        }
    }

    fn run(mut self, stream: TcpStream) {
        if let Err(e) = self.read_loop(stream) {
            warn!("{}: connection ended with error: {e}", self.peer);
        }
        self.close();
    }

    fn read_loop(&mut self, stream: TcpStream) -> io::Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL))?;
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        loop {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                return Ok(());
            }
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => {
                    if !buf.is_empty() {
                        let line = std::mem::take(&mut buf);
                        self.handle_line(&line);
                    }
                    return Ok(());
                }
                Ok(_) => {
                    if buf.last() == Some(&b'\n') {
                        let line = std::mem::take(&mut buf);
                        if let LineOutcome::Reject = self.handle_line(&line) {
                            return Ok(());
                        }
                    }
                }
                // partial data stays in `buf` for the next read
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
                Err(e) => return Err(e),
            }
            if buf.len() > MAX_LINE_BYTES {
                bump(&self.shared.stats.invalid_lines);
                return Err(io::Error::new(ErrorKind::InvalidData, "line exceeds 64 KiB"));
            }
        }
    }

    fn handle_line(&mut self, line: &[u8]) -> LineOutcome {
        let stats = &self.shared.stats;
        bump(&stats.lines);
        let first = std::mem::replace(&mut self.first_line, false);
        let obj = match parse_object(line) {
            Ok(obj) => obj,
            Err(e) => return self.invalid(e),
        };
        if let Some(hello) = obj.get("hello") {
            if !first {
                return self.invalid(FrameError::MalformedLine("hello after the first line".into()));
            }
            return match parse_hello(&obj, hello) {
                Ok(p) => {
                    debug!("{}: participant {p}", self.peer);
                    self.participant = p;
                    LineOutcome::Continue
                }
                Err(e) => self.invalid(e),
            };
        }
        let frame = match decode_object(&obj) {
            Ok(f) => f,
            Err(e) => return self.invalid(e),
        };

        if !self.segmenters.contains_key(&frame.device_id) {
            let claimed = self.shared.claims.lock().unwrap_or_else(|p| p.into_inner()).insert(frame.device_id.clone());
            if !claimed {
                bump(&stats.rejected_connections);
                warn!("{}: device {} is already streaming on another connection; closing", self.peer, frame.device_id);
                return LineOutcome::Reject;
            }
            let seg = Segmenter::new(frame.device_id.clone(), self.participant.clone(), self.shared.config.clone());
            self.segmenters.insert(frame.device_id.clone(), seg);
        }
        let seg = self.segmenters.get_mut(&frame.device_id).expect("segmenter inserted above");
        match seg.feed(&frame) {
            Ok(events) => {
                bump(&stats.accepted_frames);
                self.dispatch(events);
            }
            Err(FeedError::StaleFrame { ts, newest }) => {
                bump(&stats.stale_frames);
                debug!("{}: stale frame ts={ts} newest={newest}", self.peer);
            }
            Err(FeedError::DuplicateFrame { channel, ts }) => {
                bump(&stats.duplicate_frames);
                debug!("{}: duplicate {channel} frame at {ts}", self.peer);
            }
            Err(e @ FeedError::WrongDevice { .. }) => {
                bump(&stats.invalid_lines);
                error!("{}: {e}", self.peer);
            }
        }
        LineOutcome::Continue
    }

    fn invalid(&self, e: FrameError) -> LineOutcome {
        bump(&self.shared.stats.invalid_lines);
        debug!("{}: invalid line: {e}", self.peer);
        LineOutcome::Continue
    }

    fn dispatch(&self, events: Vec<SessionEvent>) {
        for ev in events {
            match ev {
                SessionEvent::Opened { device_id, start_ts_ms } => info!("session opened on {device_id} at {start_ts_ms}"),
                SessionEvent::Closed(s) => {
                    info!("session {} closed ({} ms)", s.session_id, s.duration_ms());
                    if self.tx.send(s).is_err() {
                        error!("store writer is gone; session dropped");
                    }
                }
            }
        }
    }

    /// Stream end: flush every segmenter and release the device claims.
    fn close(&mut self) {
        let segmenters = std::mem::take(&mut self.segmenters);
        let mut claims = self.shared.claims.lock().unwrap_or_else(|p| p.into_inner());
        for (device, mut seg) in segmenters {
            self.dispatch(seg.finish());
            claims.remove(&device);
        }
    }
}

fn parse_hello(obj: &serde_json::Map<String, Value>, hello: &Value) -> Result<String, FrameError> {
    match obj.get("v").and_then(Value::as_i64) {
        Some(v) if v == i64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(FrameError::UnsupportedVersion(v)),
        None => return Err(FrameError::MalformedLine("hello without `v`".into())),
    }
    let p = hello
        .get("participant")
        .and_then(Value::as_str)
        .ok_or_else(|| FrameError::MalformedLine("hello without participant".into()))?;
    if p.is_empty() || p.chars().count() > 64 {
        return Err(FrameError::RangeViolation { field: "participant", detail: "must be 1..=64 characters".into() });
    }
    Ok(p.to_string())
}

/// The hello line a client sends first to name its participant.
pub fn hello_line(participant: &str) -> String {
    let mut s = serde_json::json!({"v": PROTOCOL_VERSION, "hello": {"participant": participant}}).to_string();
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Channel;
    use crate::frame::{encode_frame, SensorFrame};
    use crate::store::SessionFilter;
    use std::io::Write;

    fn pressure(device: &str, ts: i64, counts: f64) -> String {
        encode_frame(&SensorFrame::new(device, Channel::PressureRaw, ts, counts)).unwrap()
    }

    // 20 s of writing at 12600 counts (10 gf) followed by silence
    fn writing(device: &str, t0: i64) -> Vec<String> {
        (0..200).map(|i| pressure(device, t0 + i * 100, 12_600.0)).collect()
    }

    fn start(dir: &std::path::Path) -> ServerHandle {
        let store = SessionStore::open(dir).unwrap();
        IngestServer::bind("127.0.0.1:0", store, SegmenterConfig::default()).unwrap().spawn().unwrap()
    }

    #[test]
    fn one_connection_one_session() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut c = TcpStream::connect(h.local_addr).unwrap();
        c.write_all(hello_line("p-07").as_bytes()).unwrap();
        for l in writing("carrier-01", 1_000) {
            c.write_all(l.as_bytes()).unwrap();
        }
        drop(c);
        while h.stats.sessions_persisted.load(Ordering::SeqCst) == 0 {
            thread::sleep(Duration::from_millis(10));
        }
        let snap = h.shutdown();
        assert_eq!(snap.frames_persisted, 200);
        let store = SessionStore::open_read_only(dir.path());
        let entries = store.list_entries(&SessionFilter::default()).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].participant_id, "p-07");
    }

    #[test]
    fn garbage_only_counts_every_line() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut c = TcpStream::connect(h.local_addr).unwrap();
        c.write_all(b"hello\n{not json\n[1,2]\n{\"v\":2}\n").unwrap();
        drop(c);
        while h.stats.lines.load(Ordering::SeqCst) < 4 {
            thread::sleep(Duration::from_millis(10));
        }
        let snap = h.shutdown();
        assert_eq!(snap.invalid_lines, 4);
        assert_eq!(snap.sessions_persisted, 0);
    }

    #[test]
    fn split_writes_are_reassembled() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut c = TcpStream::connect(h.local_addr).unwrap();
        let all: String = writing("carrier-01", 0).concat();
        for chunk in all.as_bytes().chunks(37) {
            c.write_all(chunk).unwrap();
            c.flush().unwrap();
        }
        drop(c);
        while h.stats.sessions_persisted.load(Ordering::SeqCst) == 0 {
            thread::sleep(Duration::from_millis(10));
        }
        let snap = h.shutdown();
        assert_eq!(snap.invalid_lines, 0);
        assert_eq!(snap.frames_persisted, 200);
    }

    #[test]
    fn two_devices_stay_separate() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut a = TcpStream::connect(h.local_addr).unwrap();
        let mut b = TcpStream::connect(h.local_addr).unwrap();
        for (la, lb) in writing("dev-a", 0).iter().zip(writing("dev-b", 50)) {
            a.write_all(la.as_bytes()).unwrap();
            b.write_all(lb.as_bytes()).unwrap();
        }
        drop(a);
        drop(b);
        while h.stats.sessions_persisted.load(Ordering::SeqCst) < 2 {
            thread::sleep(Duration::from_millis(10));
        }
        h.shutdown();
        let store = SessionStore::open_read_only(dir.path());
        let mut devices: Vec<_> = store
            .list_entries(&SessionFilter::default())
            .unwrap()
            .into_iter()
            .map(|e| (e.device_id, e.frames))
            .collect();
        devices.sort();
        assert_eq!(devices, vec![("dev-a".to_string(), 200), ("dev-b".to_string(), 200)]);
    }

    #[test]
    fn second_claim_on_a_device_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut a = TcpStream::connect(h.local_addr).unwrap();
        a.write_all(pressure("dev-a", 0, 12_600.0).as_bytes()).unwrap();
        while h.stats.accepted_frames.load(Ordering::SeqCst) == 0 {
            thread::sleep(Duration::from_millis(10));
        }
        let mut b = TcpStream::connect(h.local_addr).unwrap();
        b.write_all(pressure("dev-a", 100, 12_600.0).as_bytes()).unwrap();
        while h.stats.rejected_connections.load(Ordering::SeqCst) == 0 {
            thread::sleep(Duration::from_millis(10));
        }
        drop(a);
        let snap = h.shutdown();
        assert_eq!(snap.accepted_frames, 1);
    }

    #[test]
    fn shutdown_flushes_open_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let h = start(dir.path());
        let mut c = TcpStream::connect(h.local_addr).unwrap();
        for l in writing("carrier-01", 0) {
            c.write_all(l.as_bytes()).unwrap();
        }
        while h.stats.accepted_frames.load(Ordering::SeqCst) < 200 {
            thread::sleep(Duration::from_millis(10));
        }
        let snap = h.shutdown();
        assert_eq!(snap.sessions_persisted, 1);
        drop(c);
    }

    #[test]
    fn bind_failure_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let taken = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = taken.local_addr().unwrap().to_string();
        let store = SessionStore::open(dir.path()).unwrap();
        assert!(matches!(
            IngestServer::bind(addr.as_str(), store, SegmenterConfig::default()),
            Err(ServeError::BindFailure { .. })
        ));
    }
}
