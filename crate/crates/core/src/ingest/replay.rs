//! Stream a recorded file back into an ingest endpoint.
//!
//! Accepts either a plain frame-line file or a store session file (whose
//! participant is announced with a hello line). Frames go out in file order;
//! the pause before each frame is its timestamp advance over the previous one
//! divided by the speed factor. Backward steps cost no time, so an
//! out-of-order frame in the file reaches the server as it was recorded.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::server::hello_line;
use crate::frame::{decode_frame, encode_frame, FrameError, SensorFrame};
use crate::store::read_session_file;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    Factor(f64),
    Max,
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speed::Factor(x) => write!(f, "{x}x"),
            Speed::Max => f.write_str("max"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid speed `{0}`: expected a positive factor such as 1, 2.5x or `max`")]
pub struct BadSpeed(pub String);

impl FromStr for Speed {
    type Err = BadSpeed;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("max") {
            return Ok(Speed::Max);
        }
        let num = t.strip_suffix(['x', 'X']).unwrap_or(t);
        match num.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => Ok(Speed::Factor(x)),
            _ => Err(BadSpeed(s.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{path}:{line}: {source}")]
    MalformedFile { path: PathBuf, line: usize, source: FrameError },
    #[error("{path}: {reason}")]
    UnreadableSessionFile { path: PathBuf, reason: String },
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// What a file holds once parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub participant: Option<String>,
    pub frames: Vec<SensorFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ReplaySummary {
    pub frames_sent: usize,
    pub elapsed_ms: u64,
}

pub fn read_recording(path: &Path) -> Result<Recording, ReplayError> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_store_file = first
        .and_then(|l| serde_json::from_str::<Value>(l).ok())
        .is_some_and(|v| v.get("type").and_then(Value::as_str) == Some("session_header"));
    if is_store_file {
        let s = read_session_file(path)
            .map_err(|e| ReplayError::UnreadableSessionFile { path: path.to_path_buf(), reason: e.to_string() })?;
        return Ok(Recording { participant: Some(s.participant_id.clone()), frames: s.frames() });
    }
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = decode_frame(line.as_bytes())
            .map_err(|source| ReplayError::MalformedFile { path: path.to_path_buf(), line: i + 1, source })?;
        frames.push(f);
    }
    Ok(Recording { participant: None, frames })
}

pub fn replay(path: &Path, addr: impl ToSocketAddrs + fmt::Display, speed: Speed) -> Result<ReplaySummary, ReplayError> {
    let rec = read_recording(path)?;
    replay_frames(&rec, addr, speed)
}

pub fn replay_frames(rec: &Recording, addr: impl ToSocketAddrs + fmt::Display, speed: Speed) -> Result<ReplaySummary, ReplayError> {
    if rec.frames.is_empty() {
        return Ok(ReplaySummary { frames_sent: 0, elapsed_ms: 0 });
    }
    let stream = TcpStream::connect(&addr).map_err(|e| match e.kind() {
        ErrorKind::ConnectionRefused => ReplayError::ConnectionRefused(addr.to_string()),
        _ => ReplayError::Io(e),
    })?;
    stream.set_nodelay(true)?;
    let mut out = BufWriter::new(stream);
    if let Some(p) = &rec.participant {
        out.write_all(hello_line(p).as_bytes())?;
    }

    let began = Instant::now();
    // Recording time elapsed so far, in ms, counting only forward steps.
    let mut offset_ms: i64 = 0;
    let mut prev_ts = rec.frames[0].timestamp_ms;
    for f in &rec.frames {
        offset_ms += (f.timestamp_ms - prev_ts).max(0);
        prev_ts = f.timestamp_ms;
        if let Speed::Factor(x) = speed {
            let target = Duration::from_secs_f64(offset_ms as f64 / 1000.0 / x);
            let now = began.elapsed();
            if target > now {
                out.flush()?;
                thread::sleep(target - now);
            }
        }
        let line = encode_frame(f).map_err(|e| io::Error::new(ErrorKind::InvalidData, e))?;
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    let stream = out.into_inner().map_err(|e| e.into_error())?;
    stream.shutdown(std::net::Shutdown::Write)?;
    Ok(ReplaySummary { frames_sent: rec.frames.len(), elapsed_ms: began.elapsed().as_millis() as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Channel;
    use crate::ingest::server::IngestServer;
    use crate::ingest::SegmenterConfig;
    use crate::store::{SessionFilter, SessionStore};
    use std::sync::atomic::Ordering;

    #[test]
    fn speed_parsing() {
        assert_eq!("max".parse(), Ok(Speed::Max));
        assert_eq!("1".parse(), Ok(Speed::Factor(1.0)));
        assert_eq!("2.5x".parse(), Ok(Speed::Factor(2.5)));
        assert!("0".parse::<Speed>().is_err());
        assert!("fast".parse::<Speed>().is_err());
    }

    #[test]
    fn empty_file_sends_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        fs::write(&p, "").unwrap();
        // nothing listens on this port; an attempt to connect would fail
        let s = replay(&p, "127.0.0.1:1", Speed::Max).unwrap();
        assert_eq!(s.frames_sent, 0);
    }

    #[test]
    fn malformed_file_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = encode_frame(&SensorFrame::new("d", Channel::HeartRate, 0, 70.0)).unwrap();
        fs::write(&p, format!("{good}not a frame\n")).unwrap();
        assert!(matches!(replay(&p, "127.0.0.1:1", Speed::Max), Err(ReplayError::MalformedFile { line: 2, .. })));
    }

    #[test]
    fn refused_connection_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.jsonl");
        fs::write(&p, encode_frame(&SensorFrame::new("d", Channel::HeartRate, 0, 70.0)).unwrap()).unwrap();
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        assert!(matches!(replay(&p, format!("127.0.0.1:{port}"), Speed::Max), Err(ReplayError::ConnectionRefused(_))));
    }

    #[test]
    fn stale_frame_is_dropped_rest_intact() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = String::new();
        for i in 0..100 {
            lines += &encode_frame(&SensorFrame::new("d", Channel::PressureRaw, i * 100, 12_600.0)).unwrap();
            if i == 60 {
                // 5 s behind the newest frame, beyond the 2 s reorder window
                lines += &encode_frame(&SensorFrame::new("d", Channel::AudioRms, 1_000, 0.5)).unwrap();
            }
        }
        let p = dir.path().join("stale.jsonl");
        fs::write(&p, lines).unwrap();

        let store = SessionStore::open(dir.path().join("store")).unwrap();
        let h = IngestServer::bind("127.0.0.1:0", store, SegmenterConfig::default()).unwrap().spawn().unwrap();
        assert_eq!(replay(&p, h.local_addr, Speed::Max).unwrap().frames_sent, 101);
        while h.stats.sessions_persisted.load(Ordering::SeqCst) == 0 {
            thread::sleep(Duration::from_millis(10));
        }
        let snap = h.shutdown();
        assert_eq!(snap.stale_frames, 1);
        let store = SessionStore::open_read_only(dir.path().join("store"));
        assert_eq!(store.list_entries(&SessionFilter::default()).unwrap()[0].frames, 100);
    }

    #[test]
    fn paced_replay_takes_recording_time() {
        let dir = tempfile::tempdir().unwrap();
        let lines: String = (0..5)
            .map(|i| encode_frame(&SensorFrame::new("d", Channel::HeartRate, i * 100, 70.0)).unwrap())
            .collect();
        let p = dir.path().join("paced.jsonl");
        fs::write(&p, lines).unwrap();
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let sink = thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut v = Vec::new();
            io::Read::read_to_end(&mut s, &mut v).unwrap();
            v
        });
        let s = replay(&p, addr, Speed::Factor(2.0)).unwrap();
        assert!(s.elapsed_ms >= 200, "400 ms of recording at 2x took {} ms", s.elapsed_ms);
        assert_eq!(sink.join().unwrap().iter().filter(|b| **b == b'\n').count(), 5);
    }
}
