//! On-disk session store.
//!
//! ```text
//! <root>/
//!   store.lock                 single-writer lock
//!   index.jsonl                one entry per closed session
//!   sessions/<id>.jsonl        header record, wire frames, end record
//!   reports/<id>.json          feedback reports
//! ```
//!
//! Session files appear atomically (temp file, fsync, rename) and are indexed
//! only after the rename is durable. Opening a store for writing clears any
//! leftover temp file and reconciles the index with the session files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::channel::PerChannel;
use crate::frame::{decode_object, encode_frame, parse_object};
use crate::session::{ChannelSeries, Session, SessionError};

const SESSIONS_DIR: &str = "sessions";
const REPORTS_DIR: &str = "reports";
const INDEX_FILE: &str = "index.jsonl";
const LOCK_FILE: &str = "store.lock";
const TMP_SUFFIX: &str = ".tmp";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage full: {0}")]
    StorageFull(io::Error),
    #[error("session `{0}` already exists")]
    Conflict(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("corrupt session file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store opened read-only")]
    ReadOnly,
    #[error("invalid session: {0}")]
    InvalidSession(#[from] SessionError),
    #[error("I/O error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::StorageFull | io::ErrorKind::QuotaExceeded => StoreError::StorageFull(e),
            _ => StoreError::Io(e),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub participant_id: String,
    pub device_id: String,
    pub start_ts_ms: i64,
    pub end_ts_ms: i64,
    pub frames: usize,
}

impl IndexEntry {
    fn of(s: &Session) -> Self {
        IndexEntry {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            device_id: s.device_id.clone(),
            start_ts_ms: s.start_ts_ms,
            end_ts_ms: s.end_ts_ms,
            frames: s.frame_count(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderBody {
    session_id: String,
    participant_id: String,
    device_id: String,
    start_ts_ms: i64,
    end_ts_ms: i64,
}

#[derive(Serialize)]
struct HeaderRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    v: u32,
    session: &'a HeaderBody,
}

#[derive(Serialize)]
struct EndRecord {
    #[serde(rename = "type")]
    kind: &'static str,
    frames: usize,
}

/// Conjunctive filter for [`SessionStore::list_sessions`]; start times are
/// matched inclusively.
#[derive(Debug, Clone, Default)]
pub struct SessionFilter {
    pub participant: Option<String>,
    pub start_from_ms: Option<i64>,
    pub start_to_ms: Option<i64>,
}

impl SessionFilter {
    fn matches(&self, e: &IndexEntry) -> bool {
        self.participant.as_ref().is_none_or(|p| *p == e.participant_id)
            && self.start_from_ms.is_none_or(|t| e.start_ts_ms >= t)
            && self.start_to_ms.is_none_or(|t| e.start_ts_ms <= t)
    }
}

/// Where [`SessionStore::append_session_interrupted`] stops.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterTempWrite,
    AfterRename,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub temp_files_removed: usize,
    pub reindexed: Vec<String>,
    pub dropped_from_index: Vec<String>,
    pub quarantined: Vec<PathBuf>,
}

pub struct SessionStore {
    root: PathBuf,
    lock: Option<File>,
}

impl SessionStore {
    /// Open (creating if needed) for writing. Fails with `Locked` when another
    /// writer holds the store.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(SESSIONS_DIR))?;
        fs::create_dir_all(root.join(REPORTS_DIR))?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let store = SessionStore { root, lock: Some(lock) };
        let recovery = store.recover()?;
        if recovery != Recovery::default() {
            warn!("store recovery at {}: {recovery:?}", store.root.display());
        }
        Ok(store)
    }

    /// Open for reading only. Never takes the lock and never modifies files;
    /// a missing directory reads as an empty store.
    pub fn open_read_only(root: impl AsRef<Path>) -> Self {
        SessionStore { root: root.as_ref().to_path_buf(), lock: None }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.root.join(SESSIONS_DIR).join(format!("{id}.jsonl"))
    }

    pub fn report_path(&self, id: &str) -> PathBuf {
        self.root.join(REPORTS_DIR).join(format!("{id}.json"))
    }

    fn check_writable(&self) -> Result<()> {
        if self.lock.is_none() {
            return Err(StoreError::ReadOnly);
        }
        Ok(())
    }

    pub fn append_session(&mut self, session: &Session) -> Result<String> {
        self.append_inner(session, None)
    }

    #[doc(hidden)]
    pub fn append_session_interrupted(&mut self, session: &Session, crash: CrashPoint) -> Result<String> {
        self.append_inner(session, Some(crash))
    }

    fn append_inner(&mut self, session: &Session, crash: Option<CrashPoint>) -> Result<String> {
        self.check_writable()?;
        session.validate()?;
        let id = &session.session_id;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(StoreError::Io(io::Error::new(io::ErrorKind::InvalidInput, format!("bad session id `{id}`"))));
        }
        let path = self.session_path(id);
        if path.exists() || self.index()?.iter().any(|e| e.session_id == *id) {
            return Err(StoreError::Conflict(id.clone()));
        }

        let tmp = tmp_path(&path);
        write_session_file(&tmp, session)?;
        if crash == Some(CrashPoint::AfterTempWrite) {
            return Ok(id.clone());
        }
        fs::rename(&tmp, &path)?;
        sync_dir(&self.root.join(SESSIONS_DIR))?;
        if crash == Some(CrashPoint::AfterRename) {
            return Ok(id.clone());
        }
        self.append_index(&IndexEntry::of(session))?;
        debug!("stored session {id} ({} frames)", session.frame_count());
        Ok(id.clone())
    }

    fn append_index(&self, entry: &IndexEntry) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(INDEX_FILE))?;
        let mut line = serde_json::to_string(entry).expect("index entry serializes");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    /// Index entries in file order, first occurrence of each id. A torn final
    /// line is skipped.
    pub fn index(&self) -> Result<Vec<IndexEntry>> {
        let file = match File::open(self.root.join(INDEX_FILE)) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<IndexEntry>(&line) {
                Ok(e) if seen.insert(e.session_id.clone()) => out.push(e),
                Ok(_) => {}
                Err(err) => warn!("skipping unreadable index line: {err}"),
            }
        }
        Ok(out)
    }

    pub fn load_session(&self, id: &str) -> Result<Session> {
        let path = self.session_path(id);
        if !path.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_session_file(&path)
    }

    /// Ids ordered by session start (ties by id).
    pub fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<String>> {
        Ok(self.list_entries(filter)?.into_iter().map(|e| e.session_id).collect())
    }

    pub fn list_entries(&self, filter: &SessionFilter) -> Result<Vec<IndexEntry>> {
        let mut entries: Vec<_> = self.index()?.into_iter().filter(|e| filter.matches(e)).collect();
        entries.sort_by(|a, b| (a.start_ts_ms, &a.session_id).cmp(&(b.start_ts_ms, &b.session_id)));
        Ok(entries)
    }

    pub fn put_report<T: Serialize>(&mut self, id: &str, report: &T) -> Result<PathBuf> {
        self.check_writable()?;
        let path = self.report_path(id);
        let tmp = tmp_path(&path);
        let mut body = serde_json::to_vec_pretty(report).expect("report serializes");
        body.push(b'\n');
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load_report<T: DeserializeOwned>(&self, id: &str) -> Result<T> {
        let path = self.report_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::CorruptFile { path, reason: e.to_string() })
    }

    /// Remove temp files and make the index agree with the complete session
    /// files on disk. Unreadable session files are renamed to `*.corrupt`.
    pub fn recover(&self) -> Result<Recovery> {
        self.check_writable()?;
        let mut rec = Recovery::default();
        let dir = self.root.join(SESSIONS_DIR);
        let mut on_disk = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if name.ends_with(TMP_SUFFIX) {
                fs::remove_file(&path)?;
                rec.temp_files_removed += 1;
            } else if let Some(id) = name.strip_suffix(".jsonl") {
                on_disk.insert(id.to_string(), path);
            }
        }

        let indexed = self.index()?;
        let indexed_ids: BTreeSet<_> = indexed.iter().map(|e| e.session_id.clone()).collect();
        let mut keep: Vec<IndexEntry> = Vec::new();
        for e in indexed {
            if on_disk.contains_key(&e.session_id) {
                keep.push(e);
            } else {
                rec.dropped_from_index.push(e.session_id);
            }
        }
        for (id, path) in &on_disk {
            if indexed_ids.contains(id) {
                continue;
            }
            match read_session_file(path) {
                Ok(s) if s.session_id == *id => {
                    keep.push(IndexEntry::of(&s));
                    rec.reindexed.push(id.clone());
                }
                _ => {
                    let aside = path.with_extension("jsonl.corrupt");
                    fs::rename(path, &aside)?;
                    rec.quarantined.push(aside);
                }
            }
        }

        let index_path = self.root.join(INDEX_FILE);
        let needs_rewrite = !rec.dropped_from_index.is_empty()
            || !rec.reindexed.is_empty()
            || index_has_garbage(&index_path)?;
        if needs_rewrite {
            let tmp = tmp_path(&index_path);
            {
                let mut w = BufWriter::new(File::create(&tmp)?);
                for e in &keep {
                    serde_json::to_writer(&mut w, e).expect("index entry serializes");
                    w.write_all(b"\n")?;
                }
                w.flush()?;
                w.get_ref().sync_all()?;
            }
            fs::rename(&tmp, &index_path)?;
            sync_dir(&self.root)?;
        }
        Ok(rec)
    }
}

fn index_has_garbage(path: &Path) -> Result<bool> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    let mut seen = BTreeSet::new();
    Ok(text.lines().filter(|l| !l.trim().is_empty()).any(|l| match serde_json::from_str::<IndexEntry>(l) {
        Ok(e) => !seen.insert(e.session_id),
        Err(_) => true,
    }))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(TMP_SUFFIX);
    path.with_file_name(name)
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn write_session_file(path: &Path, session: &Session) -> Result<()> {
    let header = HeaderBody {
        session_id: session.session_id.clone(),
        participant_id: session.participant_id.clone(),
        device_id: session.device_id.clone(),
        start_ts_ms: session.start_ts_ms,
        end_ts_ms: session.end_ts_ms,
    };
    let frames = session.frames();
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &HeaderRecord { kind: "session_header", v: 1, session: &header })
        .expect("header serializes");
    w.write_all(b"\n")?;
    for f in &frames {
        let line = encode_frame(f).map_err(|e| StoreError::Io(io::Error::new(io::ErrorKind::InvalidData, e.to_string())))?;
        w.write_all(line.as_bytes())?;
    }
    serde_json::to_writer(&mut w, &EndRecord { kind: "session_end", frames: frames.len() }).expect("end serializes");
    w.write_all(b"\n")?;
    w.flush()?;
    w.get_ref().sync_all()?;
    Ok(())
}

/// Parse a session file. Also used by replay, which accepts store files.
pub fn read_session_file(path: &Path) -> Result<Session> {
    let corrupt = |reason: String| StoreError::CorruptFile { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());

    let header_line = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    let header: Value = serde_json::from_str(header_line).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.get("type").and_then(Value::as_str) != Some("session_header") {
        return Err(corrupt("missing header record".into()));
    }
    if header.get("v").and_then(Value::as_i64) != Some(1) {
        return Err(corrupt("unsupported header version".into()));
    }
    let body: HeaderBody = serde_json::from_value(header.get("session").cloned().unwrap_or(Value::Null))
        .map_err(|e| corrupt(format!("header body: {e}")))?;

    let mut channels: PerChannel<ChannelSeries> = PerChannel::from_fn(ChannelSeries::empty);
    let mut frames = 0usize;
    let mut end_count = None;
    for line in lines {
        if end_count.is_some() {
            return Err(corrupt("records after end record".into()));
        }
        let obj = parse_object(line.as_bytes()).map_err(|e| corrupt(e.to_string()))?;
        match obj.get("type").and_then(Value::as_str) {
            Some("session_end") => {
                let n = obj.get("frames").and_then(Value::as_u64).ok_or_else(|| corrupt("bad end record".into()))?;
                end_count = Some(n as usize);
            }
            Some(other) => return Err(corrupt(format!("unexpected record type `{other}`"))),
            None => {
                let f = decode_object(&obj).map_err(|e| corrupt(e.to_string()))?;
                if f.device_id != body.device_id {
                    return Err(corrupt(format!("frame from device `{}`", f.device_id)));
                }
                let series = channels.get_mut(f.channel);
                if series.timestamps_ms.last().is_some_and(|t| *t >= f.timestamp_ms) {
                    return Err(corrupt(format!("{} frames out of order at {}", f.channel, f.timestamp_ms)));
                }
                series.push(f.timestamp_ms, f.value);
                frames += 1;
            }
        }
    }
    match end_count {
        None => return Err(corrupt("missing end record".into())),
        Some(n) if n != frames => return Err(corrupt(format!("end record says {n} frames, found {frames}"))),
        Some(_) => {}
    }
    let session = Session {
        session_id: body.session_id,
        participant_id: body.participant_id,
        device_id: body.device_id,
        start_ts_ms: body.start_ts_ms,
        end_ts_ms: body.end_ts_ms,
        channels,
    };
    session.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(session)
}

impl Drop for SessionStore {
    fn drop(&mut self) {
        if let Some(lock) = &self.lock {
            let _ = lock.unlock();
        }
    }
}
