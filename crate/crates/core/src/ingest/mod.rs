//! Live ingest: session segmentation, the TCP server and file replay.

pub mod replay;
pub mod segmenter;
pub mod server;

pub use replay::{read_recording, replay, replay_frames, Recording, ReplayError, ReplaySummary, Speed};
pub use segmenter::{feed_frame, session_id, FeedError, Segmenter, SegmenterConfig, SegmenterStats, SessionEvent};
pub use server::{hello_line, IngestServer, IngestSnapshot, IngestStats, ServeError, ServerHandle, DEFAULT_PARTICIPANT, DEFAULT_PORT};
