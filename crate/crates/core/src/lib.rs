//! Telemetry pipeline for a pressure-sensing biofeedback carrier: frame codec,
//! synthetic sessions, live ingest, per-session alignment, analytics, the
//! feedback gateway and the append-only session store.

pub mod analytics;
pub mod calibration;
pub mod channel;
pub mod frame;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod session;
pub mod simulator;
pub mod store;
pub mod timeline;

pub use calibration::{calibrate_pressure, CalibrationProfile};
pub use channel::{Channel, PerChannel};
pub use frame::{decode_frame, encode_frame, FrameError, SensorFrame};
pub use session::{ChannelSeries, Session};
pub use store::{SessionStore, StoreError};
pub use timeline::{align, AlignConfig, AlignedTimeline};
