use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use carrier_core::gateway::{DeviceInfo, GatewayConfig};
use carrier_core::ingest::SegmenterConfig;
use carrier_core::pipeline::AnalysisConfig;
use carrier_core::CalibrationProfile;
use serde::Deserialize;

/// Everything a `--config` file may set. Absent sections keep built-in
/// defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub listen: Option<String>,
    pub segmenter: SegmenterConfig,
    pub analysis: AnalysisConfig,
    pub gateway: Option<GatewayConfig>,
    pub devices: DeviceInfo,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn load_calibration(path: &Path) -> anyhow::Result<CalibrationProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading calibration {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing calibration {}", path.display()))
}

pub fn load_gateway(path: &Path) -> anyhow::Result<GatewayConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading gateway config {}", path.display()))?;
    let cfg: GatewayConfig = serde_json::from_str(&text).with_context(|| format!("parsing gateway config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}
