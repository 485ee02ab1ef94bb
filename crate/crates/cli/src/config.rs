use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tofbeam_core::{DetectorGeometry, ModeSpec};

/// Bad flag combination or missing argument; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A simulation run: beam, detector and sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeSpec,
    #[serde(default)]
    pub geometry: DetectorGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_events: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Events CSV written by `simulate` when `--out` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let value = serde_json::from_reader(BufReader::new(file)).map_err(tofbeam_core::Error::from)?;
    Ok(value)
}

/// Reads either a full run config or a bare beam description.
pub fn read_mode(path: &Path) -> anyhow::Result<ModeSpec> {
    let raw: serde_json::Value = read_json(path)?;
    let spec = if raw.get("mode").is_some() {
        serde_json::from_value::<RunConfig>(raw).map(|c| c.mode)
    } else {
        serde_json::from_value::<ModeSpec>(raw)
    };
    Ok(spec.map_err(tofbeam_core::Error::from)?)
}

/// Reads either a full run config or a bare detector geometry.
pub fn read_geometry(path: &Path) -> anyhow::Result<DetectorGeometry> {
    let raw: serde_json::Value = read_json(path)?;
    let geom = if raw.get("mode").is_some() {
        serde_json::from_value::<RunConfig>(raw).map(|c| c.geometry)
    } else {
        serde_json::from_value::<DetectorGeometry>(raw)
    };
    Ok(geom.map_err(tofbeam_core::Error::from)?)
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
