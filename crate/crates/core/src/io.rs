//! Persistence: raw little-endian `f64` fields with JSON sidecars, run
//! manifests with content hashes, and trajectory checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::state::{ControlSeries, Trajectory};
use crate::weighted::{Field, Grid};

pub const FIELD_FORMAT: &str = "f64le";

/// Describes the binary payload next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub format: String,
    pub dim: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub n: usize,
    /// Number of consecutive grid-sized frames in the payload.
    #[serde(default = "one")]
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Log-time of a single-frame field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

fn one() -> usize {
    1
}

impl FieldSidecar {
    pub fn for_grid(grid: &Grid, frames: usize) -> Self {
        Self {
            format: FIELD_FORMAT.into(),
            dim: grid.dim(),
            radius: grid.radius(),
            n: grid.points_per_axis(),
            frames,
            name: None,
            s: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Self =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
        sc.grid()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates the sidecar and rebuilds its grid.
    pub fn grid(&self) -> Result<Grid> {
        if self.format != FIELD_FORMAT {
            return Err(Error::Format(format!(
                "unsupported field format {:?}",
                self.format
            )));
        }
        if self.frames == 0 {
            return Err(Error::Format("sidecar declares zero frames".into()));
        }
        if let Some(s) = self.s {
            if !s.is_finite() {
                return Err(Error::Format("sidecar time is not finite".into()));
            }
        }
        Grid::new(self.dim, self.radius, self.n)
            .map_err(|e| Error::Format(format!("sidecar grid: {e}")))
    }

    /// Expected payload size in bytes.
    pub fn byte_len(&self) -> Result<usize> {
        let len = self.grid()?.len();
        len.checked_mul(self.frames)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("sidecar size overflows".into()))
    }
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes a payload against its sidecar; all values must be finite.
pub fn decode_values(bytes: &[u8], sidecar: &FieldSidecar) -> Result<Vec<f64>> {
    let expected = sidecar.byte_len()?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, sidecar implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("value {j} is not finite")));
    }
    Ok(values)
}

pub fn encode_field(field: &Field) -> (Vec<u8>, FieldSidecar) {
    (
        encode_values(field.values()),
        FieldSidecar::for_grid(field.grid(), 1),
    )
}

pub fn decode_field(bytes: &[u8], sidecar: &FieldSidecar) -> Result<Field> {
    if sidecar.frames != 1 {
        return Err(Error::Format(format!(
            "expected one frame, sidecar declares {}",
            sidecar.frames
        )));
    }
    Field::from_values(sidecar.grid()?, decode_values(bytes, sidecar)?)
}

pub fn encode_series(series: &ControlSeries) -> (Vec<u8>, FieldSidecar) {
    (
        encode_values(series.values()),
        FieldSidecar::for_grid(series.grid(), series.steps()),
    )
}

pub fn decode_series(bytes: &[u8], sidecar: &FieldSidecar) -> Result<ControlSeries> {
    ControlSeries::from_values(
        sidecar.grid()?,
        sidecar.frames,
        decode_values(bytes, sidecar)?,
    )
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `<dir>/<stem>.bin` and `<dir>/<stem>.json`; returns the binary path.
pub fn write_field(dir: &Path, stem: &str, field: &Field, s: Option<f64>) -> Result<PathBuf> {
    let (bytes, mut sc) = encode_field(field);
    sc.name = Some(stem.to_string());
    sc.s = s;
    write_payload(dir, stem, &bytes, &sc)
}

pub fn write_series(dir: &Path, stem: &str, series: &ControlSeries) -> Result<PathBuf> {
    let (bytes, mut sc) = encode_series(series);
    sc.name = Some(stem.to_string());
    write_payload(dir, stem, &bytes, &sc)
}

fn write_payload(dir: &Path, stem: &str, bytes: &[u8], sc: &FieldSidecar) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes)?;
    fs::write(sidecar_path(&bin), sc.to_json()?)?;
    Ok(bin)
}

/// Reads a field from its binary path and the sidecar beside it.
pub fn read_field(bin: &Path) -> Result<Field> {
    let sc = FieldSidecar::from_json(&fs::read_to_string(sidecar_path(bin))?)?;
    decode_field(&fs::read(bin)?, &sc)
}

pub fn read_series(bin: &Path) -> Result<ControlSeries> {
    let sc = FieldSidecar::from_json(&fs::read_to_string(sidecar_path(bin))?)?;
    decode_series(&fs::read(bin)?, &sc)
}

/// Writes every state of a trajectory as `state_0000.bin`, ... under `dir`.
pub fn write_checkpoints(dir: &Path, trajectory: &Trajectory) -> Result<Vec<PathBuf>> {
    trajectory
        .states
        .iter()
        .enumerate()
        .map(|(k, v)| {
            write_field(
                dir,
                &format!("state_{k:04}"),
                v,
                Some(trajectory.time.time(k)),
            )
        })
        .collect()
}

/// Reads checkpoints written by [`write_checkpoints`], in step order.
pub fn read_checkpoints(dir: &Path) -> Result<Vec<Field>> {
    let mut bins: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "bin")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("state_"))
        })
        .collect();
    bins.sort();
    bins.iter().map(|b| read_field(b)).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Content hash in the style of a git blob: the digest of `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub dim: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeParams {
    /// `S = log(1 + T)`.
    pub horizon: f64,
    pub steps: usize,
    pub theta: f64,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: String,
    pub grid: GridParams,
    pub time: TimeParams,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: u64,
    /// Content hash over the normalized scenario and command line.
    pub input_hash: String,
    /// Wall time in seconds; absent in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    pub versions: BTreeMap<String, String>,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
    pub deterministic: bool,
}

impl RunManifest {
    pub fn new(
        command: &str,
        scenario_json: &str,
        grid: &Grid,
        time: &crate::state::TimeGrid,
        seed: u64,
    ) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        let mut input = scenario_json.as_bytes().to_vec();
        input.extend_from_slice(format!("\n{command}\n{seed}").as_bytes());
        Self {
            command: command.into(),
            scenario_hash: sha256_hex(scenario_json.as_bytes()),
            grid: GridParams {
                dim: grid.dim(),
                radius: grid.radius(),
                n: grid.points_per_axis(),
            },
            time: TimeParams {
                horizon: time.horizon(),
                steps: time.steps(),
                theta: time.theta(),
            },
            tolerances: BTreeMap::new(),
            seed,
            input_hash: content_hash(&input),
            seconds: None,
            versions,
            outputs: BTreeMap::new(),
            deterministic: false,
        }
    }

    /// Records a written output by name and content hash.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), content_hash(bytes));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}
