//! Line-delimited JSON artifacts. Every file opens with a header record
//! naming its format, version and the hash of the configuration that
//! produced it; each following line is one record.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const SCENARIOS: &str = "trajlab.scenarios";
pub const SFT_DATASET: &str = "trajlab.sft_dataset";
pub const STEP_STATS: &str = "trajlab.step_stats";
pub const SCORES: &str = "trajlab.scores";
pub const DIAGNOSTICS: &str = "trajlab.diagnostics";
pub const TRAIN_LOG: &str = "trajlab.train_log";
pub const SFT_LOG: &str = "trajlab.sft_log";
pub const ADAS_LEDGER: &str = "trajlab.adas_ledger";
pub const TRAJECTORIES: &str = "trajlab.trajectories";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
}

impl Header {
    pub fn new(format: &str, config_hash: &str) -> Self {
        Self {
            format: format.into(),
            version: FORMAT_VERSION,
            config_hash: config_hash.into(),
        }
    }
}

/// A trajectory to be scored against the scenario it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub scenario_id: String,
    pub trajectory: crate::Trajectory,
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_jsonl`], checking its format tag and
/// version.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<(Header, Vec<T>)> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: empty file", path.display())))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    if header.format != format {
        return Err(Error::Schema(format!(
            "{}: expected format {format}, found {}",
            path.display(),
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "{}: unsupported version {}",
            path.display(),
            header.version
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("{}: line {}: {e}", path.display(), i + 2)))?,
        );
    }
    Ok((header, out))
}
