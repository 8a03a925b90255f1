use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Everything needed to rerun a command: the resolved configuration, the
/// seed and the inputs. Timing fields are informational only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub version: String,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

/// Started when a command begins; finished into a [`RunManifest`].
pub struct RunClock {
    wall: SystemTime,
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            wall: SystemTime::now(),
            start: Instant::now(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        command: &str,
        argv: &[String],
        seed: Option<u64>,
        config: impl Serialize,
        inputs: Vec<PathBuf>,
        outputs: Vec<String>,
    ) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: self.wall.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            elapsed_ms: self.start.elapsed().as_millis(),
        }
    }
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), CliError> {
    crate::write_json(&dir.join(MANIFEST_FILE), m)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
