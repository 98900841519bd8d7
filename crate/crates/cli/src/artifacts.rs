//! Reading scenarios and writing output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use pfsim_core::scenario::{self, ScenarioConfig, PRESETS};

use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Resolves `source` as a preset name first and as a scenario file otherwise.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig> {
    if PRESETS.contains(&source) {
        return Ok(scenario::preset(source)?);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(CliError::artifact(
            path,
            format!("no such scenario file or preset (presets: {})", PRESETS.join(", ")),
        ));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(scenario::validate(&text)?)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `path` through a temporary file in the same directory, so readers
/// never observe a half-written artifact.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        fill(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |out| out.write_all(text.as_bytes()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
