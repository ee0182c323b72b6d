//! Reading inputs and writing outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lidaraug_core::format::{parse_bank, parse_frame};
use lidaraug_core::ops::ExemplarBank;
use lidaraug_core::policy::{default_policy, parse_policy};
use lidaraug_core::{Frame, PolicySpec};
use rayon::prelude::*;

use crate::ConfigError;

pub const FRAME_EXT: &str = "laf1";

/// Frame files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| ConfigError(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == FRAME_EXT) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Reads and parses one frame file; errors name the file and line.
pub fn read_frame(path: &Path) -> std::result::Result<Frame, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_frame(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Frames that parsed, with their paths, and one message per file that did not.
pub type ParsedFrames = (Vec<(PathBuf, Frame)>, Vec<String>);

/// Parses every frame in `dir`; failures are returned alongside.
pub fn read_frames(dir: &Path) -> Result<ParsedFrames> {
    let files = list_frames(dir)?;
    let parsed: Vec<_> = files.par_iter().map(|p| read_frame(p)).collect();
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in files.into_iter().zip(parsed) {
        match r {
            Ok(f) => frames.push((path, f)),
            Err(e) => failures.push(e),
        }
    }
    Ok((frames, failures))
}

pub fn read_policy(path: Option<&Path>) -> Result<PolicySpec> {
    let Some(path) = path else {
        return Ok(default_policy());
    };
    let text =
        fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(parse_policy(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?)
}

pub fn read_bank(path: &Path) -> Result<ExemplarBank> {
    let text =
        fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(parse_bank(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
