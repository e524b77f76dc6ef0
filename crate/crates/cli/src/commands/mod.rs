pub mod degrade;
pub mod eval;
pub mod grid;
pub mod mask;
pub mod restore;
pub mod train;

use std::path::{Path, PathBuf};

use log::warn;
use uwrestore_core::imaging::is_image_path;

use crate::error::{CliError, CliResult};

/// Image files in `dir`, sorted; other regular files are reported and skipped.
pub fn image_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("not a directory: {}", dir.display())));
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Runtime(e.into()))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::Runtime(e.into()))?.path();
        if !path.is_file() {
            continue;
        }
        if is_image_path(&path) {
            out.push(path);
        } else {
            warn!("skipping non-image file {}", path.display());
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display())))
}
