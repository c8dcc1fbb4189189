use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Result, UqError};

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| UqError::io(parent, e))?;
        }
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| UqError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| UqError::io(&tmp, e))?;
        f.sync_all().map_err(|e| UqError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| UqError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| UqError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Serializes records with a header row through `csv` and writes atomically.
pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| UqError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(UqError::from)).collect()
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}
