use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{exit, CliError, CliResult};

/// `<path>.config.json`: the resolved config stored beside an artifact.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

fn write_failed(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(exit::FAILURE, format!("cannot write {}: {e}", path.display()))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| write_failed(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| write_failed(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| write_failed(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_sidecar<T: Serialize>(artifact: &Path, config: &T) -> CliResult<()> {
    write_json(&sidecar_path(artifact), config)
}

fn read_failed(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::bad_config(format!("cannot read {}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| read_failed(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| read_failed(path, e))
}

/// Prefixes core errors with the file they came from.
pub fn in_file(path: &Path) -> impl Fn(dmrl_core::Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }
}
