//! Output-file plumbing: everything lands in the chosen directory, and every
//! file embeds the config hash.

use std::path::{Path, PathBuf};

use crate::CliError;

pub fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
    let mut body = serde_json::to_string_pretty(value).expect("serializable");
    body.push('\n');
    write_file(dir, name, &body)
}
