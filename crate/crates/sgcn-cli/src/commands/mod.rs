//! One module per subcommand plus shared checkpoint/dataset plumbing.

pub mod eval;
pub mod export_adjacency;
pub mod gen_synthetic;
pub mod gradcheck;
pub mod train;

use std::path::{Path, PathBuf};

use sgcn::scalar::Precision;
use sgcn::train::{load_checkpoint, Checkpoint};

use crate::config::FileConfig;
use crate::{CliError, DATA_DIR_ENV};

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

/// Flag, then `SGCN_DATA_DIR`, then the config file's `data_dir`.
pub fn resolve_data_dir(
    flag: Option<PathBuf>,
    file: &FileConfig,
) -> Result<PathBuf, CliError> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        if !dir.is_empty() {
            return Ok(PathBuf::from(dir));
        }
    }
    if let Some(dir) = file.get_raw("data_dir") {
        return Ok(PathBuf::from(dir));
    }
    Err(CliError::input(format!(
        "no data directory: pass --data-dir, set {DATA_DIR_ENV}, or put data_dir in the config"
    )))
}

/// A checkpoint loaded at whichever width was requested or recorded.
pub enum LoadedCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

/// Byte 12 of the container records how wide the stored values are.
fn stored_precision(path: &Path) -> Result<Precision, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::input(format!("cannot read checkpoint {}: {e}", path.display())))?;
    match bytes.get(12) {
        Some(4) => Ok(Precision::F32),
        Some(8) => Ok(Precision::F64),
        _ => Err(CliError::input(format!(
            "{}: too short or not a checkpoint file",
            path.display()
        ))),
    }
}

/// Loads at `requested` width, or the checkpoint's own width when no flag was
/// given. Narrowing 64 -> 32 requires `narrow`.
pub fn load_checkpoint_cli(
    path: &Path,
    requested: Option<Precision>,
    narrow: bool,
) -> Result<LoadedCheckpoint, CliError> {
    let precision = match requested {
        Some(p) => p,
        None => stored_precision(path)?,
    };
    match precision {
        Precision::F32 => Ok(LoadedCheckpoint::F32(load_checkpoint::<f32>(path, narrow)?)),
        Precision::F64 => Ok(LoadedCheckpoint::F64(load_checkpoint::<f64>(path, narrow)?)),
    }
}
