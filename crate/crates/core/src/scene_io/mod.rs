//! File formats, image metrics, and the command line.
//!
//! A scene on disk is a TOML manifest plus headerless little-endian data
//! files next to it (vertex and texture `f32` arrays, `u32` triangle
//! triplets) and one Gaussian blob with a 16-byte header.

pub mod blob;
pub mod cli;
pub mod image_io;
pub mod manifest;
pub mod metrics;

use std::path::{Path, PathBuf};

pub use blob::{decode_gaussians, encode_gaussians, BLOB_MAGIC, BLOB_RECORD_BYTES, BLOB_VERSION};
pub use image_io::{load_image, load_mask, save_image};
pub use manifest::{load_cameras, load_scene, save_cameras, save_scene, SceneFile, FORMAT_VERSION};
pub use metrics::{metric_mae, metric_psnr, metric_ssim};

/// Errors from reading or writing scene files and images.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}: bad magic, not a Gaussian blob")]
    BadMagic(PathBuf),
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: expected {expected} {what}, found {found}")]
    CountMismatch {
        path: PathBuf,
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] crate::error::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub(crate) fn read_file(path: &Path) -> IoResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::Missing(path.to_path_buf()),
        _ => IoError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })
}

/// Writes to a sibling temporary file, then renames it over `path`.
/// Creates missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let io_err = |e: std::io::Error| IoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(e)
    })
}

pub(crate) fn f32s_to_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn bytes_to_f32s(path: &Path, bytes: &[u8], expected: usize, what: &'static str) -> IoResult<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(IoError::CountMismatch {
            path: path.to_path_buf(),
            what,
            expected: expected as u64,
            found: (bytes.len() / 4) as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
