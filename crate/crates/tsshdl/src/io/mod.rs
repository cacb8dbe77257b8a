//! File formats: image ingestion, label maps, overlays and the feature
//! cache.

mod cache;
mod formats;
mod render;

use std::path::{Path, PathBuf};

pub use cache::{decode_feature_cache, encode_feature_cache, read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use formats::{load_volume, RawSidecar};
pub use render::{
    load_label_map, save_gray16_png, save_label_overlay, save_label_png, OVERLAY_ALPHA, GREY_MATTER_TINT, WHITE_MATTER_TINT,
};

use tsshdl_core::ImageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatHint {
    Png,
    Pgm,
    /// raw little-endian samples with a `<file>.json` sidecar
    Raw,
    Nifti1,
}

impl FormatHint {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(FormatHint::Png),
            "pgm" => Some(FormatHint::Pgm),
            "raw" | "bin" => Some(FormatHint::Raw),
            "nii" => Some(FormatHint::Nifti1),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: unsupported format: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: corrupt header: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("{path}: non-finite sample at index {index}")]
    NonFiniteData { path: PathBuf, index: usize },
    #[error("{path}: not a feature cache (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: cache version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated payload")]
    TruncatedPayload { path: PathBuf },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn corrupt(path: &Path, reason: impl Into<String>) -> Self {
        IoError::CorruptHeader { path: path.to_path_buf(), reason: reason.into() }
    }

    pub(crate) fn unsupported(path: &Path, reason: impl Into<String>) -> Self {
        IoError::UnsupportedFormat { path: path.to_path_buf(), reason: reason.into() }
    }

    pub(crate) fn image(path: &Path, source: ImageError) -> Self {
        match source {
            ImageError::NonFinite(index) => IoError::NonFiniteData { path: path.to_path_buf(), index },
            source => IoError::Image { path: path.to_path_buf(), source },
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            IoError::UnsupportedFormat { path, .. }
            | IoError::CorruptHeader { path, .. }
            | IoError::NonFiniteData { path, .. }
            | IoError::BadMagic { path }
            | IoError::VersionMismatch { path, .. }
            | IoError::TruncatedPayload { path }
            | IoError::Image { path, .. }
            | IoError::Io { path, .. } => path,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Writes through a sibling temporary file so readers never see a partial
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| IoError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}
