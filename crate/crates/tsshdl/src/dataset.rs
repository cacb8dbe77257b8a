//! Split manifests and the synthetic dataset writer.
//!
//! A manifest lists one image per line, optionally followed by its label
//! map; relative paths are resolved against the manifest's directory and
//! `#` starts a comment.

use std::path::{Path, PathBuf};

use tsshdl_core::synth::{synth_image, SynthConfig};
use tsshdl_core::{LabelMap, Volume};

use crate::io::{self, FormatHint, IoError};

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// file stem of the image, used in reports
    pub id: String,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<Item>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let image = base.join(parts.next().unwrap());
        let labels = parts.next().map(|p| base.join(p));
        if parts.next().is_some() {
            return Err(IoError::corrupt(path, format!("line {}: expected `image [labels]`", n + 1)));
        }
        let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        items.push(Item { id, image, labels });
    }
    Ok(items)
}

pub fn format_of(path: &Path) -> Result<FormatHint, IoError> {
    FormatHint::from_path(path)
        .ok_or_else(|| IoError::unsupported(path, "unknown extension (expected .png, .pgm, .raw, .bin or .nii)"))
}

/// Reads an image as stored on disk.
pub fn load_image(path: &Path) -> Result<Volume, IoError> {
    io::load_volume(path, format_of(path)?)
}

pub fn load_labels(path: &Path, image: &Volume) -> Result<LabelMap, IoError> {
    let labels = io::load_label_map(path, format_of(path)?)?;
    labels.check_matches(image).map_err(|e| IoError::image(path, e))?;
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub image: SynthConfig,
    pub seed: u64,
}

impl Default for SynthSplits {
    fn default() -> Self {
        SynthSplits { train: 20, val: 5, test: 10, image: SynthConfig::default(), seed: 0 }
    }
}

/// Writes 16-bit PNG images, indexed label PNGs and `train.txt`,
/// `val.txt`, `test.txt` manifests into `dir`. Image `i` of the whole set
/// uses generator seed `seed + i`.
pub fn write_synthetic(dir: &Path, splits: &SynthSplits) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut index = 0u64;
    for (name, count) in [("train", splits.train), ("val", splits.val), ("test", splits.test)] {
        let mut manifest = String::new();
        for i in 0..count {
            let (img, labels) = synth_image(splits.seed.wrapping_add(index), &splits.image);
            index += 1;
            let stem = format!("{name}_{i:03}");
            io::save_gray16_png(&img, &dir.join(format!("{stem}.png")))?;
            io::save_label_png(&labels, &dir.join(format!("{stem}_labels.png")))?;
            manifest.push_str(&format!("{stem}.png {stem}_labels.png\n"));
        }
        let path = dir.join(format!("{name}.txt"));
        std::fs::write(&path, manifest).map_err(|e| IoError::io(&path, e))?;
    }
    Ok(())
}
