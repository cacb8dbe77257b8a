use std::path::Path;

use tsshdl_core::image::{BACKGROUND, GREY_MATTER, NUM_TISSUE_CLASSES, WHITE_MATTER};
use tsshdl_core::{LabelMap, Plane, Volume};

use super::formats::decode_png_samples;
use super::{load_volume, read_file, write_atomic, FormatHint, IoError};

pub const GREY_MATTER_TINT: [u8; 3] = [255, 140, 0];
pub const WHITE_MATTER_TINT: [u8; 3] = [0, 150, 255];
/// Tint weight: `out = round((1 - a)·gray + a·tint)`.
pub const OVERLAY_ALPHA: f64 = 0.4;

fn gray_levels(vol: &Volume) -> Vec<u8> {
    vol.normalized().data().iter().map(|v| (v * 255.0).round() as u8).collect()
}

fn blend(g: u8, tint: [u8; 3]) -> [u8; 3] {
    tint.map(|t| ((1.0 - OVERLAY_ALPHA) * g as f64 + OVERLAY_ALPHA * t as f64).round() as u8)
}

fn encode_png(w: usize, h: usize, color: png::ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Vec<u8> {
    encode_png_depth(w, h, color, png::BitDepth::Eight, palette, data)
}

fn encode_png_depth(
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Default);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header().expect("PNG header for in-memory buffer");
        writer.write_image_data(data).expect("PNG data for in-memory buffer");
    }
    out
}

/// 16-bit grayscale PNG of a plane with samples in `[0, 1]` (clamped).
pub fn save_gray16_png(plane: &Plane, path: &Path) -> Result<(), IoError> {
    let data: Vec<u8> = plane
        .data
        .iter()
        .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    let png = encode_png_depth(plane.width, plane.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, None, &data);
    write_atomic(path, &png)
}

/// RGB rendering of the volume (slices stacked vertically) with grey and
/// white matter tinted.
pub fn save_label_overlay(vol: &Volume, labels: &LabelMap, path: &Path) -> Result<(), IoError> {
    labels.check_matches(vol).map_err(|e| IoError::image(path, e))?;
    let gray = gray_levels(vol);
    let mut rgb = Vec::with_capacity(gray.len() * 3);
    for (&g, &l) in gray.iter().zip(labels.labels()) {
        let px = match l {
            GREY_MATTER => blend(g, GREY_MATTER_TINT),
            WHITE_MATTER => blend(g, WHITE_MATTER_TINT),
            _ => [g; 3],
        };
        rgb.extend_from_slice(&px);
    }
    let png = encode_png(vol.width(), vol.height() * vol.depth(), png::ColorType::Rgb, None, &rgb);
    write_atomic(path, &png)
}

/// Indexed PNG whose pixel values are the class labels.
pub fn save_label_png(labels: &LabelMap, path: &Path) -> Result<(), IoError> {
    let mut palette = vec![0u8; 3 * labels.num_classes() as usize];
    for (c, rgb) in palette.chunks_exact_mut(3).enumerate() {
        match c as u8 {
            BACKGROUND => {}
            GREY_MATTER => rgb.copy_from_slice(&GREY_MATTER_TINT),
            WHITE_MATTER => rgb.copy_from_slice(&WHITE_MATTER_TINT),
            other => rgb.fill(other.wrapping_mul(64)),
        }
    }
    let png = encode_png(
        labels.width(),
        labels.height() * labels.depth(),
        png::ColorType::Indexed,
        Some(palette),
        labels.labels(),
    );
    write_atomic(path, &png)
}

/// Reads a tissue label map from an indexed or grayscale PNG, or any
/// volume format holding integer labels in `0..3`.
pub fn load_label_map(path: &Path, hint: FormatHint) -> Result<LabelMap, IoError> {
    let (w, h, d, samples) = match hint {
        FormatHint::Png => {
            let (w, h, s, _) = decode_png_samples(path, &read_file(path)?)?;
            (w, h, 1, s)
        }
        _ => {
            let v = load_volume(path, hint)?;
            (v.width(), v.height(), v.depth(), v.data().to_vec())
        }
    };
    let mut labels = Vec::with_capacity(samples.len());
    for (i, v) in samples.into_iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..NUM_TISSUE_CLASSES as f64).contains(&v) {
            return Err(IoError::corrupt(path, format!("sample {i} = {v} is not a tissue label")));
        }
        labels.push(v as u8);
    }
    LabelMap::new(w, h, d, NUM_TISSUE_CLASSES, labels).map_err(|e| IoError::image(path, e))
}
