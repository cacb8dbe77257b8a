use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsshdl_core::{Spacing, Volume};

use super::{read_file, FormatHint, IoError};

/// Reads a volume; samples are cast to `f64` without rescaling.
pub fn load_volume(path: &Path, hint: FormatHint) -> Result<Volume, IoError> {
    match hint {
        FormatHint::Png => decode_png(path, &read_file(path)?),
        FormatHint::Pgm => decode_pgm(path, &read_file(path)?),
        FormatHint::Raw => load_raw(path),
        FormatHint::Nifti1 => decode_nifti(path, &read_file(path)?),
    }
}

fn volume(path: &Path, w: usize, h: usize, d: usize, spacing: Spacing, data: Vec<f64>) -> Result<Volume, IoError> {
    Volume::new(w, h, d, spacing, data).map_err(|e| IoError::image(path, e))
}

pub(crate) fn decode_png(path: &Path, bytes: &[u8]) -> Result<Volume, IoError> {
    let (w, h, samples, color) = decode_png_samples(path, bytes)?;
    if color != png::ColorType::Grayscale {
        return Err(IoError::unsupported(path, format!("PNG colour type {color:?}, expected grayscale")));
    }
    volume(path, w, h, 1, Spacing::UNIT, samples)
}

/// Raw PNG samples (palette indices for indexed images).
pub(crate) fn decode_png_samples(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>, png::ColorType), IoError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| IoError::corrupt(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| IoError::corrupt(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if !matches!(info.color_type, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(IoError::unsupported(path, format!("PNG colour type {:?}", info.color_type)));
    }
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| v as f64).collect(),
        png::BitDepth::Sixteen if info.color_type == png::ColorType::Grayscale => {
            buf[..2 * w * h].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
        }
        depth => return Err(IoError::unsupported(path, format!("PNG bit depth {depth:?}"))),
    };
    Ok((w, h, samples, info.color_type))
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Volume, IoError> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).unwrap_or_default();
    if magic != "P5" {
        return Err(IoError::unsupported(path, format!("PGM magic `{magic}`, only binary P5 is read")));
    }
    let mut number = |name: &str| -> Result<usize, IoError> {
        token(&mut pos)
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| IoError::corrupt(path, format!("bad PGM {name}")))
    };
    let (w, h, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(IoError::corrupt(path, format!("PGM header {w}x{h} maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(bps)).ok_or_else(|| IoError::corrupt(path, "PGM too large"))?;
    let payload = bytes.get(pos..).unwrap_or_default();
    if payload.len() < need {
        return Err(IoError::corrupt(path, format!("PGM payload has {} bytes, header needs {need}", payload.len())));
    }
    let data = if bps == 1 {
        payload[..need].iter().map(|&v| v as f64).collect()
    } else {
        payload[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    volume(path, w, h, 1, Spacing::UNIT, data)
}

/// JSON header stored next to a raw dump as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    #[serde(default = "one")]
    pub depth: usize,
    /// one of `u8`, `u16`, `i16`, `f32`, `f64` (little-endian)
    pub dtype: String,
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
}

fn one() -> usize {
    1
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

impl RawSidecar {
    pub fn path_for(raw: &Path) -> PathBuf {
        let mut s = raw.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }
}

fn load_raw(path: &Path) -> Result<Volume, IoError> {
    let side_path = RawSidecar::path_for(path);
    let side: RawSidecar = serde_json::from_slice(&read_file(&side_path)?)
        .map_err(|e| IoError::corrupt(&side_path, e.to_string()))?;
    let bytes = read_file(path)?;
    let n = side
        .width
        .checked_mul(side.height)
        .and_then(|v| v.checked_mul(side.depth))
        .filter(|&n| n > 0)
        .ok_or_else(|| IoError::corrupt(&side_path, "empty or oversized dimensions"))?;
    let data = decode_samples(path, &bytes, &side.dtype, n)?;
    let [sx, sy, sz] = side.spacing;
    let spacing = Spacing::new(sx, sy, sz).map_err(|e| IoError::image(&side_path, e))?;
    volume(path, side.width, side.height, side.depth, spacing, data)
}

fn decode_samples(path: &Path, bytes: &[u8], dtype: &str, n: usize) -> Result<Vec<f64>, IoError> {
    let size = match dtype {
        "u8" => 1,
        "u16" | "i16" => 2,
        "f32" => 4,
        "f64" => 8,
        other => return Err(IoError::unsupported(path, format!("sample type `{other}`"))),
    };
    let need = n.checked_mul(size).ok_or_else(|| IoError::corrupt(path, "oversized dimensions"))?;
    if bytes.len() != need {
        return Err(IoError::corrupt(path, format!("{} payload bytes, header implies {need}", bytes.len())));
    }
    Ok(match dtype {
        "u8" => bytes.iter().map(|&v| v as f64).collect(),
        "u16" => bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        "i16" => bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        "f32" => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        _ => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    })
}

const NIFTI_HEADER: usize = 348;

fn decode_nifti(path: &Path, bytes: &[u8]) -> Result<Volume, IoError> {
    if bytes.len() < NIFTI_HEADER {
        return Err(IoError::corrupt(path, format!("{} bytes, NIfTI-1 header needs 348", bytes.len())));
    }
    let i16_at = |o: usize| i16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != NIFTI_HEADER as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == NIFTI_HEADER as i32 {
            return Err(IoError::unsupported(path, "big-endian NIfTI"));
        }
        return Err(IoError::corrupt(path, format!("sizeof_hdr {sizeof_hdr}")));
    }
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(IoError::unsupported(path, "two-file NIfTI (.hdr/.img)")),
        m => return Err(IoError::corrupt(path, format!("magic {m:?}"))),
    }
    let dim: Vec<i16> = (0..8).map(|i| i16_at(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) || dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(IoError::corrupt(path, format!("dim {dim:?}")));
    }
    if ndim > 3 && dim[4..=ndim as usize].iter().any(|&d| d != 1) {
        return Err(IoError::unsupported(path, "only 2-D and 3-D volumes are read"));
    }
    let extent = |i: usize| if i <= ndim as usize { dim[i] as usize } else { 1 };
    let (w, h, d) = (extent(1), extent(2), extent(3));
    let (datatype, bitpix) = (i16_at(70), i16_at(72));
    let (dtype, bits) = match datatype {
        2 => ("u8", 8),
        4 => ("i16", 16),
        16 => ("f32", 32),
        other => return Err(IoError::unsupported(path, format!("NIfTI datatype {other}"))),
    };
    if bitpix != bits {
        return Err(IoError::corrupt(path, format!("bitpix {bitpix} for datatype {datatype}")));
    }
    let offset = f32_at(108);
    if !(offset.is_finite() && offset >= NIFTI_HEADER as f32) {
        return Err(IoError::corrupt(path, format!("vox_offset {offset}")));
    }
    let offset = offset as usize;
    let n = w * h * d;
    let payload = bytes.get(offset..offset + n * (bits as usize / 8)).ok_or_else(|| {
        IoError::corrupt(path, format!("payload shorter than {}x{}x{} {dtype} samples", w, h, d))
    })?;
    let data = decode_samples(path, payload, dtype, n)?;
    let pix = |i: usize| {
        let v = f32_at(76 + 4 * i) as f64;
        if v.is_finite() && v != 0.0 {
            v.abs()
        } else {
            1.0
        }
    };
    let spacing = Spacing::new(pix(1), pix(2), pix(3)).map_err(|e| IoError::image(path, e))?;
    volume(path, w, h, d, spacing, data)
}
