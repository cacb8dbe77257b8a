use std::path::Path;

use tsshdl_core::FeatureStack;

use super::{read_file, write_atomic, IoError};

pub const CACHE_MAGIC: &[u8; 4] = b"TSFH";
pub const CACHE_VERSION: u32 = 1;

/// Layout: magic, then `u32` version, channels, width and height, then
/// the channel names (`u16` length + UTF-8), then `f32` planes, all
/// little-endian.
pub fn encode_feature_cache(stack: &FeatureStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + stack.data().len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    for v in [CACHE_VERSION, stack.channels() as u32, stack.width() as u32, stack.height() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in stack.names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_feature_cache(stack: &FeatureStack, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_feature_cache(stack))
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureStack, IoError> {
    decode_feature_cache(path, &read_file(path)?)
}

/// Decodes an in-memory cache file; `path` only labels errors.
pub fn decode_feature_cache(path: &Path, bytes: &[u8]) -> Result<FeatureStack, IoError> {
    let truncated = || IoError::TruncatedPayload { path: path.to_path_buf() };
    if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
        return Err(IoError::BadMagic { path: path.to_path_buf() });
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8], IoError> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let mut u32_field = || -> Result<u32, IoError> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap())) };
    let version = u32_field()?;
    if version != CACHE_VERSION {
        return Err(IoError::VersionMismatch { path: path.to_path_buf(), found: version, expected: CACHE_VERSION });
    }
    let (c, w, h) = (u32_field()? as usize, u32_field()? as usize, u32_field()? as usize);
    // planes plus the shortest possible name table must still fit
    let least = c.checked_mul(w).and_then(|v| v.checked_mul(h)).and_then(|v| v.checked_mul(4)).and_then(|v| v.checked_add(2 * c));
    if least.is_none_or(|n| n > bytes.len() - 20) {
        return Err(truncated());
    }
    let mut names = Vec::with_capacity(c.min(4096));
    for _ in 0..c {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(len)?).map_err(|_| IoError::corrupt(path, "channel name is not UTF-8"))?;
        names.push(name.to_owned());
    }
    let n = c
        .checked_mul(w)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(truncated)?;
    let payload = take(n)?;
    if pos != bytes.len() {
        return Err(IoError::corrupt(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    FeatureStack::new(w, h, names, data).map_err(|e| IoError::image(path, e))
}
