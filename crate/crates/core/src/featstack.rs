//! Concatenation of the hand-crafted feature families and per-channel
//! standardization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::image::{FeatureStack, ImageError};

pub const SCATTER_PREFIX: &str = "scatter";
pub const VESSEL_PREFIX: &str = "vessel";
pub const TEXTURE_PREFIX: &str = "texture";

/// Channels with a smaller standard deviation are only centred.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatStackError {
    #[error("standardizer needs at least two pixels")]
    EmptyFitSet,
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Concatenates scattering, vesselness and texture stacks in that order,
/// prefixing channel names with their source.
pub fn concat_features(s: &FeatureStack, v: &FeatureStack, t: &FeatureStack) -> Result<FeatureStack, ImageError> {
    let (w, h) = (s.width(), s.height());
    for other in [v, t] {
        if (other.width(), other.height()) != (w, h) {
            return Err(ImageError::DimMismatch(format!(
                "feature stack {}x{} vs {}x{}",
                other.width(),
                other.height(),
                w,
                h
            )));
        }
    }
    let total = s.channels() + v.channels() + t.channels();
    let mut names: Vec<String> = Vec::with_capacity(total);
    let mut data: Vec<f32> = Vec::with_capacity(total * w * h);
    for (prefix, stack) in [(SCATTER_PREFIX, s), (VESSEL_PREFIX, v), (TEXTURE_PREFIX, t)] {
        names.extend(stack.names().iter().map(|n| format!("{prefix}.{n}")));
        data.extend_from_slice(stack.data());
    }
    FeatureStack::new(w, h, names, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(stacks: &[FeatureStack]) -> Result<Self, FeatStackError> {
        let Some(first) = stacks.first() else {
            return Err(FeatStackError::EmptyFitSet);
        };
        let c = first.channels();
        for s in stacks {
            if s.channels() != c {
                return Err(ImageError::DimMismatch(format!("{} channels vs {}", s.channels(), c)).into());
            }
        }
        let n: usize = stacks.iter().map(FeatureStack::pixels).sum();
        if n < 2 {
            return Err(FeatStackError::EmptyFitSet);
        }
        let mut means = Vec::with_capacity(c);
        let mut stds = Vec::with_capacity(c);
        for ch in 0..c {
            let sum: f64 = stacks.iter().flat_map(|s| s.plane(ch)).map(|&v| v as f64).sum();
            let mean = sum / n as f64;
            let ss: f64 = stacks
                .iter()
                .flat_map(|s| s.plane(ch))
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum();
            means.push(mean);
            stds.push(libm::sqrt(ss / n as f64));
        }
        Ok(Standardizer { means, stds })
    }

    pub fn channels(&self) -> usize {
        self.means.len()
    }

    pub fn is_degenerate(&self, c: usize) -> bool {
        self.stds[c] < MIN_STD
    }

    pub fn degenerate_channels(&self) -> Vec<usize> {
        (0..self.channels()).filter(|&c| self.is_degenerate(c)).collect()
    }

    pub fn apply(&self, stack: &FeatureStack) -> Result<FeatureStack, ImageError> {
        if stack.channels() != self.channels() {
            return Err(ImageError::DimMismatch(format!(
                "standardizer has {} channels, stack has {}",
                self.channels(),
                stack.channels()
            )));
        }
        let p = stack.pixels();
        let mut data = Vec::with_capacity(stack.data().len());
        for c in 0..self.channels() {
            let (m, s) = (self.means[c], self.stds[c]);
            let scale = if self.is_degenerate(c) { 1.0 } else { 1.0 / s };
            data.extend(stack.plane(c).iter().map(|&v| ((v as f64 - m) * scale) as f32));
        }
        debug_assert_eq!(data.len(), p * self.channels());
        FeatureStack::new(stack.width(), stack.height(), stack.names().to_vec(), data)
    }
}
