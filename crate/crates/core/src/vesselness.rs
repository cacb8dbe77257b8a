//! Multiscale Hessian ridge ("vesselness") response with max pooling over
//! scales.

use alloc::vec::Vec;

use crate::filter::{convolve_separable, gaussian_kernel};
use crate::image::{FeatureStack, ImageError, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// bright ridges on a dark background (negative principal curvature)
    Bright,
    Dark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselnessConfig {
    /// Gaussian scales in pixels, strictly increasing
    pub scales: Vec<f64>,
    /// blobness weight
    pub beta: f64,
    /// structureness weight; `None` uses half the largest Hessian
    /// Frobenius norm observed at each scale
    pub c: Option<f64>,
    pub polarity: Polarity,
}

impl Default for VesselnessConfig {
    fn default() -> Self {
        VesselnessConfig { scales: geometric_scales(1.0, 8.0, 10), beta: 0.5, c: None, polarity: Polarity::Bright }
    }
}

/// `n` scales spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_scales(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![lo];
    }
    (0..n).map(|i| lo * libm::pow(hi / lo, i as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VesselnessError {
    #[error("invalid vesselness configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl VesselnessConfig {
    pub fn validate(&self) -> Result<(), VesselnessError> {
        if self.scales.is_empty() {
            return Err(VesselnessError::InvalidConfig("at least one scale required"));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VesselnessError::InvalidConfig("scales must be positive"));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(VesselnessError::InvalidConfig("scales must be strictly increasing"));
        }
        if !(self.beta > 0.0) {
            return Err(VesselnessError::InvalidConfig("beta must be positive"));
        }
        if let Some(c) = self.c {
            if !(c > 0.0) {
                return Err(VesselnessError::InvalidConfig("c must be positive"));
            }
        }
        Ok(())
    }
}

/// Scale-normalized second derivatives `σ²·∂²(G_σ ⋆ img)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub xx: Plane,
    pub xy: Plane,
    pub yy: Plane,
}

impl Hessian {
    /// Eigenvalues at pixel `i`, ordered so that `|λ1| ≤ |λ2|`.
    #[inline]
    pub fn eigenvalues(&self, i: usize) -> (f64, f64) {
        let (a, b, c) = (self.xx.data[i], self.xy.data[i], self.yy.data[i]);
        let mean = 0.5 * (a + c);
        let d = libm::sqrt(0.25 * (a - c) * (a - c) + b * b);
        let (mu1, mu2) = (mean + d, mean - d);
        if mu1.abs() <= mu2.abs() {
            (mu1, mu2)
        } else {
            (mu2, mu1)
        }
    }

    pub fn max_frobenius(&self) -> f64 {
        (0..self.xx.data.len())
            .map(|i| {
                let (a, b, c) = (self.xx.data[i], self.xy.data[i], self.yy.data[i]);
                libm::sqrt(a * a + 2.0 * b * b + c * c)
            })
            .fold(0.0, f64::max)
    }
}

pub fn hessian_at_scale(img: &Plane, sigma: f64) -> Hessian {
    let g0 = gaussian_kernel(sigma, 0);
    let g1 = gaussian_kernel(sigma, 1);
    let g2 = gaussian_kernel(sigma, 2);
    let s2 = sigma * sigma;
    let norm = |p: Plane| p.map(|v| s2 * v);
    Hessian {
        xx: norm(convolve_separable(img, &g2, &g0)),
        xy: norm(convolve_separable(img, &g1, &g1)),
        yy: norm(convolve_separable(img, &g0, &g2)),
    }
}

fn response(h: &Hessian, beta: f64, c: f64, polarity: Polarity) -> Plane {
    let mut out = Plane::zeros(h.xx.width, h.xx.height);
    if !(c > 0.0) {
        return out;
    }
    for (i, o) in out.data.iter_mut().enumerate() {
        let (l1, l2) = h.eigenvalues(i);
        let wrong_sign = match polarity {
            Polarity::Bright => l2 >= 0.0,
            Polarity::Dark => l2 <= 0.0,
        };
        if wrong_sign {
            continue;
        }
        let r = l1 / l2;
        let s2 = l1 * l1 + l2 * l2;
        *o = libm::exp(-r * r / (2.0 * beta * beta)) * (1.0 - libm::exp(-s2 / (2.0 * c * c)));
    }
    out
}

const FLAT_TOLERANCE: f64 = 1e-10;

/// Ridge response in `[0, 1]` at one scale.
pub fn vesselness_at_scale(img: &Plane, sigma: f64, cfg: &VesselnessConfig) -> Plane {
    let h = hessian_at_scale(img, sigma);
    let c = match cfg.c {
        Some(c) => c,
        None => {
            let s = h.max_frobenius();
            // curvature at round-off level is no structure at all
            if s <= FLAT_TOLERANCE * img.max_abs().max(1.0) {
                0.0
            } else {
                0.5 * s
            }
        }
    };
    response(&h, cfg.beta, c, cfg.polarity)
}

/// Per-scale responses (same order as `cfg.scales`).
pub fn vesselness_per_scale(img: &Plane, cfg: &VesselnessConfig) -> Result<Vec<Plane>, VesselnessError> {
    cfg.validate()?;
    Ok(cfg.scales.iter().map(|&s| vesselness_at_scale(img, s, cfg)).collect())
}

/// Pixelwise maximum of the per-scale responses, as a one-channel stack.
pub fn vesselness_feature(img: &Plane, cfg: &VesselnessConfig) -> Result<FeatureStack, VesselnessError> {
    let per_scale = vesselness_per_scale(img, cfg)?;
    let mut pooled = Plane::zeros(img.width, img.height);
    for p in &per_scale {
        for (o, v) in pooled.data.iter_mut().zip(&p.data) {
            *o = o.max(*v);
        }
    }
    let mut stack = FeatureStack::empty(img.width, img.height);
    stack.push("vesselness", &pooled)?;
    Ok(stack)
}
