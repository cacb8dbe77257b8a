//! Two-layer parametric-log DTCWT scattering network.
//!
//! For each working resolution the network produces
//!
//! * one layer-0 channel `x ⋆ φ`,
//! * `J·6` layer-1 channels `log(U[j,r] + k_j) ⋆ φ` with `U` the modulus of
//!   the oriented DTCWT subbands,
//! * layer-2 channels `|log(U[j1,r1] + k_j1) ⋆ ψ[j2,r2]| ⋆ φ` for `j2 > j1`,
//!
//! all smoothed by a Gaussian `φ` of width `2^(J-1)` working pixels and
//! resampled back to the input grid.

pub mod dtcwt;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::filter::{gaussian_blur, resize_bilinear};
use crate::image::{FeatureStack, ImageError, Plane};

pub use dtcwt::{dtcwt_forward, ComplexPlane, DtcwtFilterSet, DtcwtPyramid, ORIENTATIONS_DEG};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScatterError {
    #[error("image {width}x{height} too small for {levels} DTCWT levels")]
    ImageTooSmall { width: usize, height: usize, levels: usize },
    #[error("invalid scattering configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("log parameter fitting needs non-constant samples")]
    DegenerateSamples,
    #[error("log parameter fitting needs at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Scattering network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterConfig {
    /// coarsest scale exponent; also the number of DTCWT levels
    pub j_max: usize,
    /// per-scale log offsets `k_j`, one per level
    pub k: Vec<f64>,
    /// image down-scale factors, each in `(0, 1]`
    pub resolutions: Vec<f64>,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig { j_max: 2, k: alloc::vec![1.0; 2], resolutions: alloc::vec![1.0, 0.5] }
    }
}

impl ScatterConfig {
    pub fn validate(&self) -> Result<(), ScatterError> {
        if self.j_max < 1 {
            return Err(ScatterError::InvalidConfig("J must be at least 1"));
        }
        if self.k.len() != self.j_max {
            return Err(ScatterError::InvalidConfig("need one k per scale"));
        }
        if self.k.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(ScatterError::InvalidConfig("k_j must be positive"));
        }
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(ScatterError::InvalidConfig("resolutions must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of output channels: per resolution `1 + 6J + 36·J(J-1)/2`.
    pub fn channel_count(&self) -> usize {
        let j = self.j_max;
        (1 + 6 * j + 36 * j * (j - 1) / 2) * self.resolutions.len()
    }

    fn smoothing_sigma(&self) -> f64 {
        (1u64 << (self.j_max - 1)) as f64
    }
}

/// Layer-1 moduli `U[j][r]` (index `j` is level-1 based scale minus one).
pub fn scatter_layer1(img: &Plane, levels: usize) -> Result<Vec<Vec<Plane>>, ScatterError> {
    let pyr = dtcwt_forward(img, levels, &DtcwtFilterSet::kingsbury())?;
    Ok(pyr.highpasses.iter().map(|bands| bands.iter().map(ComplexPlane::magnitude).collect()).collect())
}

fn working_image(img: &Plane, res: f64) -> Plane {
    if res == 1.0 {
        return img.clone();
    }
    let w = (libm::round(img.width as f64 * res) as usize).max(1);
    let h = (libm::round(img.height as f64 * res) as usize).max(1);
    resize_bilinear(img, w, h)
}

/// Gathers layer-1 modulus samples per scale (all orientations and
/// resolutions), keeping every `stride`-th value.
pub fn collect_u_samples(img: &Plane, cfg: &ScatterConfig, stride: usize) -> Result<Vec<Vec<f64>>, ScatterError> {
    let stride = stride.max(1);
    let mut out: Vec<Vec<f64>> = alloc::vec![Vec::new(); cfg.j_max];
    for &res in &cfg.resolutions {
        let x = working_image(img, res);
        let u = scatter_layer1(&x, cfg.j_max)?;
        for (j, bands) in u.iter().enumerate() {
            for band in bands {
                out[j].extend(band.data.iter().step_by(stride).copied());
            }
        }
    }
    Ok(out)
}

/// Sample skewness `m3 / m2^(3/2)`.
pub fn skewness(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let (m2, m3) = values.fold((0.0, 0.0), |(a, b), v| {
        let d = v - mean;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n as f64, m3 / n as f64);
    if m2 <= 0.0 {
        return 0.0;
    }
    m3 / libm::pow(m2, 1.5)
}

pub const MIN_LOG_SAMPLES: usize = 1000;

/// Chooses `k > 0` minimising `|skewness(log(U + k))|` by golden-section
/// search over `log k` on `[1e-6·m, 10·m]`, `m` the sample median.
pub fn fit_log_parameter(samples: &[f64]) -> Result<f64, ScatterError> {
    if samples.len() < MIN_LOG_SAMPLES {
        return Err(ScatterError::InsufficientSamples { needed: MIN_LOG_SAMPLES, got: samples.len() });
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Err(ScatterError::DegenerateSamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut m = sorted[sorted.len() / 2];
    if m <= 0.0 {
        m = samples.iter().sum::<f64>() / samples.len() as f64;
    }
    if !(m > 0.0) {
        return Err(ScatterError::DegenerateSamples);
    }
    let objective = |t: f64| {
        let k = libm::exp(t);
        libm::fabs(skewness(samples.iter().map(|&u| libm::log(u + k))))
    };
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = (libm::log(1e-6 * m), libm::log(10.0 * m));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
        if b - a < 1e-9 {
            break;
        }
    }
    Ok(libm::exp(0.5 * (a + b)))
}

/// Fits one `k_j` per scale from per-scale sample pools.
pub fn fit_log_parameters(per_scale: &[Vec<f64>]) -> Result<Vec<f64>, ScatterError> {
    per_scale.iter().map(|s| fit_log_parameter(s)).collect()
}

fn upsample_smoothed(p: &Plane, sigma: f64, out_w: usize, out_h: usize) -> Plane {
    let smoothed = gaussian_blur(p, sigma.max(0.5));
    resize_bilinear(&smoothed, out_w, out_h)
}

/// Scattering coefficients of `img` as a feature stack aligned with it.
pub fn scatter_coefficients(img: &Plane, cfg: &ScatterConfig) -> Result<FeatureStack, ScatterError> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let filters = DtcwtFilterSet::kingsbury();
    let sigma = cfg.smoothing_sigma();
    let mut stack = FeatureStack::empty(w, h);
    let deg = |r: usize| ORIENTATIONS_DEG[r];
    for (ri, &res) in cfg.resolutions.iter().enumerate() {
        let x = working_image(img, res);
        stack.push(format!("r{ri}.l0"), &upsample_smoothed(&x, sigma, w, h))?;
        let pyr = dtcwt_forward(&x, cfg.j_max, &filters)?;
        let mut u1: Vec<Vec<Plane>> = Vec::with_capacity(cfg.j_max);
        for (j, bands) in pyr.highpasses.iter().enumerate() {
            // a level-j map is 2^j times coarser than the working image
            let native_sigma = sigma / (1u64 << (j + 1)) as f64;
            let k = cfg.k[j];
            let mut level = Vec::with_capacity(6);
            for (r, band) in bands.iter().enumerate() {
                let logmod = band.magnitude().map(|u| libm::log(u + k));
                stack.push(format!("r{ri}.l1.j{}.o{}", j + 1, deg(r)), &upsample_smoothed(&logmod, native_sigma, w, h))?;
                level.push(logmod);
            }
            u1.push(level);
        }
        for (j1, level) in u1.iter().enumerate() {
            let extra = cfg.j_max - (j1 + 1);
            if extra == 0 {
                continue;
            }
            for (r1, map) in level.iter().enumerate() {
                let pyr2 = dtcwt_forward(map, extra, &filters)?;
                for (dj, bands) in pyr2.highpasses.iter().enumerate() {
                    let j2 = j1 + 1 + dj + 1;
                    let native_sigma = sigma / (1u64 << j2) as f64;
                    for (r2, band) in bands.iter().enumerate() {
                        let name: String = format!("r{ri}.l2.j{}.o{}.j{}.o{}", j1 + 1, deg(r1), j2, deg(r2));
                        stack.push(name, &upsample_smoothed(&band.magnitude(), native_sigma, w, h))?;
                    }
                }
            }
        }
    }
    Ok(stack)
}
