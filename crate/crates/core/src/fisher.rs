//! Diagonal-covariance GMM and Fisher-vector encoding of local descriptor
//! sets, plus the dense per-pixel encoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{FeatureStack, ImageError};
use crate::linalg::{top_eigen, LinalgError};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FisherError {
    #[error("GMM fitting needs at least {needed} descriptors, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("mixture component {0} collapsed twice")]
    CollapsedComponent(usize),
    #[error("EM log-likelihood decreased from {before} to {after} at iteration {iteration}")]
    LikelihoodDecreased { iteration: usize, before: f64, after: f64 },
    #[error("empty descriptor set")]
    EmptyDescriptorSet,
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Mixture of `k` axis-aligned Gaussians in `d` dimensions. Means and
/// variances are stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// Log of `π_k N(x | μ_k, σ²_k)` for every component.
    pub fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for k in 0..self.k() {
            let (mu, var) = (self.mean(k), self.variance(k));
            let mut acc = 0.0;
            for i in 0..d {
                let diff = x[i] - mu[i];
                acc += libm::log(var[i]) + diff * diff / var[i];
            }
            out[k] = libm::log(self.weights[k]) - 0.5 * (acc + d as f64 * LN_2PI);
        }
    }

    /// Posterior responsibilities; returns `log p(x)`.
    pub fn responsibilities(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        self.component_log_densities(x, gamma);
        let m = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for g in gamma.iter_mut() {
            *g = libm::exp(*g - m);
            s += *g;
        }
        gamma.iter_mut().for_each(|g| *g /= s);
        m + libm::log(s)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.k()];
        self.responsibilities(x, &mut g)
    }

    /// Mean `(1/T)·Σ log p(x_t)` over row-major descriptors.
    pub fn mean_log_likelihood(&self, data: &[f64]) -> f64 {
        let n = data.len() / self.dim;
        let mut g = vec![0.0; self.k()];
        data.chunks_exact(self.dim).map(|x| self.responsibilities(x, &mut g)).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig { k: 5, max_iters: 200, rel_tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmReport {
    /// mean log-likelihood after every E-step
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: Vec<usize>,
}

fn kmeanspp(data: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(row(rng.gen_range(0..n)));
    let mut best: Vec<f64> = (0..n).map(|i| dist2(row(i), &centers[0..d])).collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if t < b {
                    idx = i;
                    break;
                }
                t -= b;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.extend_from_slice(row(pick));
        let new = &centers[c * d..(c + 1) * d];
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(row(i), new));
        }
    }
    centers
}

fn global_variance(data: &[f64], d: usize) -> Vec<f64> {
    let n = (data.len() / d) as f64;
    let mut mean = vec![0.0; d];
    for x in data.chunks_exact(d) {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in data.chunks_exact(d) {
        for i in 0..d {
            var[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
        }
    }
    var.iter().map(|v| (v / n).max(VARIANCE_FLOOR)).collect()
}

/// Maximum-likelihood mixture by EM from a k-means++ initialisation.
///
/// `data` holds `n` row-major descriptors of dimension `d`; at least
/// `10·k·d` are required.
pub fn fit_gmm(data: &[f64], d: usize, cfg: &GmmConfig) -> Result<(Gmm, GmmReport), FisherError> {
    let k = cfg.k;
    if d == 0 || k == 0 {
        return Err(FisherError::InvalidConfig("dimension and component count must be positive"));
    }
    let n = data.len() / d;
    let needed = 10 * k * d;
    if n < needed {
        return Err(FisherError::InsufficientData { needed, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gvar = global_variance(data, d);
    let centers = kmeanspp(data, d, k, &mut rng);

    // hard assignment to initialise weights and variances
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * d];
    let mut sq = vec![0.0; k * d];
    for x in data.chunks_exact(d) {
        let c = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = (0..d).map(|i| (x[i] - centers[a * d + i]).powi(2)).sum();
                let db: f64 = (0..d).map(|i| (x[i] - centers[b * d + i]).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        counts[c] += 1;
        for i in 0..d {
            sums[c * d + i] += x[i];
            sq[c * d + i] += x[i] * x[i];
        }
    }
    let mut gmm = Gmm { dim: d, weights: vec![0.0; k], means: centers, variances: vec![0.0; k * d] };
    for c in 0..k {
        gmm.weights[c] = (counts[c].max(1)) as f64;
        for i in 0..d {
            gmm.variances[c * d + i] = if counts[c] >= 2 {
                let m = sums[c * d + i] / counts[c] as f64;
                (sq[c * d + i] / counts[c] as f64 - m * m).max(VARIANCE_FLOOR)
            } else {
                gvar[i]
            };
        }
    }
    let wsum: f64 = gmm.weights.iter().sum();
    gmm.weights.iter_mut().for_each(|w| *w /= wsum);

    let mut report = GmmReport { log_likelihoods: Vec::new(), iterations: 0, converged: false, reseeded: Vec::new() };
    let mut gamma = vec![0.0; k];
    let mut prev: Option<f64> = None;
    for it in 0..cfg.max_iters {
        // E-step statistics
        let mut nk = vec![0.0; k];
        let mut s1 = vec![0.0; k * d];
        let mut s2 = vec![0.0; k * d];
        let mut ll = 0.0;
        let mut worst = (f64::INFINITY, 0usize);
        for (t, x) in data.chunks_exact(d).enumerate() {
            let lp = gmm.responsibilities(x, &mut gamma);
            ll += lp;
            if lp < worst.0 {
                worst = (lp, t);
            }
            for c in 0..k {
                let g = gamma[c];
                if g == 0.0 {
                    continue;
                }
                nk[c] += g;
                for i in 0..d {
                    s1[c * d + i] += g * x[i];
                    s2[c * d + i] += g * x[i] * x[i];
                }
            }
        }
        ll /= n as f64;
        report.iterations = it + 1;
        if let Some(p) = prev {
            if ll < p - 1e-10 * p.abs().max(1.0) {
                return Err(FisherError::LikelihoodDecreased { iteration: it, before: p, after: ll });
            }
        }
        report.log_likelihoods.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.rel_tol * p.abs().max(1e-12) {
                report.converged = true;
                break;
            }
        }
        prev = Some(ll);

        if let Some(c) = (0..k).find(|&c| nk[c] < 1e-8) {
            if report.reseeded.contains(&c) {
                return Err(FisherError::CollapsedComponent(c));
            }
            report.reseeded.push(c);
            // restart the component on the worst-explained descriptor
            let x = &data[worst.1 * d..(worst.1 + 1) * d];
            gmm.means[c * d..(c + 1) * d].copy_from_slice(x);
            gmm.variances[c * d..(c + 1) * d].copy_from_slice(&gvar);
            gmm.weights[c] = 1.0 / n as f64;
            let wsum: f64 = gmm.weights.iter().sum();
            gmm.weights.iter_mut().for_each(|w| *w /= wsum);
            prev = None;
            continue;
        }

        // M-step
        for c in 0..k {
            gmm.weights[c] = nk[c] / n as f64;
            for i in 0..d {
                let m = s1[c * d + i] / nk[c];
                let v = s2[c * d + i] / nk[c] - m * m;
                gmm.means[c * d + i] = m;
                gmm.variances[c * d + i] = v.max(VARIANCE_FLOOR);
            }
        }
        let wsum: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    Ok((gmm, report))
}

/// Gradient of `(1/T)·Σ log p(x_t)` w.r.t. every mean and standard
/// deviation, component-major `(∂μ, ∂σ)`.
pub fn log_likelihood_gradient(data: &[f64], gmm: &Gmm) -> Result<(Vec<f64>, Vec<f64>), FisherError> {
    let d = gmm.dim;
    let t = data.len() / d;
    if t == 0 {
        return Err(FisherError::EmptyDescriptorSet);
    }
    let k = gmm.k();
    let mut gmu = vec![0.0; k * d];
    let mut gsig = vec![0.0; k * d];
    let mut gamma = vec![0.0; k];
    for x in data.chunks_exact(d) {
        gmm.responsibilities(x, &mut gamma);
        for c in 0..k {
            for i in 0..d {
                let var = gmm.variances[c * d + i];
                let sd = libm::sqrt(var);
                let diff = x[i] - gmm.means[c * d + i];
                gmu[c * d + i] += gamma[c] * diff / var;
                gsig[c * d + i] += gamma[c] * (diff * diff / (var * sd) - 1.0 / sd);
            }
        }
    }
    gmu.iter_mut().chain(gsig.iter_mut()).for_each(|v| *v /= t as f64);
    Ok((gmu, gsig))
}

fn accumulate_fv_stats(x: &[f64], gmm: &Gmm, gamma: &mut [f64], out: &mut [f64]) {
    let d = gmm.dim;
    let k = gmm.k();
    gmm.responsibilities(x, gamma);
    for c in 0..k {
        for i in 0..d {
            let sd = libm::sqrt(gmm.variances[c * d + i]);
            let u = (x[i] - gmm.means[c * d + i]) / sd;
            out[c * d + i] += gamma[c] * u;
            out[k * d + c * d + i] += gamma[c] * (u * u - 1.0);
        }
    }
}

fn scale_fv(sums: &mut [f64], gmm: &Gmm, t: f64) {
    let d = gmm.dim;
    let k = gmm.k();
    for c in 0..k {
        let a = 1.0 / (t * libm::sqrt(gmm.weights[c]));
        let b = 1.0 / (t * libm::sqrt(2.0 * gmm.weights[c]));
        sums[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= a);
        sums[k * d + c * d..k * d + (c + 1) * d].iter_mut().for_each(|v| *v *= b);
    }
}

/// Signed square root followed by L2 normalisation (a zero vector stays
/// zero).
pub fn normalize_fv(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = if *x < 0.0 { -libm::sqrt(-*x) } else { libm::sqrt(*x) };
    }
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Fisher-information normalised gradient blocks `[G_μ; G_σ]` before
/// power and L2 normalisation. Descriptors are summed in a canonical order,
/// so the result does not depend on their order.
pub fn fisher_vector_unnormalized(data: &[f64], gmm: &Gmm) -> Result<Vec<f64>, FisherError> {
    let d = gmm.dim;
    let t = data.len() / d;
    if t == 0 {
        return Err(FisherError::EmptyDescriptorSet);
    }
    let mut rows: Vec<&[f64]> = data.chunks_exact(d).collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut out = vec![0.0; 2 * gmm.k() * d];
    let mut gamma = vec![0.0; gmm.k()];
    for x in rows {
        accumulate_fv_stats(x, gmm, &mut gamma, &mut out);
    }
    scale_fv(&mut out, gmm, t as f64);
    Ok(out)
}

pub fn fisher_vector(data: &[f64], gmm: &Gmm) -> Result<Vec<f64>, FisherError> {
    let mut v = fisher_vector_unnormalized(data, gmm)?;
    normalize_fv(&mut v);
    Ok(v)
}

/// Centred orthonormal projection fitted by PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    pub input_dim: usize,
    pub mean: Vec<f64>,
    /// `output_dim` orthonormal rows of length `input_dim`
    pub basis: Vec<f64>,
}

impl Reducer {
    pub fn output_dim(&self) -> usize {
        self.basis.len() / self.input_dim
    }

    pub fn fit(data: &[f64], input_dim: usize, output_dim: usize) -> Result<Self, FisherError> {
        let n = data.len() / input_dim;
        if n < 2 {
            return Err(FisherError::InsufficientData { needed: 2, got: n });
        }
        if output_dim > input_dim {
            return Err(FisherError::InvalidConfig("reduced dimension exceeds input dimension"));
        }
        let mut mean = vec![0.0; input_dim];
        for x in data.chunks_exact(input_dim) {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; input_dim * input_dim];
        let mut c = vec![0.0; input_dim];
        for x in data.chunks_exact(input_dim) {
            c.iter_mut().zip(x.iter().zip(&mean)).for_each(|(ci, (v, m))| *ci = v - m);
            for i in 0..input_dim {
                let ci = c[i];
                let row = &mut cov[i * input_dim..(i + 1) * input_dim];
                for j in i..input_dim {
                    row[j] += ci * c[j];
                }
            }
        }
        for i in 0..input_dim {
            for j in i..input_dim {
                let v = cov[i * input_dim + j] / n as f64;
                cov[i * input_dim + j] = v;
                cov[j * input_dim + i] = v;
            }
        }
        let eig = top_eigen(&cov, input_dim, output_dim)?;
        let basis = eig.vectors.into_iter().flatten().collect();
        Ok(Reducer { input_dim, mean, basis })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.basis.chunks_exact(self.input_dim)) {
            *o = row.iter().zip(x.iter().zip(&self.mean)).map(|(b, (v, m))| b * (v - m)).sum();
        }
    }
}

/// Dense per-pixel encoder: every grid pixel is described by the Fisher
/// vector of the reduced descriptors in its `window × window` neighbourhood
/// (clipped at the border).
#[derive(Debug, Clone, PartialEq)]
pub struct FvEncoder {
    pub reducer: Reducer,
    pub gmm: Gmm,
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvConfig {
    pub reduced_dim: usize,
    pub gmm: GmmConfig,
    pub window: usize,
    pub stride: usize,
}

impl Default for FvConfig {
    fn default() -> Self {
        FvConfig { reduced_dim: 50, gmm: GmmConfig::default(), window: 15, stride: 2 }
    }
}

impl FvEncoder {
    /// Fits the reducer and the mixture to row-major training descriptors.
    pub fn fit(descriptors: &[f64], input_dim: usize, cfg: &FvConfig) -> Result<(Self, GmmReport), FisherError> {
        if cfg.window % 2 == 0 || cfg.window == 0 {
            return Err(FisherError::InvalidConfig("window must be odd"));
        }
        if cfg.stride == 0 {
            return Err(FisherError::InvalidConfig("stride must be positive"));
        }
        let reducer = Reducer::fit(descriptors, input_dim, cfg.reduced_dim)?;
        let mut reduced = vec![0.0; descriptors.len() / input_dim * cfg.reduced_dim];
        for (x, y) in descriptors.chunks_exact(input_dim).zip(reduced.chunks_exact_mut(cfg.reduced_dim)) {
            reducer.apply(x, y);
        }
        let (gmm, report) = fit_gmm(&reduced, cfg.reduced_dim, &cfg.gmm)?;
        Ok((FvEncoder { reducer, gmm, window: cfg.window, stride: cfg.stride }, report))
    }

    pub fn output_dim(&self) -> usize {
        2 * self.gmm.k() * self.gmm.dim
    }

    /// Normalised Fisher vectors for every pixel, pixel-major
    /// (`pixels × output_dim`).
    pub fn encode_pixels(&self, stack: &FeatureStack) -> Result<Vec<f64>, FisherError> {
        if stack.channels() != self.reducer.input_dim {
            return Err(ImageError::DimMismatch(format!(
                "encoder expects {} channels, stack has {}",
                self.reducer.input_dim,
                stack.channels()
            ))
            .into());
        }
        let (w, h) = (stack.width(), stack.height());
        let dim = self.output_dim();
        let d = self.gmm.dim;
        // per-pixel sufficient statistics
        let mut stats = vec![0.0; dim * w * h];
        let mut x = vec![0.0; stack.channels()];
        let mut y = vec![0.0; d];
        let mut gamma = vec![0.0; self.gmm.k()];
        let mut one = vec![0.0; dim];
        for p in 0..w * h {
            stack.pixel_into(p, &mut x);
            self.reducer.apply(&x, &mut y);
            one.iter_mut().for_each(|v| *v = 0.0);
            accumulate_fv_stats(&y, &self.gmm, &mut gamma, &mut one);
            for (j, v) in one.iter().enumerate() {
                stats[j * w * h + p] = *v;
            }
        }
        let gx: Vec<usize> = (0..w).step_by(self.stride).collect();
        let gy: Vec<usize> = (0..h).step_by(self.stride).collect();
        let r = self.window / 2;
        let mut grid = vec![0.0; gx.len() * gy.len() * dim];
        let mut integral = vec![0.0; (w + 1) * (h + 1)];
        for j in 0..dim {
            let plane = &stats[j * w * h..(j + 1) * w * h];
            for yy in 0..h {
                let mut row = 0.0;
                for xx in 0..w {
                    row += plane[yy * w + xx];
                    integral[(yy + 1) * (w + 1) + xx + 1] = integral[yy * (w + 1) + xx + 1] + row;
                }
            }
            for (iy, &cy) in gy.iter().enumerate() {
                let (y0, y1) = (cy.saturating_sub(r), (cy + r + 1).min(h));
                for (ix, &cx) in gx.iter().enumerate() {
                    let (x0, x1) = (cx.saturating_sub(r), (cx + r + 1).min(w));
                    let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                        + integral[y0 * (w + 1) + x0];
                    grid[(iy * gx.len() + ix) * dim + j] = s;
                }
            }
        }
        for (iy, &cy) in gy.iter().enumerate() {
            let ty = ((cy + r + 1).min(h) - cy.saturating_sub(r)) as f64;
            for (ix, &cx) in gx.iter().enumerate() {
                let tx = ((cx + r + 1).min(w) - cx.saturating_sub(r)) as f64;
                let v = &mut grid[(iy * gx.len() + ix) * dim..(iy * gx.len() + ix + 1) * dim];
                scale_fv(v, &self.gmm, tx * ty);
                normalize_fv(v);
            }
        }
        let mut out = vec![0.0; w * h * dim];
        let s = self.stride;
        for yy in 0..h {
            let iy = nearest_grid(yy, s, gy.len());
            for xx in 0..w {
                let ix = nearest_grid(xx, s, gx.len());
                let src = &grid[(iy * gx.len() + ix) * dim..(iy * gx.len() + ix + 1) * dim];
                out[(yy * w + xx) * dim..(yy * w + xx + 1) * dim].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Fisher vectors as a channel-major feature stack (`fv{j}` channels).
    pub fn encode_image(&self, stack: &FeatureStack) -> Result<FeatureStack, FisherError> {
        let pix = self.encode_pixels(stack)?;
        let (w, h) = (stack.width(), stack.height());
        let dim = self.output_dim();
        let mut data = vec![0.0f32; dim * w * h];
        for (p, v) in pix.chunks_exact(dim).enumerate() {
            for (j, x) in v.iter().enumerate() {
                data[j * w * h + p] = *x as f32;
            }
        }
        let names = (0..dim).map(|j| format!("fv{j:03}")).collect();
        Ok(FeatureStack::new(w, h, names, data)?)
    }
}

fn nearest_grid(i: usize, stride: usize, n: usize) -> usize {
    let lo = i / stride;
    let hi = (lo + 1).min(n - 1);
    if (hi * stride).abs_diff(i) < i - lo * stride {
        hi
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_data(n: usize, d: usize, centers: &[(f64, f64)], seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * d);
        for t in 0..n {
            let (c, s) = centers[t % centers.len()];
            for _ in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(c + s * z);
            }
        }
        out
    }

    #[test]
    fn single_component_is_closed_form() {
        let d = 3;
        let data = normal_data(200, d, &[(1.0, 2.0)], 3);
        let (g, _) = fit_gmm(&data, d, &GmmConfig { k: 1, ..Default::default() }).unwrap();
        let n = 200.0;
        for i in 0..d {
            let m: f64 = data.chunks_exact(d).map(|x| x[i]).sum::<f64>() / n;
            let v: f64 = data.chunks_exact(d).map(|x| (x[i] - m).powi(2)).sum::<f64>() / n;
            assert!((g.means[i] - m).abs() < 1e-10);
            assert!((g.variances[i] - v).abs() < 1e-10);
        }
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn two_separated_clusters() {
        let data = normal_data(400, 2, &[(-5.0, 0.5), (5.0, 0.5)], 11);
        let (g, rep) = fit_gmm(&data, 2, &GmmConfig { k: 2, ..Default::default() }).unwrap();
        let mut m: Vec<f64> = (0..2).map(|k| g.mean(k)[0]).collect();
        m.sort_by(f64::total_cmp);
        assert!((m[0] + 5.0).abs() < 1.0 && (m[1] - 5.0).abs() < 1.0);
        assert!(rep.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn insufficient_data() {
        let data = vec![0.0; 10 * 3];
        assert!(matches!(fit_gmm(&data, 3, &GmmConfig::default()), Err(FisherError::InsufficientData { .. })));
    }

    #[test]
    fn mean_block_vanishes_at_the_mode() {
        let g = Gmm { dim: 2, weights: vec![1.0], means: vec![0.5, -1.0], variances: vec![2.0, 0.5] };
        let data = [0.5, -1.0, 0.5, -1.0, 0.5, -1.0];
        let v = fisher_vector_unnormalized(&data, &g).unwrap();
        assert_eq!(&v[0..2], &[0.0, 0.0]);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn normalized_fv_has_unit_norm_and_ignores_order() {
        let g = Gmm {
            dim: 2,
            weights: vec![0.3, 0.7],
            means: vec![0.0, 0.0, 1.0, 1.0],
            variances: vec![1.0, 1.0, 0.5, 2.0],
        };
        let data = [0.1, 0.2, -0.4, 1.5, 0.9, 0.8, 2.0, -1.0];
        let v = fisher_vector(&data, &g).unwrap();
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let shuffled = [2.0, -1.0, 0.9, 0.8, 0.1, 0.2, -0.4, 1.5];
        assert_eq!(v, fisher_vector(&shuffled, &g).unwrap());
        assert_eq!(fisher_vector(&[], &g), Err(FisherError::EmptyDescriptorSet));
    }

    #[test]
    fn nearest_grid_rounds_to_closest_sample() {
        assert_eq!(nearest_grid(0, 2, 4), 0);
        assert_eq!(nearest_grid(1, 2, 4), 0);
        assert_eq!(nearest_grid(2, 2, 4), 1);
        assert_eq!(nearest_grid(7, 2, 4), 3);
        assert_eq!(nearest_grid(5, 3, 3), 2);
    }
}
