//! Cascaded PCA filter banks learned from mean-removed multi-channel
//! patches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::reflect_index;
use crate::image::{FeatureStack, ImageError};
use crate::linalg::{top_eigen, LinalgError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcaNetError {
    #[error("image {width}x{height} smaller than the {patch}x{patch} patch")]
    ImageTooSmall { width: usize, height: usize, patch: usize },
    #[error("patches carry no variance")]
    ZeroVariance,
    #[error("invalid PCANet configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no training stacks")]
    NoTrainingData,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaNetConfig {
    /// filters per layer
    pub filters: Vec<usize>,
    /// odd patch side length
    pub patch: usize,
    /// fraction of valid patch positions sampled per image, in `(0, 1]`
    pub sample_rate: f64,
    /// hard cap on patches per layer
    pub max_patches: usize,
    /// absolute value between layers
    pub rectify: bool,
    pub seed: u64,
}

impl Default for PcaNetConfig {
    fn default() -> Self {
        PcaNetConfig {
            filters: vec![40, 30, 20, 10],
            patch: 5,
            sample_rate: 1.0,
            max_patches: 2_000_000,
            rectify: false,
            seed: 0,
        }
    }
}

impl PcaNetConfig {
    pub fn validate(&self) -> Result<(), PcaNetError> {
        if self.patch % 2 == 0 || self.patch == 0 {
            return Err(PcaNetError::InvalidConfig("patch size must be odd"));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(PcaNetError::InvalidConfig("every layer needs at least one filter"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(PcaNetError::InvalidConfig("sample rate must lie in (0, 1]"));
        }
        if self.max_patches == 0 {
            return Err(PcaNetError::InvalidConfig("patch cap must be positive"));
        }
        Ok(())
    }
}

/// Mean-removed patches, one row of `dim` values per patch. Element
/// `c·p² + dy·p + dx` holds channel `c` at offset `(dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PatchMatrix {
    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_size(stack: &FeatureStack, patch: usize) -> Result<(), PcaNetError> {
    if stack.width() < patch || stack.height() < patch {
        return Err(PcaNetError::ImageTooSmall { width: stack.width(), height: stack.height(), patch });
    }
    Ok(())
}

fn read_patch(stack: &FeatureStack, patch: usize, x0: usize, y0: usize, out: &mut [f64]) {
    let w = stack.width();
    let pp = patch * patch;
    for c in 0..stack.channels() {
        let plane = stack.plane(c);
        for dy in 0..patch {
            let row = &plane[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + patch];
            for (dx, &v) in row.iter().enumerate() {
                out[c * pp + dy * patch + dx] = v as f64;
            }
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
}

/// Valid-position patches at the given stride; each position is kept with
/// probability `sample_rate`.
pub fn extract_patches<R: Rng>(
    stack: &FeatureStack,
    patch: usize,
    stride: usize,
    sample_rate: f64,
    rng: &mut R,
) -> Result<PatchMatrix, PcaNetError> {
    check_size(stack, patch)?;
    let dim = patch * patch * stack.channels();
    let stride = stride.max(1);
    let mut data = Vec::new();
    let mut buf = vec![0.0; dim];
    for y0 in (0..=stack.height() - patch).step_by(stride) {
        for x0 in (0..=stack.width() - patch).step_by(stride) {
            if sample_rate < 1.0 && rng.gen::<f64>() >= sample_rate {
                continue;
            }
            read_patch(stack, patch, x0, y0, &mut buf);
            data.extend_from_slice(&buf);
        }
    }
    Ok(PatchMatrix { dim, data })
}

/// Streaming accumulator of `(1/N)·Σ x xᵀ`.
#[derive(Debug, Clone)]
pub struct SecondMoment {
    dim: usize,
    count: usize,
    // upper triangle of the running sum, row-major n×n
    sum: Vec<f64>,
    // pending patches stored dimension-major for contiguous dot products
    block: Vec<f64>,
    pending: usize,
}

const BLOCK: usize = 256;

impl SecondMoment {
    pub fn new(dim: usize) -> Self {
        SecondMoment { dim, count: 0, sum: vec![0.0; dim * dim], block: vec![0.0; dim * BLOCK], pending: 0 }
    }

    pub fn count(&self) -> usize {
        self.count + self.pending
    }

    pub fn add(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        for (i, &v) in x.iter().enumerate() {
            self.block[i * BLOCK + self.pending] = v;
        }
        self.pending += 1;
        if self.pending == BLOCK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let b = self.pending;
        if b == 0 {
            return;
        }
        let n = self.dim;
        for i in 0..n {
            let ri = &self.block[i * BLOCK..i * BLOCK + b];
            let row = &mut self.sum[i * n..(i + 1) * n];
            for j in i..n {
                let rj = &self.block[j * BLOCK..j * BLOCK + b];
                let mut acc = 0.0;
                for (a, c) in ri.iter().zip(rj) {
                    acc += a * c;
                }
                row[j] += acc;
            }
        }
        self.count += b;
        self.pending = 0;
    }

    /// Full symmetric matrix divided by the sample count.
    pub fn finish(mut self) -> (Vec<f64>, usize) {
        self.flush();
        let n = self.dim;
        let scale = if self.count > 0 { 1.0 / self.count as f64 } else { 0.0 };
        let mut m = self.sum;
        for i in 0..n {
            for j in i..n {
                let v = m[i * n + j] * scale;
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        (m, self.count)
    }
}

/// One learned filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaLayer {
    pub patch: usize,
    pub channels_in: usize,
    /// `k` filters, each of `channels_in·patch²` values, row-major
    pub filters: Vec<f64>,
    /// matching second-moment eigenvalues, descending
    pub eigenvalues: Vec<f64>,
    /// number of filters with a non-negligible eigenvalue; the remaining
    /// ones are degenerate
    pub rank: usize,
}

impl PcaLayer {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.channels_in * self.patch * self.patch
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        &self.filters[k * self.dim()..(k + 1) * self.dim()]
    }

    pub fn is_degenerate(&self) -> bool {
        self.rank < self.k()
    }
}

const RANK_TOLERANCE: f64 = 1e-12;

/// Leading `k` eigenvectors of a second-moment matrix as filters.
pub fn fit_pca_layer_from_moment(
    moment: &[f64],
    channels_in: usize,
    patch: usize,
    k: usize,
) -> Result<PcaLayer, PcaNetError> {
    let dim = channels_in * patch * patch;
    if k > dim {
        return Err(PcaNetError::InvalidConfig("more filters than patch dimensions"));
    }
    let trace: f64 = (0..dim).map(|i| moment[i * dim + i]).sum();
    if !(trace > 1e-300) {
        return Err(PcaNetError::ZeroVariance);
    }
    let eig = top_eigen(moment, dim, k)?;
    let top = eig.values[0].max(0.0);
    let mut filters = Vec::with_capacity(k * dim);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut rank = 0;
    for (mut v, lambda) in eig.vectors.into_iter().zip(eig.values) {
        let pivot = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = lambda.max(0.0);
        if lambda > RANK_TOLERANCE * top {
            rank += 1;
        }
        filters.extend_from_slice(&v);
        eigenvalues.push(lambda);
    }
    Ok(PcaLayer { patch, channels_in, filters, eigenvalues, rank })
}

/// Fits a layer to an explicit patch matrix.
pub fn fit_pca_layer(x: &PatchMatrix, channels_in: usize, patch: usize, k: usize) -> Result<PcaLayer, PcaNetError> {
    if x.dim != channels_in * patch * patch {
        return Err(ImageError::DimMismatch(format!("patch dimension {} vs {}", x.dim, channels_in * patch * patch)).into());
    }
    if x.count() == 0 {
        return Err(PcaNetError::ZeroVariance);
    }
    let mut acc = SecondMoment::new(x.dim);
    for i in 0..x.count() {
        acc.add(x.patch(i));
    }
    let (m, _) = acc.finish();
    fit_pca_layer_from_moment(&m, channels_in, patch, k)
}

/// Per-pixel projection of the centred, mean-removed patch onto every
/// filter, with symmetric padding so the output keeps the input size.
pub fn apply_pca_layer(stack: &FeatureStack, layer: &PcaLayer, rectify: bool) -> Result<FeatureStack, PcaNetError> {
    if stack.channels() != layer.channels_in {
        return Err(ImageError::DimMismatch(format!(
            "layer expects {} channels, stack has {}",
            layer.channels_in,
            stack.channels()
        ))
        .into());
    }
    let (w, h) = (stack.width(), stack.height());
    let p = layer.patch;
    let r = p / 2;
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let pp = p * p;
    let k = layer.k();
    let dim = layer.dim();
    let mut out = vec![0.0f64; k * w * h];
    let mut channel_sum = vec![0.0f64; pw * ph];
    let mut padded = vec![0.0f64; pw * ph];
    for c in 0..stack.channels() {
        let plane = stack.plane(c);
        for y in 0..ph {
            let sy = reflect_index(y as isize - r as isize, h);
            for x in 0..pw {
                let sx = reflect_index(x as isize - r as isize, w);
                padded[y * pw + x] = plane[sy * w + sx] as f64;
            }
        }
        for (s, v) in channel_sum.iter_mut().zip(&padded) {
            *s += v;
        }
        for dy in 0..p {
            for dx in 0..p {
                let idx = c * pp + dy * p + dx;
                for f in 0..k {
                    let coef = layer.filters[f * dim + idx];
                    let dst = &mut out[f * w * h..(f + 1) * w * h];
                    for y in 0..h {
                        let src = &padded[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                        for (d, s) in dst[y * w..(y + 1) * w].iter_mut().zip(src) {
                            *d += coef * s;
                        }
                    }
                }
            }
        }
    }
    // subtract mean(patch)·Σ filter
    let mut patch_mean = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..p {
                let row = &channel_sum[(y + dy) * pw + x..(y + dy) * pw + x + p];
                acc += row.iter().sum::<f64>();
            }
            patch_mean[y * w + x] = acc / dim as f64;
        }
    }
    let mut data = Vec::with_capacity(k * w * h);
    let mut names = Vec::with_capacity(k);
    for f in 0..k {
        let fsum: f64 = layer.filter(f).iter().sum();
        let src = &out[f * w * h..(f + 1) * w * h];
        data.extend(src.iter().zip(&patch_mean).map(|(v, m)| {
            let y = v - m * fsum;
            (if rectify { y.abs() } else { y }) as f32
        }));
        names.push(format!("f{f:02}"));
    }
    Ok(FeatureStack::new(w, h, names, data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaNetModel {
    pub layers: Vec<PcaLayer>,
    pub rectify: bool,
}

impl PcaNetModel {
    pub fn output_channels(&self) -> usize {
        self.layers.iter().map(PcaLayer::k).sum()
    }
}

/// Fits the layers greedily; layer `ℓ` is learned from the outputs of the
/// already fitted layers `< ℓ`.
pub fn fit_pcanet(stacks: &[FeatureStack], cfg: &PcaNetConfig) -> Result<PcaNetModel, PcaNetError> {
    cfg.validate()?;
    if stacks.is_empty() {
        return Err(PcaNetError::NoTrainingData);
    }
    let mut current: Vec<FeatureStack> = stacks.to_vec();
    let mut layers = Vec::with_capacity(cfg.filters.len());
    for (li, &k) in cfg.filters.iter().enumerate() {
        let c = current[0].channels();
        let dim = c * cfg.patch * cfg.patch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(li as u64));
        let mut acc = SecondMoment::new(dim);
        let mut buf = vec![0.0; dim];
        'images: for s in &current {
            check_size(s, cfg.patch)?;
            if s.channels() != c {
                return Err(ImageError::DimMismatch(format!("training stacks have {} and {} channels", c, s.channels())).into());
            }
            for y0 in 0..=s.height() - cfg.patch {
                for x0 in 0..=s.width() - cfg.patch {
                    if cfg.sample_rate < 1.0 && rng.gen::<f64>() >= cfg.sample_rate {
                        continue;
                    }
                    if acc.count() >= cfg.max_patches {
                        break 'images;
                    }
                    read_patch(s, cfg.patch, x0, y0, &mut buf);
                    acc.add(&buf);
                }
            }
        }
        if acc.count() == 0 {
            return Err(PcaNetError::ZeroVariance);
        }
        let (m, _) = acc.finish();
        let layer = fit_pca_layer_from_moment(&m, c, cfg.patch, k)?;
        if li + 1 < cfg.filters.len() {
            current = current.iter().map(|s| apply_pca_layer(s, &layer, cfg.rectify)).collect::<Result<_, _>>()?;
        }
        layers.push(layer);
    }
    Ok(PcaNetModel { layers, rectify: cfg.rectify })
}

/// Outputs of every layer, in order.
pub fn apply_pcanet_layers(stack: &FeatureStack, model: &PcaNetModel) -> Result<Vec<FeatureStack>, PcaNetError> {
    let mut outs: Vec<FeatureStack> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = outs.last().unwrap_or(stack);
        let o = apply_pca_layer(input, layer, model.rectify)?;
        outs.push(o);
    }
    Ok(outs)
}

/// Concatenation of all layer outputs (channels `l{ℓ}.f{k}`).
pub fn apply_pcanet(stack: &FeatureStack, model: &PcaNetModel) -> Result<FeatureStack, PcaNetError> {
    let outs = apply_pcanet_layers(stack, model)?;
    let (w, h) = (stack.width(), stack.height());
    let mut names = Vec::with_capacity(model.output_channels());
    let mut data = Vec::with_capacity(model.output_channels() * w * h);
    for (li, o) in outs.into_iter().enumerate() {
        let (_, _, n, d) = o.into_parts();
        names.extend(n.into_iter().map(|n| format!("l{}.{n}", li + 1)));
        data.extend(d);
    }
    Ok(FeatureStack::new(w, h, names, data)?)
}
