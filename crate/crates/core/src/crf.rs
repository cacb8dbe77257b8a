//! Pairwise CRF on the 4-connected pixel grid.
//!
//! Energies are `E(x) = Σ_p θ_p(x_p) + Σ_pq w_pq·[x_p ≠ x_q]` with
//! contrast-sensitive Potts weights `w_pq = w0 + w1·exp(−β·(I_p − I_q)²)`.
//!
//! Inference is tree-reweighted: the grid is split into the forest of
//! horizontal chains and the forest of vertical chains, each carrying the
//! pairwise terms with weight 2 (edge appearance ρ = 1/2), and the
//! unaries are shared through a per-node reparameterisation `δ`:
//! `θ_H = −θ + δ`, `θ_V = −θ − δ`. Each node update minimises the convex
//! bound `½·log Z_H + ½·log Z_V ≥ log Z` exactly in closed form, so the
//! reported free-energy lower bound `−(½·log Z_H + ½·log Z_V)` never
//! decreases.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::{FeatureStack, ImageError, LabelMap, Plane};
use crate::metrics::{jaccard, MetricsError};
use crate::optim::{lbfgs, LbfgsConfig, LbfgsReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CrfError {
    #[error("non-finite energy")]
    NonFiniteEnergy,
    #[error("TRW bound decreased at sweep {sweep}: {before} -> {after}")]
    BoundDecreased { sweep: usize, before: f64, after: f64 },
    #[error("class {0} has no training pixels")]
    ClassMissing(u8),
    #[error("empty validation set")]
    EmptyValidationSet,
    #[error("invalid CRF parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGraph {
    pub width: usize,
    pub height: usize,
}

impl GridGraph {
    pub fn edge_count(&self) -> usize {
        self.width * self.height.saturating_sub(1) + self.height * self.width.saturating_sub(1)
    }

    /// Edges `(p, q)` with `p < q`, horizontal ones first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let (w, h) = (self.width, self.height);
        let mut e = Vec::with_capacity(self.edge_count());
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                e.push((y * w + x, y * w + x + 1));
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                e.push((y * w + x, (y + 1) * w + x));
            }
        }
        e
    }
}

/// Per-pixel label energies, pixel-major (`data[p·labels + l]`).
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryEnergies {
    pub width: usize,
    pub height: usize,
    pub labels: usize,
    pub data: Vec<f64>,
}

impl UnaryEnergies {
    pub fn new(width: usize, height: usize, labels: usize, data: Vec<f64>) -> Result<Self, CrfError> {
        if data.len() != width * height * labels || labels == 0 {
            return Err(ImageError::DimMismatch(format!(
                "{} energies for a {}x{} grid with {} labels",
                data.len(),
                width,
                height,
                labels
            ))
            .into());
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CrfError::NonFiniteEnergy);
        }
        Ok(UnaryEnergies { width, height, labels, data })
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.labels..(p + 1) * self.labels]
    }

    pub fn graph(&self) -> GridGraph {
        GridGraph { width: self.width, height: self.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseParams {
    pub w0: f64,
    pub w1: f64,
    pub beta: f64,
}

impl Default for PairwiseParams {
    fn default() -> Self {
        PairwiseParams { w0: 0.0, w1: 0.0, beta: 1.0 }
    }
}

impl PairwiseParams {
    pub fn validate(&self) -> Result<(), CrfError> {
        if !(self.w0 >= 0.0 && self.w0.is_finite()) || !(self.w1 >= 0.0 && self.w1.is_finite()) {
            return Err(CrfError::InvalidParams("w0 and w1 must be finite and non-negative"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(CrfError::InvalidParams("beta must be positive"));
        }
        Ok(())
    }

    /// Cost of a label change across an edge with intensities `ip`, `iq`.
    #[inline]
    pub fn weight(&self, ip: f64, iq: f64) -> f64 {
        let d = ip - iq;
        self.w0 + self.w1 * libm::exp(-self.beta * d * d)
    }
}

/// Unary weights `(labels × (dim + 1))`, the last column being the bias,
/// and pairwise parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub pairwise: PairwiseParams,
}

impl CrfModel {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        CrfModel {
            num_classes,
            feature_dim,
            weights: vec![0.0; num_classes * (feature_dim + 1)],
            pairwise: PairwiseParams::default(),
        }
    }

    fn scores_into(&self, f: &[f64], out: &mut [f64]) {
        let stride = self.feature_dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * stride..(c + 1) * stride];
            *o = w[..self.feature_dim].iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + w[self.feature_dim];
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Softmax of `−energies`, written into `out`.
pub fn softmax_neg(energies: &[f64], out: &mut [f64]) {
    let m = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut s = 0.0;
    for (o, e) in out.iter_mut().zip(energies) {
        *o = libm::exp(m - e);
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Negative log-softmax of the class scores for pixel-major features.
pub fn unary_from_features(
    features: &[f64],
    width: usize,
    height: usize,
    model: &CrfModel,
) -> Result<UnaryEnergies, CrfError> {
    let d = model.feature_dim;
    if features.len() != width * height * d {
        return Err(ImageError::DimMismatch(format!(
            "{} feature values for {}x{} pixels of dimension {}",
            features.len(),
            width,
            height,
            d
        ))
        .into());
    }
    let l = model.num_classes;
    let mut data = vec![0.0; width * height * l];
    let mut s = vec![0.0; l];
    for (f, e) in features.chunks_exact(d.max(1)).zip(data.chunks_exact_mut(l)) {
        model.scores_into(f, &mut s);
        let z = log_sum_exp(&s);
        for (ei, si) in e.iter_mut().zip(&s) {
            *ei = z - si;
        }
    }
    UnaryEnergies::new(width, height, l, data)
}

pub fn unary_potentials(fv: &FeatureStack, model: &CrfModel) -> Result<UnaryEnergies, CrfError> {
    if fv.channels() != model.feature_dim {
        return Err(ImageError::DimMismatch(format!(
            "CRF expects {} feature channels, stack has {}",
            model.feature_dim,
            fv.channels()
        ))
        .into());
    }
    let mut feats = vec![0.0; fv.pixels() * fv.channels()];
    for (p, f) in feats.chunks_exact_mut(fv.channels().max(1)).enumerate() {
        fv.pixel_into(p, f);
    }
    unary_from_features(&feats, fv.width(), fv.height(), model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrwOptions {
    pub max_iters: usize,
    /// stop when no reparameterisation entry moves more than this in a sweep
    pub tol: f64,
}

impl Default for TrwOptions {
    fn default() -> Self {
        TrwOptions { max_iters: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrwResult {
    pub width: usize,
    pub height: usize,
    pub labels: usize,
    /// pixel-major marginals, each pixel summing to one
    pub marginals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// free-energy lower bound after every forward pass
    pub lower_bounds: Vec<f64>,
}

/// Log of `Σ_x exp(a(x))·ψ(x, y)` for the Potts kernel `ψ = exp(−c·[x≠y])`,
/// normalised to max 0; returns the removed log-scale.
fn potts_message(a: &[f64], coupling: f64, out: &mut [f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = libm::exp(-coupling);
    let s: f64 = a.iter().map(|v| libm::exp(v - m)).sum();
    let mut top = f64::NEG_INFINITY;
    for (o, v) in out.iter_mut().zip(a) {
        let t = libm::exp(v - m);
        *o = libm::log(t * (1.0 - e) + e * s);
        top = top.max(*o);
    }
    out.iter_mut().for_each(|o| *o -= top);
    m + top
}

struct Trw {
    w: usize,
    h: usize,
    l: usize,
    theta: Vec<f64>,
    delta: Vec<f64>,
    // 2·w_pq for the edge to the right / below
    hc: Vec<f64>,
    vc: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
}

impl Trw {
    /// Left-to-right, top-to-bottom pass refreshing `left`/`up`; returns the
    /// bound value and the largest change of `δ`.
    fn forward(&mut self, update: bool) -> (f64, f64) {
        let (w, h, l) = (self.w, self.h, self.l);
        let mut a = vec![0.0; l];
        let mut msg = vec![0.0; l];
        let mut row_scale = 0.0;
        let mut col_scale = vec![0.0; w];
        let mut log_z = 0.0;
        let mut change = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let o = p * l;
                if update {
                    change = change.max(self.update_node(p));
                }
                if x == 0 {
                    row_scale = 0.0;
                }
                for i in 0..l {
                    a[i] = self.theta[o + i] + self.delta[o + i] + self.left[o + i];
                }
                if x + 1 < w {
                    row_scale += potts_message(&a, self.hc[p], &mut msg);
                    self.left[o + l..o + 2 * l].copy_from_slice(&msg);
                } else {
                    log_z += 0.5 * (row_scale + log_sum_exp(&a));
                }
                for i in 0..l {
                    a[i] = self.theta[o + i] - self.delta[o + i] + self.up[o + i];
                }
                if y + 1 < h {
                    col_scale[x] += potts_message(&a, self.vc[p], &mut msg);
                    self.up[o + w * l..o + w * l + l].copy_from_slice(&msg);
                } else {
                    log_z += 0.5 * (col_scale[x] + log_sum_exp(&a));
                }
            }
        }
        (-log_z, change)
    }

    fn backward(&mut self, update: bool) -> f64 {
        let (w, h, l) = (self.w, self.h, self.l);
        let mut a = vec![0.0; l];
        let mut msg = vec![0.0; l];
        let mut change = 0.0f64;
        for p in (0..w * h).rev() {
            let (x, y) = (p % w, p / w);
            let o = p * l;
            if update {
                change = change.max(self.update_node(p));
            }
            if x > 0 {
                for i in 0..l {
                    a[i] = self.theta[o + i] + self.delta[o + i] + self.right[o + i];
                }
                potts_message(&a, self.hc[p - 1], &mut msg);
                self.right[o - l..o].copy_from_slice(&msg);
            }
            if y > 0 {
                for i in 0..l {
                    a[i] = self.theta[o + i] - self.delta[o + i] + self.down[o + i];
                }
                potts_message(&a, self.vc[p - w], &mut msg);
                self.down[o - w * l..o - w * l + l].copy_from_slice(&msg);
            }
        }
        change
    }

    /// Closed-form minimiser of the bound in `δ_p` given all messages.
    fn update_node(&mut self, p: usize) -> f64 {
        let o = p * self.l;
        let mut change = 0.0f64;
        for i in o..o + self.l {
            let d = 0.5 * ((self.up[i] + self.down[i]) - (self.left[i] + self.right[i]));
            change = change.max((d - self.delta[i]).abs());
            self.delta[i] = d;
        }
        change
    }

    fn marginals(&self) -> Vec<f64> {
        let l = self.l;
        let mut out = vec![0.0; self.theta.len()];
        let mut bh = vec![0.0; l];
        let mut bv = vec![0.0; l];
        for p in 0..self.w * self.h {
            let o = p * l;
            for i in 0..l {
                bh[i] = -(self.theta[o + i] + self.delta[o + i] + self.left[o + i] + self.right[o + i]);
                bv[i] = -(self.theta[o + i] - self.delta[o + i] + self.up[o + i] + self.down[o + i]);
            }
            let mut mh = vec![0.0; l];
            let mut mv = vec![0.0; l];
            softmax_neg(&bh, &mut mh);
            softmax_neg(&bv, &mut mv);
            for i in 0..l {
                out[o + i] = 0.5 * (mh[i] + mv[i]);
            }
        }
        out
    }
}

/// Approximate pixel marginals by sequential tree-reweighted message
/// passing.
pub fn trw_marginals(
    unary: &UnaryEnergies,
    pairwise: &PairwiseParams,
    intensity: &Plane,
    opts: &TrwOptions,
) -> Result<TrwResult, CrfError> {
    pairwise.validate()?;
    let (w, h, l) = (unary.width, unary.height, unary.labels);
    if intensity.dims() != (w, h) {
        return Err(ImageError::DimMismatch(format!(
            "intensity {}x{} vs unaries {}x{}",
            intensity.width, intensity.height, w, h
        ))
        .into());
    }
    if unary.data.iter().any(|v| !v.is_finite()) {
        return Err(CrfError::NonFiniteEnergy);
    }
    let n = w * h;
    let mut hc = vec![0.0; n];
    let mut vc = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                hc[p] = 2.0 * pairwise.weight(intensity.data[p], intensity.data[p + 1]);
            }
            if y + 1 < h {
                vc[p] = 2.0 * pairwise.weight(intensity.data[p], intensity.data[p + w]);
            }
        }
    }
    if hc.iter().chain(&vc).any(|v| !v.is_finite()) {
        return Err(CrfError::NonFiniteEnergy);
    }
    let mut t = Trw {
        w,
        h,
        l,
        theta: unary.data.iter().map(|e| -e).collect(),
        delta: vec![0.0; n * l],
        hc,
        vc,
        left: vec![0.0; n * l],
        right: vec![0.0; n * l],
        up: vec![0.0; n * l],
        down: vec![0.0; n * l],
    };
    // the initial pass fills left/up; right/down start uniform
    let mut lower_bounds = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    t.forward(false);
    t.backward(false);
    for sweep in 0..opts.max_iters {
        let (bound, c1) = t.forward(true);
        if let Some(&prev) = lower_bounds.last() {
            check_bound(sweep, prev, bound)?;
        }
        lower_bounds.push(bound);
        let c2 = t.backward(true);
        iterations = sweep + 1;
        if c1.max(c2) < opts.tol {
            converged = true;
            break;
        }
    }
    let (bound, _) = t.forward(false);
    if let Some(&prev) = lower_bounds.last() {
        check_bound(iterations, prev, bound)?;
    }
    lower_bounds.push(bound);
    Ok(TrwResult { width: w, height: h, labels: l, marginals: t.marginals(), converged, iterations, lower_bounds })
}

fn check_bound(sweep: usize, before: f64, after: f64) -> Result<(), CrfError> {
    if after < before - 1e-9 * (1.0 + before.abs()) {
        return Err(CrfError::BoundDecreased { sweep, before, after });
    }
    Ok(())
}

/// Per-pixel argmax; ties go to the smaller label.
pub fn decode(marginals: &[f64], width: usize, height: usize, labels: usize) -> Result<LabelMap, CrfError> {
    if marginals.len() != width * height * labels {
        return Err(ImageError::DimMismatch(format!("{} marginals for {}x{}x{}", marginals.len(), width, height, labels)).into());
    }
    let out = marginals
        .chunks_exact(labels)
        .map(|m| {
            let mut best = 0;
            for (i, &v) in m.iter().enumerate().skip(1) {
                if v > m[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMap::new(width, height, 1, labels as u8, out)?)
}

impl TrwResult {
    pub fn decode(&self) -> Result<LabelMap, CrfError> {
        decode(&self.marginals, self.width, self.height, self.labels)
    }
}

/// Seeded class-balanced subsample: at most `cap` pixel indices per class,
/// returned in ascending order.
pub fn balanced_subsample(labels: &[u8], num_classes: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l as usize == c).map(|(i, _)| i).collect();
        if idx.len() > cap {
            idx.shuffle(&mut rng);
            idx.truncate(cap);
        }
        out.extend(idx);
    }
    out.sort_unstable();
    out
}

/// Mean multinomial logistic loss plus `l2_reg·‖w‖²`; writes the gradient.
pub fn unary_loss(
    weights: &[f64],
    features: &[f64],
    dim: usize,
    labels: &[u8],
    num_classes: usize,
    l2_reg: f64,
    grad: &mut [f64],
) -> f64 {
    let stride = dim + 1;
    let n = labels.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut s = vec![0.0; num_classes];
    let mut loss = 0.0;
    for (f, &y) in features.chunks_exact(dim.max(1)).zip(labels) {
        for (c, sc) in s.iter_mut().enumerate() {
            let w = &weights[c * stride..(c + 1) * stride];
            *sc = w[..dim].iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + w[dim];
        }
        let z = log_sum_exp(&s);
        loss += z - s[y as usize];
        for c in 0..num_classes {
            let r = libm::exp(s[c] - z) - if c == y as usize { 1.0 } else { 0.0 };
            let g = &mut grad[c * stride..(c + 1) * stride];
            for (gi, fi) in g[..dim].iter_mut().zip(f) {
                *gi += r * fi;
            }
            g[dim] += r;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    let mut reg = 0.0;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g * inv + 2.0 * l2_reg * w;
        reg += w * w;
    }
    loss + l2_reg * reg
}

/// Fits the unary weights by L-BFGS on pixel-major training features.
pub fn train_unary(
    features: &[f64],
    dim: usize,
    labels: &[u8],
    num_classes: usize,
    l2_reg: f64,
    cfg: &LbfgsConfig,
) -> Result<(CrfModel, LbfgsReport), CrfError> {
    if features.len() != labels.len() * dim {
        return Err(ImageError::DimMismatch(format!("{} features for {} labels of dim {}", features.len(), labels.len(), dim)).into());
    }
    if !(l2_reg >= 0.0 && l2_reg.is_finite()) {
        return Err(CrfError::InvalidParams("l2_reg must be non-negative"));
    }
    for c in 0..num_classes {
        if !labels.iter().any(|&l| l as usize == c) {
            return Err(CrfError::ClassMissing(c as u8));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(ImageError::LabelOutOfRange { label: bad, num_classes: num_classes as u8 }.into());
    }
    let x0 = vec![0.0; num_classes * (dim + 1)];
    let (w, report) = lbfgs(x0, cfg, |w, g| unary_loss(w, features, dim, labels, num_classes, l2_reg, g));
    let mut model = CrfModel::zeros(num_classes, dim);
    model.weights = w;
    Ok((model, report))
}

/// Candidate values per pairwise parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseGrid {
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for PairwiseGrid {
    fn default() -> Self {
        PairwiseGrid {
            w0: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6],
            w1: vec![0.0, 0.1, 0.2, 0.4, 0.8, 1.6],
            beta: vec![2.0, 8.0, 32.0, 128.0],
        }
    }
}

pub struct ValidationItem<'a> {
    pub unary: &'a UnaryEnergies,
    pub intensity: &'a Plane,
    pub truth: &'a LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSearch {
    pub best: PairwiseParams,
    pub score: f64,
    /// every evaluated candidate with its score, in evaluation order
    pub trace: Vec<(PairwiseParams, f64)>,
}

/// Mean Jaccard over `classes` and items after TRW decoding.
pub fn validation_score(
    items: &[ValidationItem<'_>],
    params: &PairwiseParams,
    classes: &[u8],
    opts: &TrwOptions,
) -> Result<f64, CrfError> {
    let mut total = 0.0;
    for it in items {
        let labels = trw_marginals(it.unary, params, it.intensity, opts)?.decode()?;
        for &c in classes {
            total += jaccard(it.truth, &labels, c)?;
        }
    }
    Ok(total / (items.len() * classes.len()) as f64)
}

/// Coordinate search over the grid maximising mean validation Jaccard;
/// a move is taken only when it strictly improves the score.
pub fn train_pairwise(
    items: &[ValidationItem<'_>],
    grid: &PairwiseGrid,
    classes: &[u8],
    opts: &TrwOptions,
) -> Result<PairwiseSearch, CrfError> {
    if items.is_empty() {
        return Err(CrfError::EmptyValidationSet);
    }
    if grid.w0.is_empty() || grid.w1.is_empty() || grid.beta.is_empty() || classes.is_empty() {
        return Err(CrfError::InvalidParams("every grid axis needs a candidate"));
    }
    let mut cache: BTreeMap<[u64; 3], f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut eval = |p: PairwiseParams| -> Result<f64, CrfError> {
        let key = [p.w0.to_bits(), p.w1.to_bits(), p.beta.to_bits()];
        if let Some(&s) = cache.get(&key) {
            return Ok(s);
        }
        let s = validation_score(items, &p, classes, opts)?;
        cache.insert(key, s);
        trace.push((p, s));
        Ok(s)
    };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = PairwiseParams { w0: min(&grid.w0), w1: min(&grid.w1), beta: grid.beta[0] };
    let mut score = eval(best)?;
    for _round in 0..5 {
        let mut moved = false;
        for axis in 0..3 {
            let cands = match axis {
                0 => &grid.w0,
                1 => &grid.w1,
                _ => &grid.beta,
            };
            for &v in cands {
                let mut p = best;
                match axis {
                    0 => p.w0 = v,
                    1 => p.w1 = v,
                    _ => p.beta = v,
                }
                let s = eval(p)?;
                if s > score {
                    score = s;
                    best = p;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(PairwiseSearch { best, score, trace })
}
