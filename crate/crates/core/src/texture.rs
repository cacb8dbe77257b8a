//! Maximum-response-8 texture filter bank.
//!
//! 38 kernels on a 49×49 support: edge (first derivative) and bar (second
//! derivative) anisotropic Gaussians at three scales and six orientations,
//! plus an isotropic Gaussian and a Laplacian of Gaussian. Taking the
//! maximum absolute response over orientation leaves 8 rotation invariant
//! responses; pooling over scale leaves the 4 texture channels.

use alloc::vec::Vec;

use crate::filter::correlate_many;
use crate::image::{FeatureStack, ImageError, Plane};

pub const SUPPORT: usize = 49;
pub const NUM_ORIENTATIONS: usize = 6;
/// `(σx, σy)` of the oriented filters
pub const SCALES: [(f64, f64); 3] = [(1.0, 3.0), (2.0, 6.0), (4.0, 12.0)];
pub const ISOTROPIC_SIGMA: f64 = 10.0;

pub const TEXTURE_CHANNELS: [&str; 4] = ["edge", "bar", "gaussian", "log"];

#[derive(Debug, Clone, PartialEq)]
pub struct Mr8Bank {
    /// `edges[s][r]`, orientation `r·30°`
    pub edges: Vec<Vec<Plane>>,
    pub bars: Vec<Vec<Plane>>,
    pub gaussian: Plane,
    pub log: Plane,
}

fn gauss1d(sigma: f64, x: f64, order: u8) -> f64 {
    let v = sigma * sigma;
    let g = libm::exp(-x * x / (2.0 * v)) / libm::sqrt(2.0 * core::f64::consts::PI * v);
    match order {
        0 => g,
        1 => -g * x / v,
        _ => g * (x * x - v) / (v * v),
    }
}

fn zero_mean(mut k: Plane) -> Plane {
    let mean = k.mean();
    k.data.iter_mut().for_each(|v| *v -= mean);
    k
}

fn l1(k: &Plane) -> f64 {
    k.data.iter().map(|v| v.abs()).sum()
}

fn zero_mean_l1(k: Plane) -> Plane {
    let mut k = zero_mean(k);
    let n = l1(&k);
    k.data.iter_mut().for_each(|v| *v /= n);
    k
}

fn oriented(sx: f64, sy: f64, theta: f64, order: u8) -> Plane {
    let half = (SUPPORT / 2) as f64;
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    zero_mean(Plane::from_fn(SUPPORT, SUPPORT, |i, j| {
        let (x, y) = (i as f64 - half, j as f64 - half);
        let (u, v) = (c * x - s * y, s * x + c * y);
        gauss1d(sy, u, 0) * gauss1d(sx, v, order)
    }))
}

impl Mr8Bank {
    pub fn new() -> Self {
        let half_turn = NUM_ORIENTATIONS / 2;
        let build = |order: u8| -> Vec<Vec<Plane>> {
            SCALES
                .iter()
                .map(|&(sx, sy)| {
                    let mut row: Vec<Plane> = (0..half_turn)
                        .map(|r| oriented(sx, sy, core::f64::consts::PI * r as f64 / NUM_ORIENTATIONS as f64, order))
                        .collect();
                    // the sampled L1 norm of a thin kernel depends on its
                    // angle to the grid, so every orientation shares the
                    // axis-aligned norm
                    let norm = l1(&row[0]);
                    for k in &mut row {
                        k.data.iter_mut().for_each(|v| *v /= norm);
                    }
                    // orientations 90°..150° are exact grid rotations, which
                    // makes the orientation maximum exactly invariant to
                    // quarter turns
                    for r in 0..half_turn {
                        let rotated = row[r].rot90();
                        row.push(rotated);
                    }
                    row
                })
                .collect()
        };
        let half = (SUPPORT / 2) as f64;
        let s2 = ISOTROPIC_SIGMA * ISOTROPIC_SIGMA;
        let mut gaussian = Plane::from_fn(SUPPORT, SUPPORT, |i, j| {
            let (x, y) = (i as f64 - half, j as f64 - half);
            libm::exp(-(x * x + y * y) / (2.0 * s2))
        });
        let total: f64 = gaussian.data.iter().sum();
        gaussian.data.iter_mut().for_each(|v| *v /= total);
        let log = zero_mean_l1(Plane::from_fn(SUPPORT, SUPPORT, |i, j| {
            let (x, y) = (i as f64 - half, j as f64 - half);
            let r2 = x * x + y * y;
            (r2 - 2.0 * s2) / (s2 * s2) * libm::exp(-r2 / (2.0 * s2))
        }));
        Mr8Bank { edges: build(1), bars: build(2), gaussian, log }
    }

    pub fn kernel_count(&self) -> usize {
        self.edges.iter().chain(&self.bars).map(Vec::len).sum::<usize>() + 2
    }
}

impl Default for Mr8Bank {
    fn default() -> Self {
        Self::new()
    }
}

fn max_abs_over(responses: &[Plane]) -> Plane {
    let mut out = Plane::zeros(responses[0].width, responses[0].height);
    for r in responses {
        for (o, v) in out.data.iter_mut().zip(&r.data) {
            *o = o.max(v.abs());
        }
    }
    out
}

/// The 8 rotation invariant responses, ordered edge σ1..σ3, bar σ1..σ3,
/// Gaussian, LoG.
pub fn mr8_responses(img: &Plane, bank: &Mr8Bank) -> Vec<Plane> {
    let mut out = Vec::with_capacity(8);
    for family in [&bank.edges, &bank.bars] {
        for per_scale in family.iter() {
            out.push(max_abs_over(&correlate_many(img, per_scale)));
        }
    }
    out.extend(correlate_many(img, &[bank.gaussian.clone(), bank.log.clone()]));
    out
}

/// Four texture channels: edge and bar maxima over scale, Gaussian, LoG.
pub fn texture_feature(img: &Plane, bank: &Mr8Bank) -> Result<FeatureStack, ImageError> {
    let r = mr8_responses(img, bank);
    let pool = |a: &[Plane]| {
        let mut out = a[0].clone();
        for p in &a[1..] {
            for (o, v) in out.data.iter_mut().zip(&p.data) {
                *o = o.max(*v);
            }
        }
        out
    };
    let mut stack = FeatureStack::empty(img.width, img.height);
    stack.push(TEXTURE_CHANNELS[0], &pool(&r[0..3]))?;
    stack.push(TEXTURE_CHANNELS[1], &pool(&r[3..6]))?;
    stack.push(TEXTURE_CHANNELS[2], &r[6])?;
    stack.push(TEXTURE_CHANNELS[3], &r[7])?;
    Ok(stack)
}
