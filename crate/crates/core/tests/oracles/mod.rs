//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Everything here is written independently of the
//! library's algorithms and favours obviousness over speed.
#![allow(dead_code)]

use rand::Rng;
use tsshdl_core::crf::{GridGraph, PairwiseParams, UnaryEnergies};
use tsshdl_core::{LabelMap, Plane, Spacing};

fn states(u: &UnaryEnergies) -> impl Iterator<Item = Vec<usize>> + '_ {
    let (n, l) = (u.width * u.height, u.labels);
    (0..l.pow(n as u32)).map(move |mut s| {
        (0..n)
            .map(|_| {
                let v = s % l;
                s /= l;
                v
            })
            .collect()
    })
}

fn energy(u: &UnaryEnergies, pw: &PairwiseParams, img: &Plane, x: &[usize], edges: &[(usize, usize)]) -> f64 {
    let mut e: f64 = x.iter().enumerate().map(|(p, &xp)| u.data[p * u.labels + xp]).sum();
    for &(p, q) in edges {
        if x[p] != x[q] {
            e += pw.weight(img.data[p], img.data[q]);
        }
    }
    e
}

/// Exact per-pixel marginals by summing over every joint labelling.
pub fn enumerate_marginals(u: &UnaryEnergies, pw: &PairwiseParams, img: &Plane) -> Vec<f64> {
    let edges = GridGraph { width: u.width, height: u.height }.edges();
    let mut marg = vec![0.0; u.width * u.height * u.labels];
    let mut z = 0.0;
    for x in states(u) {
        let wgt = (-energy(u, pw, img, &x, &edges)).exp();
        z += wgt;
        for (p, &xp) in x.iter().enumerate() {
            marg[p * u.labels + xp] += wgt;
        }
    }
    marg.iter().map(|m| m / z).collect()
}

/// `log Z` by enumeration.
pub fn log_partition(u: &UnaryEnergies, pw: &PairwiseParams, img: &Plane) -> f64 {
    let edges = GridGraph { width: u.width, height: u.height }.edges();
    states(u).map(|x| (-energy(u, pw, img, &x, &edges)).exp()).sum::<f64>().ln()
}

/// Number of eigenvalues of the symmetric `a` below `lambda`, read off the
/// signs of the pivots of `a - λI` (Sylvester's law of inertia; the pivots
/// are ratios of consecutive leading minors of the characteristic matrix).
fn count_below(a: &[f64], n: usize, lambda: f64) -> usize {
    let mut m: Vec<f64> = a.to_vec();
    for i in 0..n {
        m[i * n + i] -= lambda;
    }
    let mut negatives = 0;
    for k in 0..n {
        let mut piv = m[k * n + k];
        if piv == 0.0 {
            piv = -1e-300;
        }
        if piv < 0.0 {
            negatives += 1;
        }
        for i in k + 1..n {
            let f = m[i * n + k] / piv;
            for j in k + 1..n {
                m[i * n + j] -= f * m[k * n + j];
            }
        }
    }
    negatives
}

/// `i`-th smallest eigenvalue: the smallest `λ` with more than `i`
/// eigenvalues below it, found by bisection on the inertia count.
fn kth_smallest(a: &[f64], n: usize, i: usize) -> f64 {
    let bound = (0..n).map(|r| (0..n).map(|c| a[r * n + c].abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(a, n, mid) > i {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 * bound {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Leading `k` eigenvalues, descending.
pub fn top_eigenvalues_by_bisection(a: &[f64], n: usize, k: usize) -> Vec<f64> {
    (0..k.min(n)).map(|j| kth_smallest(a, n, n - 1 - j)).collect()
}

/// All eigenvalues, descending.
pub fn eigenvalues_by_bisection(a: &[f64], n: usize) -> Vec<f64> {
    top_eigenvalues_by_bisection(a, n, n)
}

fn solve(m: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs())).unwrap();
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let piv = if a[k * n + k] == 0.0 { 1e-300 } else { a[k * n + k] };
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        let piv = if a[k * n + k] == 0.0 { 1e-300 } else { a[k * n + k] };
        x[k] = (x[k] - s) / piv;
    }
    x
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Eigenvector for a known eigenvalue by shifted inverse power iteration.
pub fn inverse_iteration(a: &[f64], n: usize, lambda: f64) -> Vec<f64> {
    let mut m = a.to_vec();
    let shift = lambda + 1e-10 * (1.0 + lambda.abs());
    for i in 0..n {
        m[i * n + i] -= shift;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    normalize(&mut v);
    for _ in 0..4 {
        v = solve(&m, n, &v);
        normalize(&mut v);
    }
    v
}

/// Dominant eigenpair (largest |λ|) by plain power iteration.
pub fn power_iteration(a: &[f64], n: usize, iters: usize) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect();
        lambda = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        v = w;
        normalize(&mut v);
    }
    (lambda, v)
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    a
}

/// `k` random orthonormal vectors of length `dim` (Gram–Schmidt on
/// uniform draws).
pub fn random_orthonormal(rng: &mut impl Rng, dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &out {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            normalize(&mut v);
            out.push(v);
        }
    }
    out
}

/// `‖X − VVᵀX‖²_F` for patch columns `x` (each of length `dim`).
pub fn reconstruction_error(x: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let mut err = 0.0;
    for col in x {
        let mut r = col.clone();
        for b in basis {
            let c: f64 = col.iter().zip(b).map(|(p, q)| p * q).sum();
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= c * bi);
        }
        err += r.iter().map(|v| v * v).sum::<f64>();
    }
    err
}

/// `(1/T)·Σ log Σ_k π_k N(x_t | μ_k, sd_k²)` written out directly.
pub fn gmm_mean_log_likelihood(data: &[f64], d: usize, weights: &[f64], means: &[f64], sds: &[f64]) -> f64 {
    let t = data.len() / d;
    let mut total = 0.0;
    for x in data.chunks(d) {
        let mut p = 0.0;
        for (k, w) in weights.iter().enumerate() {
            let mut dens = *w;
            for i in 0..d {
                let s = sds[k * d + i];
                let z = (x[i] - means[k * d + i]) / s;
                dens *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            p += dens;
        }
        total += p.ln();
    }
    total / t as f64
}

fn boundary_points(m: &LabelMap, class_id: u8) -> Vec<(usize, usize, usize)> {
    let (w, h, d) = m.dims();
    let at = |x: isize, y: isize, z: isize| -> Option<u8> {
        if x < 0 || y < 0 || z < 0 || x >= w as isize || y >= h as isize || z >= d as isize {
            None
        } else {
            Some(m.labels()[(z as usize * h + y as usize) * w + x as usize])
        }
    };
    let mut all = Vec::new();
    let mut edge = Vec::new();
    for z in 0..d as isize {
        for y in 0..h as isize {
            for x in 0..w as isize {
                if at(x, y, z) != Some(class_id) {
                    continue;
                }
                all.push((x as usize, y as usize, z as usize));
                let nbrs = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
                if nbrs.iter().any(|&(dx, dy, dz)| matches!(at(x + dx, y + dy, z + dz), Some(c) if c != class_id)) {
                    edge.push((x as usize, y as usize, z as usize));
                }
            }
        }
    }
    if edge.is_empty() {
        all
    } else {
        edge
    }
}

fn directed(a: &[(usize, usize, usize)], b: &[(usize, usize, usize)], s: Spacing) -> f64 {
    let mut mins: Vec<f64> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let dx = (p.0 as f64 - q.0 as f64) * s.x;
                    let dy = (p.1 as f64 - q.1 as f64) * s.y;
                    let dz = (p.2 as f64 - q.2 as f64) * s.z;
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    mins.sort_by(f64::total_cmp);
    let rank = (0.95 * mins.len() as f64).ceil() as usize;
    mins[rank.max(1) - 1]
}

/// Symmetric 95th-percentile Hausdorff distance by all-pairs search.
pub fn hausdorff95_bruteforce(g: &LabelMap, s: &LabelMap, class_id: u8, spacing: Spacing) -> f64 {
    let (bg, bs) = (boundary_points(g, class_id), boundary_points(s, class_id));
    directed(&bg, &bs, spacing).max(directed(&bs, &bg, spacing))
}

/// Random blobby label map: a few random rectangles of each class.
pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize) -> LabelMap {
    let mut l = vec![0u8; w * h];
    for _ in 0..rng.gen_range(1..5) {
        let c = rng.gen_range(1..3u8);
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..w) + 1, rng.gen_range(y0..h) + 1);
        for y in y0..y1 {
            for x in x0..x1 {
                l[y * w + x] = c;
            }
        }
    }
    for v in l.iter_mut() {
        if rng.gen::<f64>() < 0.05 {
            *v = rng.gen_range(0..3);
        }
    }
    LabelMap::new(w, h, 1, 3, l).unwrap()
}
