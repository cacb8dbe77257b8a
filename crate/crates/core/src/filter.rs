//! Spatial filtering primitives: Gaussian kernels, separable and dense
//! correlation with symmetric boundary reflection, bilinear resampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::Plane;

/// Maps an out-of-range index onto `[0, n)` by half-sample symmetric
/// reflection: `... 1 0 | 0 1 ... n-1 | n-1 n-2 ...`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Sampled Gaussian (order 0) or Gaussian derivative (order 1, 2) with
/// radius `ceil(4σ)`.
///
/// The kernels are moment-corrected so that, under convolution, order 0
/// preserves constants, order 1 maps `x` to exactly `1` and order 2 maps
/// `x²` to exactly `2`.
pub fn gaussian_kernel(sigma: f64, order: u8) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = libm::ceil(4.0 * sigma).max(1.0) as isize;
    let s2 = sigma * sigma;
    let xs: Vec<f64> = (-radius..=radius).map(|k| k as f64).collect();
    let g: Vec<f64> = xs.iter().map(|&x| libm::exp(-x * x / (2.0 * s2))).collect();
    match order {
        0 => {
            let sum: f64 = g.iter().sum();
            g.iter().map(|v| v / sum).collect()
        }
        1 => {
            let k: Vec<f64> = xs.iter().zip(&g).map(|(&x, &g)| -x * g).collect();
            // convolution with x must give 1: sum_k (x-k) h(k) = -sum_k k h(k)
            let m1: f64 = xs.iter().zip(&k).map(|(&x, &h)| x * h).sum();
            k.iter().map(|h| -h / m1).collect()
        }
        2 => {
            let mut k: Vec<f64> = xs.iter().zip(&g).map(|(&x, &g)| (x * x - s2) * g).collect();
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            k.iter_mut().for_each(|h| *h -= mean);
            let m2: f64 = xs.iter().zip(&k).map(|(&x, &h)| x * x * h).sum();
            k.iter().map(|h| 2.0 * h / m2).collect()
        }
        _ => panic!("unsupported Gaussian derivative order {order}"),
    }
}

/// Convolves rows with `kx` and columns with `ky` (odd-length, centred).
pub fn convolve_separable(img: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let tmp = convolve_rows(img, kx);
    convolve_cols(&tmp, ky)
}

fn convolve_rows(img: &Plane, k: &[f64]) -> Plane {
    let (w, h) = img.dims();
    let r = (k.len() / 2) as isize;
    let mut out = Plane::zeros(w, h);
    let mut padded = vec![0.0; w + 2 * r as usize];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect_index(i as isize - r, w)];
        }
        let dst = &mut out.data[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            // out(x) = sum_j img(x - j) k(j), j in [-r, r]
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += padded[x + k.len() - 1 - t] * kv;
            }
            *d = acc;
        }
    }
    out
}

fn convolve_cols(img: &Plane, k: &[f64]) -> Plane {
    let (w, h) = img.dims();
    let r = (k.len() / 2) as isize;
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let dst = &mut out.data[y * w..(y + 1) * w];
        for (t, &kv) in k.iter().enumerate() {
            let sy = reflect_index(y as isize + r - t as isize, h);
            let src = &img.data[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma, 0);
    convolve_separable(img, &k, &k)
}

/// Pads a plane by `r` pixels on every side using symmetric reflection.
pub fn pad_reflect(img: &Plane, r: usize) -> Plane {
    let (w, h) = img.dims();
    let ri = r as isize;
    Plane::from_fn(w + 2 * r, h + 2 * r, |x, y| {
        img.get(reflect_index(x as isize - ri, w), reflect_index(y as isize - ri, h))
    })
}

/// Dense 2-D correlation with an odd-sized square kernel, same-size output.
pub fn correlate(img: &Plane, kernel: &Plane) -> Plane {
    correlate_many(img, core::slice::from_ref(kernel)).pop().unwrap()
}

/// Correlates one image with several equally sized kernels, sharing the
/// padded copy of the input.
pub fn correlate_many(img: &Plane, kernels: &[Plane]) -> Vec<Plane> {
    let Some(first) = kernels.first() else {
        return Vec::new();
    };
    let ks = first.width;
    assert!(ks % 2 == 1 && first.height == ks, "kernels must be odd and square");
    let r = ks / 2;
    let padded = pad_reflect(img, r);
    let pw = padded.width;
    let (w, h) = img.dims();
    kernels
        .iter()
        .map(|k| {
            assert_eq!(k.dims(), (ks, ks));
            let mut out = Plane::zeros(w, h);
            for ky in 0..ks {
                let krow = &k.data[ky * ks..(ky + 1) * ks];
                for y in 0..h {
                    let src = &padded.data[(y + ky) * pw..(y + ky + 1) * pw];
                    let dst = &mut out.data[y * w..(y + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let win = &src[x..x + ks];
                        let mut acc = 0.0;
                        for (a, b) in win.iter().zip(krow) {
                            acc += a * b;
                        }
                        *d += acc;
                    }
                }
            }
            out
        })
        .collect()
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &Plane, new_w: usize, new_h: usize) -> Plane {
    let (w, h) = img.dims();
    if (w, h) == (new_w, new_h) {
        return img.clone();
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let axis = |dst: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = libm::floor(src) as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..new_w).map(|x| axis(x, sx, w)).collect();
    Plane::from_fn(new_w, new_h, |x, y| {
        let (y0, y1, fy) = axis(y, sy, h);
        let (x0, x1, fx) = cols[x];
        let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
        let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Samples `img` at a fractional position with bilinear interpolation;
/// positions outside the image are clamped to the border.
pub fn sample_bilinear(img: &Plane, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = libm::floor(x) as usize;
    let y0 = libm::floor(y) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotates an image about its centre by `angle` radians (counter-clockwise
/// as displayed), bilinear interpolation, border clamping.
pub fn rotate_bilinear(img: &Plane, angle: f64) -> Plane {
    let (w, h) = img.dims();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Plane::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // inverse mapping of the display-space rotation (y down)
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        sample_bilinear(img, sx, sy)
    })
}
