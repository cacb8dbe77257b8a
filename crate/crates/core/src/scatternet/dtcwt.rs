//! 2-D dual-tree complex wavelet transform (analysis only).
//!
//! Level 1 uses Kingsbury's near-symmetric 13/19-tap biorthogonal pair,
//! coarser levels the 14-tap Q-shift pair. Boundaries are extended by
//! half-sample symmetric reflection. Subband order follows the usual
//! orientation sequence 15°, 45°, 75°, 105°, 135°, 165°.

use alloc::vec;
use alloc::vec::Vec;

use crate::filter::reflect_index;
use crate::image::Plane;

use super::ScatterError;

pub const ORIENTATIONS_DEG: [u32; 6] = [15, 45, 75, 105, 135, 165];

/// Analysis filters of one DTCWT configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DtcwtFilterSet {
    /// level-1 lowpass (odd length, symmetric)
    pub h0o: Vec<f64>,
    /// level-1 highpass
    pub h1o: Vec<f64>,
    /// Q-shift lowpass, tree a / tree b
    pub h0a: Vec<f64>,
    pub h0b: Vec<f64>,
    /// Q-shift highpass, tree a / tree b
    pub h1a: Vec<f64>,
    pub h1b: Vec<f64>,
}

const NEAR_SYM_B_H0: [f64; 13] = [
    -0.0017578125,
    0.0,
    0.022265625,
    -0.046875,
    -0.0482421875,
    0.296875,
    0.55546875,
    0.296875,
    -0.0482421875,
    -0.046875,
    0.022265625,
    0.0,
    -0.0017578125,
];

const NEAR_SYM_B_H1: [f64; 19] = [
    -7.062639508928571e-05,
    0.0,
    0.0013419015066964285,
    -0.0018833705357142855,
    -0.007156808035714285,
    0.023856026785714284,
    0.05564313616071428,
    -0.05168805803571428,
    -0.29975760323660716,
    0.5594308035714286,
    -0.29975760323660716,
    -0.05168805803571428,
    0.05564313616071428,
    0.023856026785714284,
    -0.007156808035714285,
    -0.0018833705357142855,
    0.0013419015066964285,
    0.0,
    -7.062639508928571e-05,
];

const QSHIFT_B_H0A: [f64; 14] = [
    0.003253142763653182,
    -0.00388321199915849,
    0.03466034684485349,
    -0.03887280126882779,
    -0.11720388769911527,
    0.27529538466888204,
    0.7561456438925225,
    0.5688104207121227,
    0.011866092033797,
    -0.1067118046866654,
    0.023825384794920298,
    0.01702522388155399,
    -0.005439475937274115,
    -0.004556895628475491,
];

const QSHIFT_B_H1A: [f64; 14] = [
    -0.004556895628475491,
    0.005439475937274115,
    0.01702522388155399,
    -0.023825384794920298,
    -0.1067118046866654,
    -0.011866092033797,
    0.5688104207121227,
    -0.7561456438925225,
    0.27529538466888204,
    0.11720388769911527,
    -0.03887280126882779,
    -0.03466034684485349,
    -0.00388321199915849,
    -0.003253142763653182,
];

impl DtcwtFilterSet {
    /// The published near_sym_b (level 1) and qshift_b (levels ≥ 2)
    /// coefficients, unmodified.
    pub fn published() -> Self {
        let h0a = QSHIFT_B_H0A.to_vec();
        let h1a = QSHIFT_B_H1A.to_vec();
        Self::with_qshift(h0a, h1a)
    }

    /// The published sets with the Q-shift highpass shifted to an exactly
    /// zero DC gain. The tabulated taps sum to about -9.3e-7, which leaks
    /// ~1.9e-6 of a unit constant into every level-2 subband.
    pub fn kingsbury() -> Self {
        let mut h1a = QSHIFT_B_H1A.to_vec();
        let dc = h1a.iter().sum::<f64>() / h1a.len() as f64;
        h1a.iter_mut().for_each(|v| *v -= dc);
        Self::with_qshift(QSHIFT_B_H0A.to_vec(), h1a)
    }

    fn with_qshift(h0a: Vec<f64>, h1a: Vec<f64>) -> Self {
        let mut h0b = h0a.clone();
        h0b.reverse();
        let mut h1b = h1a.clone();
        h1b.reverse();
        DtcwtFilterSet { h0o: NEAR_SYM_B_H0.to_vec(), h1o: NEAR_SYM_B_H1.to_vec(), h0a, h0b, h1a, h1b }
    }
}

impl Default for DtcwtFilterSet {
    fn default() -> Self {
        Self::kingsbury()
    }
}

/// A complex-valued plane stored as separate real/imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane {
    pub width: usize,
    pub height: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexPlane {
    pub fn magnitude(&self) -> Plane {
        let data = self.re.iter().zip(&self.im).map(|(a, b)| libm::sqrt(a * a + b * b)).collect();
        Plane { width: self.width, height: self.height, data }
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a * a + b * b).sum()
    }
}

/// Output of [`dtcwt_forward`]: `highpasses[level][orientation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtcwtPyramid {
    pub lowpass: Plane,
    pub highpasses: Vec<[ComplexPlane; 6]>,
}

/// Filters the columns of `x` with `h` without decimation. Odd-length
/// filters keep the size; even-length ones add one row.
fn colfilter(x: &Plane, h: &[f64]) -> Plane {
    let (c, r) = x.dims();
    let m = h.len();
    let m2 = (m / 2) as isize;
    let ext_len = r + 2 * m2 as usize;
    let rows: Vec<usize> = (0..ext_len).map(|i| reflect_index(i as isize - m2, r)).collect();
    let out_rows = ext_len + 1 - m;
    let mut out = Plane::zeros(c, out_rows);
    for n in 0..out_rows {
        let dst = &mut out.data[n * c..(n + 1) * c];
        for (k, &hk) in h.iter().enumerate() {
            let sr = rows[n + m - 1 - k];
            let src = &x.data[sr * c..(sr + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += hk * s;
            }
        }
    }
    out
}

/// Valid-mode convolution of a row sequence `seq` (row indices into `x`)
/// with `h`, accumulated into the output rows selected by `dst_rows`.
fn accumulate_conv(x: &Plane, seq: &[usize], h: &[f64], out: &mut Plane, dst_rows: &[usize]) {
    let c = x.width;
    let m = h.len();
    for (n, &dr) in dst_rows.iter().enumerate() {
        for (k, &hk) in h.iter().enumerate() {
            let sr = seq[n + m - 1 - k];
            let src = &x.data[sr * c..(sr + 1) * c];
            let dst = &mut out.data[dr * c..(dr + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += hk * s;
            }
        }
    }
}

/// Filters the columns of `x` with the Q-shift pair and decimates by two,
/// interleaving the two tree outputs. Row count must be a multiple of 4.
fn coldfilt(x: &Plane, ha: &[f64], hb: &[f64]) -> Plane {
    let (c, r) = x.dims();
    debug_assert!(r % 4 == 0 && ha.len() == hb.len() && ha.len() % 2 == 0);
    let m = ha.len();
    let xe: Vec<usize> = (0..r + 2 * m).map(|i| reflect_index(i as isize - m as isize, r)).collect();
    let odd = |h: &[f64]| h.iter().step_by(2).copied().collect::<Vec<_>>();
    let even = |h: &[f64]| h.iter().skip(1).step_by(2).copied().collect::<Vec<_>>();
    let (hao, hae, hbo, hbe) = (odd(ha), even(ha), odd(hb), even(hb));
    let t: Vec<usize> = (5..r + 2 * m - 2).step_by(4).collect();
    let r2 = r / 2;
    let mut out = Plane::zeros(c, r2);
    let evens: Vec<usize> = (0..r2).step_by(2).collect();
    let odds: Vec<usize> = (1..r2).step_by(2).collect();
    let dot: f64 = ha.iter().zip(hb).map(|(a, b)| a * b).sum();
    let (s1, s2) = if dot > 0.0 { (&evens, &odds) } else { (&odds, &evens) };
    let pick = |off: usize| t.iter().map(|&ti| xe[ti - off]).collect::<Vec<_>>();
    accumulate_conv(x, &pick(1), &hao, &mut out, s1);
    accumulate_conv(x, &pick(3), &hae, &mut out, s1);
    accumulate_conv(x, &pick(0), &hbo, &mut out, s2);
    accumulate_conv(x, &pick(2), &hbe, &mut out, s2);
    out
}

/// Converts quads of real samples into the two complex subbands `(p-q, p+q)`.
fn q2c(y: &Plane) -> (ComplexPlane, ComplexPlane) {
    let (w, h) = (y.width / 2, y.height / 2);
    let s = libm::sqrt(0.5);
    let n = w * h;
    let mut first = ComplexPlane { width: w, height: h, re: vec![0.0; n], im: vec![0.0; n] };
    let mut second = first.clone();
    for i in 0..h {
        for j in 0..w {
            let a = y.get(2 * j, 2 * i);
            let b = y.get(2 * j + 1, 2 * i);
            let c = y.get(2 * j, 2 * i + 1);
            let d = y.get(2 * j + 1, 2 * i + 1);
            let (pr, pi) = (a * s, b * s);
            let (qr, qi) = (d * s, -c * s);
            let k = i * w + j;
            first.re[k] = pr - qr;
            first.im[k] = pi - qi;
            second.re[k] = pr + qr;
            second.im[k] = pi + qi;
        }
    }
    (first, second)
}

fn assemble(pair05: (ComplexPlane, ComplexPlane), pair23: (ComplexPlane, ComplexPlane), pair14: (ComplexPlane, ComplexPlane)) -> [ComplexPlane; 6] {
    [pair05.0, pair14.0, pair23.0, pair23.1, pair14.1, pair05.1]
}

fn extend_rows_edge(x: &Plane) -> Plane {
    let (w, h) = x.dims();
    Plane::from_fn(w, h + 2, |c, r| x.get(c, r.saturating_sub(1).min(h - 1)))
}

/// Forward DTCWT with `levels` levels of decomposition.
pub fn dtcwt_forward(img: &Plane, levels: usize, filters: &DtcwtFilterSet) -> Result<DtcwtPyramid, ScatterError> {
    if levels == 0 {
        return Err(ScatterError::InvalidConfig("DTCWT needs at least one level"));
    }
    let min = 1usize << levels;
    if img.width < min || img.height < min {
        return Err(ScatterError::ImageTooSmall { width: img.width, height: img.height, levels });
    }
    let mut x = img.clone();
    if x.height % 2 != 0 {
        let (w, h) = x.dims();
        x = Plane::from_fn(w, h + 1, |c, r| x.get(c, r.min(h - 1)));
    }
    if x.width % 2 != 0 {
        let (w, h) = x.dims();
        x = Plane::from_fn(w + 1, h, |c, r| x.get(c.min(w - 1), r));
    }
    let mut highpasses = Vec::with_capacity(levels);

    let lo = colfilter(&x, &filters.h0o).transpose();
    let hi = colfilter(&x, &filters.h1o).transpose();
    let mut lolo = colfilter(&lo, &filters.h0o).transpose();
    highpasses.push(assemble(
        q2c(&colfilter(&hi, &filters.h0o).transpose()),
        q2c(&colfilter(&lo, &filters.h1o).transpose()),
        q2c(&colfilter(&hi, &filters.h1o).transpose()),
    ));

    for _ in 1..levels {
        if lolo.height % 4 != 0 {
            lolo = extend_rows_edge(&lolo);
        }
        if lolo.width % 4 != 0 {
            lolo = extend_rows_edge(&lolo.transpose()).transpose();
        }
        let lo = coldfilt(&lolo, &filters.h0b, &filters.h0a).transpose();
        let hi = coldfilt(&lolo, &filters.h1b, &filters.h1a).transpose();
        lolo = coldfilt(&lo, &filters.h0b, &filters.h0a).transpose();
        highpasses.push(assemble(
            q2c(&coldfilt(&hi, &filters.h0b, &filters.h0a).transpose()),
            q2c(&coldfilt(&lo, &filters.h1b, &filters.h1a).transpose()),
            q2c(&coldfilt(&hi, &filters.h1b, &filters.h1a).transpose()),
        ));
    }
    Ok(DtcwtPyramid { lowpass: lolo, highpasses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highpass_filters_sum_to_zero() {
        let f = DtcwtFilterSet::kingsbury();
        for h in [&f.h1o, &f.h1a, &f.h1b] {
            assert!(h.iter().sum::<f64>().abs() < 1e-6);
        }
        assert!((f.h0o.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((f.h0a.iter().sum::<f64>() - core::f64::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn constant_image_has_empty_highpasses() {
        let img = Plane::filled(32, 24, 0.7);
        let p = dtcwt_forward(&img, 2, &DtcwtFilterSet::kingsbury()).unwrap();
        for level in &p.highpasses {
            for band in level {
                assert!(band.magnitude().max_abs() < 1e-6);
            }
        }
        let lp = &p.lowpass;
        let m = lp.mean();
        assert!(lp.data.iter().all(|v| (v - m).abs() < 1e-9));
    }

    #[test]
    fn subband_sizes_halve_per_level() {
        let img = Plane::from_fn(40, 24, |x, y| (x * y) as f64);
        let p = dtcwt_forward(&img, 2, &DtcwtFilterSet::kingsbury()).unwrap();
        assert_eq!(p.highpasses[0][0].width, 20);
        assert_eq!(p.highpasses[0][0].height, 12);
        assert_eq!(p.highpasses[1][3].width, 10);
        assert_eq!(p.highpasses[1][3].height, 6);
        assert_eq!(p.lowpass.dims(), (20, 12));
    }

    // Reference values from the `dtcwt` Python package (numpy backend,
    // biort='near_sym_b', qshift='qshift_b', nlevels=2) on the image below.
    fn reference_image() -> Plane {
        Plane::from_fn(30, 22, |x, y| {
            let (x, y) = (x as f64, y as f64);
            libm::sin(0.7 * x + 0.2 * y) + libm::cos(0.45 * y - 0.1 * x) + 0.01 * x * y
        })
    }

    #[test]
    fn matches_reference_implementation() {
        let p = dtcwt_forward(&reference_image(), 2, &DtcwtFilterSet::published()).unwrap();
        let energies: [[f64; 6]; 2] = [
            [
                0.2780193388154208,
                9.001050689349141e-05,
                0.4314104110568664,
                0.4263350520461483,
                9.221780704541355e-05,
                0.2758692442835172,
            ],
            [
                3.201031437845453,
                0.061818747135593356,
                60.68800079454639,
                30.274215243100727,
                0.03788968714624079,
                3.9979424456993238,
            ],
        ];
        for (level, expect) in energies.iter().enumerate() {
            for (b, e) in expect.iter().enumerate() {
                let got = p.highpasses[level][b].energy();
                assert!((got - e).abs() <= 1e-10 * e.max(1.0), "level {level} band {b}: {got} vs {e}");
            }
        }
        let coef = |level: usize, b: usize, y: usize, x: usize| {
            let band = &p.highpasses[level][b];
            (band.re[y * band.width + x], band.im[y * band.width + x])
        };
        let (re, im) = coef(0, 0, 3, 5);
        assert!((re + 7.44893938e-03).abs() < 1e-10 && (im - 2.44797455e-03).abs() < 1e-10);
        let (re, im) = coef(1, 2, 3, 5);
        assert!((re + 0.53038504).abs() < 1e-8 && (im - 1.1051202).abs() < 1e-7);
        assert_eq!(p.lowpass.dims(), (16, 12));
        assert!((p.lowpass.get(3, 2) + 0.2050220403234726).abs() < 1e-10);
    }

    #[test]
    fn impulse_energy_split_and_transpose_symmetry() {
        // per-band energies of a centred unit impulse in a 32x32 image,
        // from the reference implementation
        let expect = [
            [0.12506621707851545, 0.1277444299839762, 0.12506621707851542, 0.12506621707851542, 0.1277444299839762, 0.12506621707851545],
            [0.03059867950477361, 0.02939324060994212, 0.03059867950477361, 0.030598679504773612, 0.029393240609942105, 0.03059867950477361],
        ];
        let mut img = Plane::zeros(32, 32);
        img.set(16, 16, 1.0);
        let f = DtcwtFilterSet::published();
        let p = dtcwt_forward(&img, 2, &f).unwrap();
        let pt = dtcwt_forward(&img.transpose(), 2, &f).unwrap();
        // transposition swaps 15°<->75° and 105°<->165°, fixes 45° and 135°
        let swap = [2, 1, 0, 5, 4, 3];
        for level in 0..2 {
            for b in 0..6 {
                let e = p.highpasses[level][b].energy();
                assert!((e - expect[level][b]).abs() < 1e-12);
                assert!((e - pt.highpasses[level][swap[b]].energy()).abs() < 1e-12);
            }
        }
        let total: f64 = expect.iter().flatten().sum();
        assert!(total < 1.0);
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = Plane::zeros(3, 8);
        assert!(matches!(
            dtcwt_forward(&img, 2, &DtcwtFilterSet::kingsbury()),
            Err(ScatterError::ImageTooSmall { .. })
        ));
    }
}
