use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsshdl_core::fisher::*;
use tsshdl_core::{FeatureStack, Plane};

mod oracles;
use oracles::gmm_mean_log_likelihood;

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Gmm {
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Gmm {
        dim: d,
        weights,
        means: (0..k * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        variances: (0..k * d).map(|_| rng.gen_range(0.3..2.0)).collect(),
    }
}

/// Central differences of the mean log-likelihood w.r.t. every mean and
/// standard deviation.
fn fd_gradient(data: &[f64], g: &Gmm) -> (Vec<f64>, Vec<f64>) {
    let d = g.dim;
    let sds: Vec<f64> = g.variances.iter().map(|v| v.sqrt()).collect();
    let f = |m: &[f64], s: &[f64]| gmm_mean_log_likelihood(data, d, &g.weights, m, s);
    let h = 1e-5;
    let mut gm = vec![0.0; g.means.len()];
    let mut gs = vec![0.0; g.means.len()];
    for i in 0..g.means.len() {
        let (mut mp, mut mm) = (g.means.clone(), g.means.clone());
        mp[i] += h;
        mm[i] -= h;
        gm[i] = (f(&mp, &sds) - f(&mm, &sds)) / (2.0 * h);
        let (mut sp, mut sm) = (sds.clone(), sds.clone());
        sp[i] += h;
        sm[i] -= h;
        gs[i] = (f(&g.means, &sp) - f(&g.means, &sm)) / (2.0 * h);
    }
    (gm, gs)
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-5 * b.abs().max(scale)
}

#[test]
fn fisher_blocks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (k, d, t) = (2, 3, 4);
    for inst in 0..50 {
        let g = random_gmm(&mut rng, k, d);
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let (fm, fs) = fd_gradient(&data, &g);
        let (am, asg) = log_likelihood_gradient(&data, &g).unwrap();
        let fv = fisher_vector_unnormalized(&data, &g).unwrap();
        let scale = fm.iter().chain(&fs).fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
        for c in 0..k {
            for i in 0..d {
                let j = c * d + i;
                let sd = g.variances[j].sqrt();
                assert!(close(am[j], fm[j], scale), "instance {inst} dmu {j}: {} vs {}", am[j], fm[j]);
                assert!(close(asg[j], fs[j], scale), "instance {inst} dsigma {j}: {} vs {}", asg[j], fs[j]);
                let want_mu = fm[j] * sd / g.weights[c].sqrt();
                let want_sigma = fs[j] * sd / (2.0 * g.weights[c]).sqrt();
                assert!(close(fv[j], want_mu, scale), "instance {inst} G_mu {j}: {} vs {want_mu}", fv[j]);
                assert!(close(fv[k * d + j], want_sigma, scale), "instance {inst} G_sigma {j}");
            }
        }
    }
}

fn mixture_data(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Vec<f64> {
    let centres: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let scales: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..1.5)).collect();
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.gen_range(0..k);
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            out.push(centres[c * d + i] + scales[c] * z);
        }
    }
    out
}

#[test]
fn em_log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for ds in 0..20 {
        let d = rng.gen_range(1..6);
        let k = rng.gen_range(1..6);
        let n = 10 * k * d + rng.gen_range(0..400);
        let true_k = rng.gen_range(1..5);
        let data = mixture_data(&mut rng, n, d, true_k);
        let (g, rep) = fit_gmm(&data, d, &GmmConfig { k, seed: ds, ..GmmConfig::default() }).unwrap();
        assert!(!rep.log_likelihoods.is_empty());
        for w in rep.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "dataset {ds}: {} -> {}", w[0], w[1]);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(g.weights.iter().all(|&w| w > 0.0));
        assert!(g.variances.iter().all(|&v| v >= VARIANCE_FLOOR));
    }
}

#[test]
fn single_component_equals_sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let d = 4;
    let data = mixture_data(&mut rng, 300, d, 3);
    let (g, _) = fit_gmm(&data, d, &GmmConfig { k: 1, ..GmmConfig::default() }).unwrap();
    let n = 300.0;
    for i in 0..d {
        let mean = data.iter().skip(i).step_by(d).sum::<f64>() / n;
        let var = data.iter().skip(i).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((g.means[i] - mean).abs() < 1e-10);
        assert!((g.variances[i] - var).abs() < 1e-10);
    }
}

#[test]
fn separated_clusters_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let d = 2;
    let mut data = Vec::new();
    for t in 0..400 {
        let c = if t % 2 == 0 { -5.0 } else { 5.0 };
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(c + 0.5 * z);
        }
    }
    let (g, _) = fit_gmm(&data, d, &GmmConfig { k: 2, ..GmmConfig::default() }).unwrap();
    let mut firsts = [g.means[0], g.means[d]];
    firsts.sort_by(f64::total_cmp);
    assert!((firsts[0] + 5.0).abs() < 1.0 && (firsts[1] - 5.0).abs() < 1.0, "{firsts:?}");
}

#[test]
fn insufficient_and_empty_inputs() {
    let g = random_gmm(&mut ChaCha8Rng::seed_from_u64(0), 2, 3);
    assert_eq!(fisher_vector(&[], &g).unwrap_err(), FisherError::EmptyDescriptorSet);
    let r = fit_gmm(&[0.0; 30], 3, &GmmConfig { k: 5, ..GmmConfig::default() });
    assert_eq!(r.unwrap_err(), FisherError::InsufficientData { needed: 150, got: 10 });
}

fn descriptor_stack(w: usize, h: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeatureStack {
    let mut s = FeatureStack::empty(w, h);
    for ch in 0..c {
        s.push(format!("d{ch}"), &Plane::from_fn(w, h, |x, y| f(x, y, ch))).unwrap();
    }
    s
}

fn stack_descriptors(s: &FeatureStack) -> Vec<f64> {
    let mut out = vec![0.0; s.pixels() * s.channels()];
    for p in 0..s.pixels() {
        s.pixel_into(p, &mut out[p * s.channels()..(p + 1) * s.channels()]);
    }
    out
}

fn textured(x: usize, y: usize, ch: usize) -> f64 {
    let left = x < 24;
    let f = if left { 0.9 } else { 0.35 };
    let base = if left { 0.5 } else { -0.5 };
    base + ((ch + 1) as f64 * f * (x as f64 + 0.7 * y as f64)).sin() * 0.4
}

fn small_encoder(train: &FeatureStack, reduced: usize, k: usize, stride: usize) -> FvEncoder {
    let cfg = FvConfig { reduced_dim: reduced, gmm: GmmConfig { k, ..GmmConfig::default() }, window: 7, stride };
    FvEncoder::fit(&stack_descriptors(train), train.channels(), &cfg).unwrap().0
}

#[test]
fn production_shape_is_500_and_reducer_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let data = mixture_data(&mut rng, 2600, 100, 5);
    let (enc, _) = FvEncoder::fit(&data, 100, &FvConfig::default()).unwrap();
    assert_eq!(enc.output_dim(), 500);
    let (r, n) = (&enc.reducer.basis, 100);
    for i in 0..50 {
        for j in 0..50 {
            let d: f64 = (0..n).map(|t| r[i * n + t] * r[j * n + t]).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }
}

#[test]
fn uniform_stack_encodes_identically_everywhere() {
    let train = descriptor_stack(48, 32, 6, textured);
    let enc = small_encoder(&train, 4, 3, 2);
    let flat = descriptor_stack(20, 20, 6, |_, _, c| 0.1 * c as f64);
    let fv = enc.encode_image(&flat).unwrap();
    assert_eq!(fv.channels(), 24);
    for c in 0..fv.channels() {
        let p = fv.plane(c);
        assert!(p.iter().all(|v| *v == p[0]));
    }
}

#[test]
fn two_textures_give_distinct_vectors_of_unit_norm() {
    let train = descriptor_stack(48, 32, 6, textured);
    let enc = small_encoder(&train, 4, 3, 2);
    let pix = enc.encode_pixels(&train).unwrap();
    let dim = enc.output_dim();
    let at = |x: usize, y: usize| &pix[(y * 48 + x) * dim..(y * 48 + x + 1) * dim];
    for p in pix.chunks(dim) {
        let n: f64 = p.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-10 || n == 0.0);
    }
    let dist: f64 = at(8, 16).iter().zip(at(40, 16)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 0.1, "distance {dist}");
}

#[test]
fn stride_two_approximates_stride_one_on_smooth_input() {
    // encoder fitted to broadly spread descriptors, applied to a slowly
    // varying stack
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let train: Vec<f64> = (0..4000 * 5).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let cfg = FvConfig { reduced_dim: 3, gmm: GmmConfig { k: 2, ..GmmConfig::default() }, window: 15, stride: 2 };
    let e2 = FvEncoder::fit(&train, 5, &cfg).unwrap().0;
    let e1 = FvEncoder { stride: 1, ..e2.clone() };
    let dirs = [(1.0, 0.2), (0.3, 1.0), (-0.7, 0.6), (0.9, -0.5), (0.1, -1.1)];
    let smooth = descriptor_stack(40, 40, 5, |x, y, c| {
        let (a, b) = dirs[c];
        (0.02 * (1.0 + 0.3 * c as f64) * (a * x as f64 + b * y as f64) + c as f64).sin()
    });
    let (a, b) = (e1.encode_pixels(&smooth).unwrap(), e2.encode_pixels(&smooth).unwrap());
    let dim = e2.output_dim();
    let mut per_pixel: Vec<f64> = a
        .chunks(dim)
        .zip(b.chunks(dim))
        .map(|(pa, pb)| {
            let num: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y).powi(2)).sum();
            let den: f64 = pa.iter().map(|x| x * x).sum();
            (num / den).sqrt()
        })
        .collect();
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    let field = (num / den).sqrt();
    assert!(field < 0.05, "relative L2 over the FV map {field}");
    per_pixel.sort_by(f64::total_cmp);
    assert!(per_pixel[per_pixel.len() / 2] < 0.05);
    // grid pixels are computed identically by both encoders
    for y in (0..40).step_by(2) {
        for x in (0..40).step_by(2) {
            let p = (y * 40 + x) * dim;
            assert_eq!(a[p..p + dim], b[p..p + dim]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffling_descriptors_leaves_fv_bitwise_unchanged(seed in any::<u64>(), t in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gmm(&mut rng, 3, 4);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let a = fisher_vector(&rows.concat(), &g).unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let b = fisher_vector(&shuffled.concat(), &g).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let n: f64 = a.iter().map(|v| v * v).sum();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gmm(&mut rng, 2, 3);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let (fm, fs) = fd_gradient(&data, &g);
        let (am, asg) = log_likelihood_gradient(&data, &g).unwrap();
        let scale = fm.iter().chain(&fs).fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
        for j in 0..6 {
            prop_assert!(close(am[j], fm[j], scale));
            prop_assert!(close(asg[j], fs[j], scale));
        }
    }
}
