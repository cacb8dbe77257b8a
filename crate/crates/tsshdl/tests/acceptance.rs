//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line to the real stderr (not captured by the harness).

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tsshdl::config::PipelineConfig;
use tsshdl::dataset::{write_synthetic, SynthSplits};
use tsshdl::pipeline::{evaluate, load_split, train, Diagnostics, FeatureCache, Segmenter};
use tsshdl::report;
use tsshdl_core::crf::{softmax_neg, trw_marginals, PairwiseParams, TrwOptions, UnaryEnergies};
use tsshdl_core::fisher::{fisher_vector_unnormalized, fit_gmm, Gmm, GmmConfig};
use tsshdl_core::image::{GREY_MATTER, WHITE_MATTER};
use tsshdl_core::linalg::jacobi_eigen;
use tsshdl_core::metrics::{avd, class_scores, dice, hausdorff95, jaccard};
use tsshdl_core::pcanet::{extract_patches, fit_pca_layer};
use tsshdl_core::scatternet::{scatter_coefficients, ScatterConfig};
use tsshdl_core::synth::{synth_image, SynthConfig};
use tsshdl_core::texture::{mr8_responses, Mr8Bank};
use tsshdl_core::vesselness::{vesselness_feature, VesselnessConfig};
use tsshdl_core::{FeatureStack, LabelMap, Plane, Spacing};

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

fn verdict(n: u32, pass: bool, detail: String) {
    let line = format!("acceptance criterion {n:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_defaults_and_reference_context() {
    // numbers on licensed data cannot be reproduced here; what is checked is
    // that the defaults are the published hyperparameters and that reports
    // carry the published figures as context
    let c = PipelineConfig::default();
    let checks = [
        ("2 DTCWT scales", c.scatter.j == 2),
        ("10 vesselness scales", c.vesselness_config().scales.len() == 10),
        ("PCANet 40,30,20,10", c.pcanet.filters == [40, 30, 20, 10]),
        ("5 mixture components", c.fisher.components == 5),
        ("FV length 500", 2 * c.fisher.components * c.fisher.reduced_dim == 500),
        ("window 15 stride 2", c.fisher.window == 15 && c.fisher.stride == 2),
        ("seeded", c.pcanet_config().seed == c.run.seed && c.fv_config().gmm.seed == c.run.seed),
        ("reference J", report::REFERENCE_JACCARD == [("GM", 0.907), ("WM", 0.921)]),
        ("reference DC", report::REFERENCE_DICE_PCT == [("GM", 86.01), ("WM", 89.49)]),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(1, failed.is_empty(), format!("defaults and reference figures; failing: {failed:?}"));
}

#[test]
fn criterion_02_pcanet_optimality() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut gram, mut beaten) = (0.0f64, 0usize);
    for set in 0..1000 {
        let img = Plane::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let smooth = tsshdl_core::filter::gaussian_blur(&img, 0.8);
        let mut stack = FeatureStack::empty(10, 10);
        stack.push("x", &smooth).unwrap();
        let x = extract_patches(&stack, 5, 1, 1.0, &mut rng).unwrap();
        let k = 1 + set % 8;
        let layer = fit_pca_layer(&x, 1, 5, k).unwrap();
        let v: Vec<Vec<f64>> = (0..layer.k()).map(|i| layer.filter(i).to_vec()).collect();
        for (i, a) in v.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                gram = gram.max((d - (i == j) as u8 as f64).abs());
            }
        }
        let cols: Vec<Vec<f64>> = (0..x.count()).map(|i| x.patch(i).to_vec()).collect();
        let best = oracles::reconstruction_error(&cols, &v);
        for _ in 0..100 {
            let other = oracles::random_orthonormal(&mut rng, 25, k);
            if best > oracles::reconstruction_error(&cols, &other) * (1.0 + 1e-12) {
                beaten += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        gram < 1e-8 && beaten == 0 && secs < 60.0,
        format!("max |VtV - I| = {gram:.2e} (< 1e-8), competitors beating PCA {beaten}/100000, {secs:.1}s (< 60s)"),
    );
}

#[test]
fn criterion_03_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 9;
    let (mut val_err, mut vec_err, mut power_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = oracles::random_symmetric(&mut rng, n);
        let e = jacobi_eigen(&a, n).unwrap();
        let reference = oracles::eigenvalues_by_bisection(&a, n);
        for (i, &want) in reference.iter().enumerate() {
            val_err = val_err.max((e.values[i] - want).abs());
            let v = oracles::inverse_iteration(&a, n, want);
            let dot: f64 = v.iter().zip(&e.vectors[i]).map(|(x, y)| x * y).sum();
            let s = dot.signum();
            vec_err = vec_err.max(v.iter().zip(&e.vectors[i]).map(|(x, y)| (x - s * y).abs()).fold(0.0, f64::max));
        }
        // power iteration on the shifted matrix confirms the dominant value
        let mut shifted = a.clone();
        (0..n).for_each(|i| shifted[i * n + i] += 6.0);
        let (lambda, _) = oracles::power_iteration(&shifted, n, 5000);
        power_err = power_err.max((lambda - 6.0 - e.values[0]).abs());
    }
    verdict(
        3,
        val_err < 1e-8 && vec_err < 1e-8 && power_err < 1e-8,
        format!("100 random 9x9: eigenvalue err {val_err:.2e}, eigenvector err {vec_err:.2e}, power-iteration err {power_err:.2e} (all < 1e-8)"),
    );
}

#[test]
fn criterion_04_fisher_vector_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (k, d, t) = (2, 3, 4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let g = Gmm {
            dim: d,
            weights,
            means: (0..k * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            variances: (0..k * d).map(|_| rng.gen_range(0.3..2.0)).collect(),
        };
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let sds: Vec<f64> = g.variances.iter().map(|v| v.sqrt()).collect();
        let f = |m: &[f64], s: &[f64]| oracles::gmm_mean_log_likelihood(&data, d, &g.weights, m, s);
        let h = 1e-5;
        let fv = fisher_vector_unnormalized(&data, &g).unwrap();
        let mut fd = vec![0.0; 2 * k * d];
        for j in 0..k * d {
            let c = j / d;
            let (mut mp, mut mm) = (g.means.clone(), g.means.clone());
            mp[j] += h;
            mm[j] -= h;
            let (mut sp, mut sm) = (sds.clone(), sds.clone());
            sp[j] += h;
            sm[j] -= h;
            // FV blocks are the gradients scaled by sigma / sqrt(w) and sigma / sqrt(2w)
            fd[j] = (f(&mp, &sds) - f(&mm, &sds)) / (2.0 * h) * sds[j] / g.weights[c].sqrt();
            fd[k * d + j] = (f(&g.means, &sp) - f(&g.means, &sm)) / (2.0 * h) * sds[j] / (2.0 * g.weights[c]).sqrt();
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fv.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-3 * scale));
        }
    }
    verdict(4, worst < 1e-5, format!("50 instances K=2 d=3 T=4: worst relative error {worst:.2e} (< 1e-5)"));
}

#[test]
fn criterion_05_em_monotone_and_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut drops = 0usize;
    for ds in 0..20 {
        let d = rng.gen_range(1..6);
        let k = rng.gen_range(1..6);
        let n = 10 * k * d + rng.gen_range(0..400);
        let true_k = rng.gen_range(1..5);
        let centres: Vec<f64> = (0..true_k * d).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let c = rng.gen_range(0..true_k);
            for i in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(centres[c * d + i] + z);
            }
        }
        let (_, rep) = fit_gmm(&data, d, &GmmConfig { k, seed: ds, ..GmmConfig::default() }).unwrap();
        drops += rep.log_likelihoods.windows(2).filter(|w| w[1] < w[0] - 1e-10 * w[0].abs().max(1.0)).count();
    }
    let d = 4;
    let data: Vec<f64> = (0..300 * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (g, _) = fit_gmm(&data, d, &GmmConfig { k: 1, ..GmmConfig::default() }).unwrap();
    let mut closed = 0.0f64;
    for i in 0..d {
        let mean = data.iter().skip(i).step_by(d).sum::<f64>() / 300.0;
        let var = data.iter().skip(i).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
        closed = closed.max((g.means[i] - mean).abs()).max((g.variances[i] - var).abs());
    }
    verdict(
        5,
        drops == 0 && closed < 1e-10,
        format!("20 datasets: {drops} log-likelihood decreases; K=1 vs sample moments {closed:.2e} (< 1e-10)"),
    );
}

#[test]
fn criterion_06_trw_against_enumeration() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut bound_drops) = (0.0f64, 0usize);
    for i in 0..200 {
        let (w, h) = if i % 2 == 0 { (2, 2) } else { (3, 3) };
        let u = UnaryEnergies::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
        let pw = PairwiseParams { w0: rng.gen_range(0.0..0.2), w1: rng.gen_range(0.0..0.2), beta: rng.gen_range(0.5..5.0) };
        let img = Plane::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
        let r = trw_marginals(&u, &pw, &img, &TrwOptions::default()).unwrap();
        bound_drops += r.lower_bounds.windows(2).filter(|b| b[1] < b[0] - 1e-12).count();
        let exact = oracles::enumerate_marginals(&u, &pw, &img);
        worst = r.marginals.iter().zip(&exact).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    let u = UnaryEnergies::new(6, 5, 3, (0..90).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let img = Plane::from_fn(6, 5, |x, y| (x * y) as f64 * 0.1);
    let r = trw_marginals(&u, &PairwiseParams { w0: 0.0, w1: 0.0, beta: 3.0 }, &img, &TrwOptions::default()).unwrap();
    let mut softmax_err = 0.0f64;
    let mut s = [0.0; 3];
    for p in 0..30 {
        softmax_neg(u.pixel(p), &mut s);
        for l in 0..3 {
            softmax_err = softmax_err.max((r.marginals[p * 3 + l] - s[l]).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        6,
        worst < 0.02 && bound_drops == 0 && softmax_err < 1e-15 && secs < 120.0,
        format!("200 grids: max marginal err {worst:.4} (< 0.02), bound decreases {bound_drops}, zero-pairwise vs softmax {softmax_err:.1e}, {secs:.1}s (< 120s)"),
    );
}

#[test]
fn criterion_07_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identity = 0.0f64;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let (g, s) = (oracles::random_mask(&mut rng, w, h), oracles::random_mask(&mut rng, w, h));
        for c in 0..3 {
            let j = jaccard(&g, &s, c).unwrap();
            identity = identity.max((dice(&g, &s, c).unwrap() / 100.0 - 2.0 * j / (1.0 + j)).abs());
        }
    }
    let (mut hd_checked, mut hd_mismatch) = (0, 0);
    while hd_checked < 300 {
        let (w, h) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let (g, s) = (oracles::random_mask(&mut rng, w, h), oracles::random_mask(&mut rng, w, h));
        let sp = Spacing::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), 1.0).unwrap();
        for c in 1..3 {
            if g.count(c) > 0 && s.count(c) > 0 {
                hd_checked += 1;
                if hausdorff95(&g, &s, c, sp).unwrap() != oracles::hausdorff95_bruteforce(&g, &s, c, sp) {
                    hd_mismatch += 1;
                }
            }
        }
    }
    let mask = |n: usize| LabelMap::new(4, 4, 1, 3, (0..16).map(|i| (i < n) as u8).collect()).unwrap();
    let (g, double, empty) = (mask(4), mask(8), mask(0));
    let avd_ok = avd(&g, &g, 1, Spacing::UNIT) == Ok(0.0)
        && avd(&g, &double, 1, Spacing::UNIT) == Ok(100.0)
        && avd(&g, &empty, 1, Spacing::UNIT) == Ok(100.0)
        && avd(&empty, &g, 1, Spacing::UNIT).is_err();
    verdict(
        7,
        identity < 1e-12 && hd_mismatch == 0 && avd_ok,
        format!("Dice-Jaccard identity err {identity:.1e} (< 1e-12); HD95 mismatches {hd_mismatch}/{hd_checked}; AVD edge cases ok: {avd_ok}"),
    );
}

#[test]
fn criterion_08_and_10_end_to_end_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let splits = SynthSplits { train: 20, val: 5, test: 10, image: SynthConfig { width: 128, height: 128, noise: 0.03 }, seed: 0 };
    write_synthetic(dir.path(), &splits).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.data.train = Some(dir.path().join("train.txt"));
    cfg.data.val = Some(dir.path().join("val.txt"));
    cfg.data.test = Some(dir.path().join("test.txt"));
    let cache = FeatureCache::new(dir.path().join("cache"));
    let bundle = train(&cfg, &cache, &mut Diagnostics::default()).unwrap();
    let seg = Segmenter::new(bundle.clone()).unwrap();
    let test = load_split(&cfg, "test", true).unwrap();
    let (rows, _) = evaluate(&seg, &test, &cache).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let _ = std::io::stderr().write_all(report::render_table(&rows).as_bytes());
    let gm = report::class_means(&rows, GREY_MATTER).unwrap();
    let wm = report::class_means(&rows, WHITE_MATTER).unwrap();

    // a training image run through the segmenter matches its ground truth
    let train_items = load_split(&cfg, "train", true).unwrap();
    let first = &train_items[0];
    let pred = seg.segment(first, &FeatureCache::disabled()).unwrap();
    let truth = first.labels.as_ref().unwrap();
    let train_j = [GREY_MATTER, WHITE_MATTER].map(|c| class_scores(truth, &pred, c, Spacing::UNIT).unwrap().jaccard);

    verdict(
        8,
        gm.jaccard >= 0.90 && wm.jaccard >= 0.90 && secs < 900.0 && train_j.iter().all(|&j| j > 0.9),
        format!(
            "mean test J GM {:.4} WM {:.4} (>= 0.90), DC GM {:.2} WM {:.2}, train image J {:.3}/{:.3} (> 0.9), pipeline {secs:.0}s (< 900s)",
            gm.jaccard, wm.jaccard, gm.dice_pct, wm.dice_pct, train_j[0], train_j[1]
        ),
    );

    // second full training run, no cache: every feature is recomputed
    let again = train(&cfg, &FeatureCache::disabled(), &mut Diagnostics::default()).unwrap();
    let (a, b) = (bundle.to_bytes(), again.to_bytes());
    verdict(10, a == b, format!("two train runs, same seed, warm cache vs no cache: {} vs {} bytes, identical: {}", a.len(), b.len(), a == b));
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

fn interior(s: &FeatureStack, m: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for c in 0..s.channels() {
        let p = s.plane_f64(c);
        for y in m..p.height - m {
            for x in m..p.width - m {
                out.push(p.get(x, y));
            }
        }
    }
    out
}

#[test]
fn criterion_09_invariances() {
    // scattering: every shift with |dx|, |dy| <= 2 on three images, J = 2
    let cfg = ScatterConfig::default();
    let mut shift_worst = 0.0f64;
    for seed in 0..3 {
        let img = synth_image(seed, &SynthConfig { width: 64, height: 64, noise: 0.03 }).0;
        let a = interior(&scatter_coefficients(&img, &cfg).unwrap(), 12);
        for dx in -2isize..=2 {
            for dy in -2isize..=2 {
                let b = scatter_coefficients(&img.roll(dx, dy), &cfg).unwrap();
                shift_worst = shift_worst.max(rel_l2(&a, &interior(&b, 12)));
            }
        }
    }

    // MR8: quarter turns commute with the filter bank to rounding
    let bank = Mr8Bank::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = tsshdl_core::filter::gaussian_blur(&Plane::from_fn(56, 40, |_, _| rng.gen_range(0.0..1.0)), 1.0);
    let a = mr8_responses(&img, &bank);
    let b = mr8_responses(&img.rot90(), &bank);
    let mr8_worst = a.iter().zip(&b).fold(0.0f64, |m, (pa, pb)| {
        let d = pa.rot90().data.iter().zip(&pb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        m.max(d / pa.max_abs().max(1e-12))
    });

    // vesselness: ridges of width w and 2w respond within 20% of each other
    let vcfg = VesselnessConfig::default();
    let mut ratio_worst = 1.0f64;
    for w in [1.5, 2.0, 3.0] {
        let img = Plane::from_fn(64, 160, |_, y| {
            [(40.0, w), (120.0, 2.0 * w)].iter().map(|&(c, s): &(f64, f64)| (-(y as f64 - c).powi(2) / (2.0 * s * s)).exp()).sum()
        });
        let v = vesselness_feature(&img, &vcfg).unwrap().plane_f64(0);
        let (p, q) = (v.get(32, 40), v.get(32, 120));
        ratio_worst = ratio_worst.min(p.min(q) / p.max(q));
    }
    verdict(
        9,
        shift_worst < 0.15 && mr8_worst < 1e-12 && ratio_worst >= 0.8,
        format!(
            "scattering shift change {shift_worst:.4} (< 0.15); MR8 quarter-turn err {mr8_worst:.1e} (< 1e-12); vesselness w/2w ratio {ratio_worst:.3} (>= 0.8)"
        ),
    );
}
