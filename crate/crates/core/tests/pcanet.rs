use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsshdl_core::pcanet::*;
use tsshdl_core::synth::{synth_image, SynthConfig};
use tsshdl_core::{FeatureStack, Plane};

mod oracles;
use oracles::{eigenvalues_by_bisection, inverse_iteration, random_orthonormal, reconstruction_error};

fn random_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> FeatureStack {
    let mut s = FeatureStack::empty(w, h);
    for i in 0..c {
        // smooth-ish random field so that patches are correlated
        let (fx, fy, ph) = (rng.gen_range(0.1..1.5), rng.gen_range(0.1..1.5), rng.gen_range(0.0..6.3));
        let noise: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let p = Plane::from_fn(w, h, |x, y| (fx * x as f64 + fy * y as f64 + ph).sin() + noise[y * w + x]);
        s.push(format!("c{i}"), &p).unwrap();
    }
    s
}

fn columns(x: &PatchMatrix) -> Vec<Vec<f64>> {
    (0..x.count()).map(|i| x.patch(i).to_vec()).collect()
}

fn filters(layer: &PcaLayer) -> Vec<Vec<f64>> {
    (0..layer.k()).map(|k| layer.filter(k).to_vec()).collect()
}

fn max_gram_error(v: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in v.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

#[test]
fn fitted_filters_beat_random_orthonormal_bases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for set in 0..1000 {
        let stack = random_stack(&mut rng, 10, 10, 1);
        let x = extract_patches(&stack, 5, 1, 1.0, &mut rng).unwrap();
        let k = 1 + set % 8;
        let layer = fit_pca_layer(&x, 1, 5, k).unwrap();
        let v = filters(&layer);
        assert!(max_gram_error(&v) < 1e-8);
        let cols = columns(&x);
        let best = reconstruction_error(&cols, &v);
        for _ in 0..100 {
            let other = random_orthonormal(&mut rng, 25, k);
            assert!(best <= reconstruction_error(&cols, &other) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn small_patches_match_dense_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let stack = random_stack(&mut rng, 12, 12, 1);
        let x = extract_patches(&stack, 3, 1, 1.0, &mut rng).unwrap();
        let layer = fit_pca_layer(&x, 1, 3, 6).unwrap();
        let n = 9;
        let mut m = vec![0.0; n * n];
        for col in columns(&x) {
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] += col[i] * col[j] / x.count() as f64;
                }
            }
        }
        let values = eigenvalues_by_bisection(&m, n);
        for k in 0..6 {
            assert!((layer.eigenvalues[k] - values[k]).abs() < 1e-8);
            let mut v = inverse_iteration(&m, n, values[k]);
            let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            for (a, b) in layer.filter(k).iter().zip(&v) {
                assert!((a - b).abs() < 1e-8, "filter {k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn high_dimensional_layers_stay_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack = random_stack(&mut rng, 30, 30, 8);
    let x = extract_patches(&stack, 5, 1, 1.0, &mut rng).unwrap();
    assert_eq!(x.dim, 200);
    let layer = fit_pca_layer(&x, 8, 5, 40).unwrap();
    assert!(max_gram_error(&filters(&layer)) < 1e-8);
    assert!(layer.eigenvalues.windows(2).all(|e| e[0] >= e[1]));
    assert!(layer.eigenvalues.iter().all(|&e| e >= 0.0));
}

fn brain_stacks(n: usize, size: usize) -> Vec<FeatureStack> {
    let cfg = SynthConfig { width: size, height: size, noise: 0.03 };
    (0..n)
        .map(|i| {
            let (img, _) = synth_image(i as u64, &cfg);
            let mut s = FeatureStack::empty(size, size);
            s.push("raw", &img).unwrap();
            s.push("sq", &img.map(|v| v * v)).unwrap();
            s.push("blur", &tsshdl_core::filter::gaussian_blur(&img, 1.5)).unwrap();
            s
        })
        .collect()
}

#[test]
fn schedule_output_count_and_determinism() {
    let stacks = brain_stacks(2, 24);
    let cfg = PcaNetConfig { seed: 7, ..PcaNetConfig::default() };
    let model = fit_pcanet(&stacks, &cfg).unwrap();
    let ks: Vec<usize> = model.layers.iter().map(PcaLayer::k).collect();
    assert_eq!(ks, vec![40, 30, 20, 10]);
    let ins: Vec<usize> = model.layers.iter().map(|l| l.channels_in).collect();
    assert_eq!(ins, vec![3, 40, 30, 20]);
    let out = apply_pcanet(&stacks[0], &model).unwrap();
    assert_eq!(out.channels(), 100);
    assert_eq!(out.names()[0], "l1.f00");
    assert_eq!(out.names()[99], "l4.f09");
    assert_eq!(fit_pcanet(&stacks, &cfg).unwrap(), model);
    for l in &model.layers {
        assert!(max_gram_error(&filters(l)) < 1e-8);
    }
}

#[test]
fn subsampling_is_seeded() {
    let stacks = brain_stacks(2, 24);
    let cfg = PcaNetConfig { filters: vec![8, 4], sample_rate: 0.3, seed: 3, ..PcaNetConfig::default() };
    let a = fit_pcanet(&stacks, &cfg).unwrap();
    assert_eq!(a, fit_pcanet(&stacks, &cfg).unwrap());
    let b = fit_pcanet(&stacks, &PcaNetConfig { seed: 4, ..cfg.clone() }).unwrap();
    assert_ne!(a, b);
}

#[test]
fn output_energy_is_ordered_by_channel() {
    let stacks = brain_stacks(3, 32);
    let cfg = PcaNetConfig { filters: vec![12, 6], ..PcaNetConfig::default() };
    let model = fit_pcanet(&stacks, &cfg).unwrap();
    let outs: Vec<Vec<FeatureStack>> = stacks.iter().map(|s| apply_pcanet_layers(s, &model).unwrap()).collect();
    for (li, layer) in model.layers.iter().enumerate() {
        // mean square response over valid positions reproduces the eigenvalues
        let half = layer.patch / 2;
        let mut energy = vec![0.0; layer.k()];
        let mut count = 0usize;
        for o in &outs {
            let s = &o[li];
            for y in half..s.height() - half {
                for x in half..s.width() - half {
                    for (k, e) in energy.iter_mut().enumerate() {
                        let v = s.plane(k)[y * s.width() + x] as f64;
                        *e += v * v;
                    }
                    count += 1;
                }
            }
        }
        energy.iter_mut().for_each(|e| *e /= count as f64);
        for k in 0..layer.k() {
            let rel = (energy[k] - layer.eigenvalues[k]).abs() / layer.eigenvalues[0];
            assert!(rel < 1e-5, "layer {li} channel {k}: {} vs {}", energy[k], layer.eigenvalues[k]);
        }
        assert!(energy.windows(2).all(|e| e[0] >= e[1] * (1.0 - 1e-5)));
    }
}

#[test]
fn tiled_filter_is_recognised_by_its_channel() {
    let stacks = brain_stacks(1, 24);
    let x = extract_patches(&stacks[0], 5, 1, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let layer = fit_pca_layer(&x, 3, 5, 12).unwrap();
    let (w, h) = (15, 15);
    let (cx, cy) = (7, 7);
    for k in 0..layer.k() {
        let f = layer.filter(k);
        let mut s = FeatureStack::empty(w, h);
        for c in 0..3 {
            let p = Plane::from_fn(w, h, |x, y| {
                let (dx, dy) = (x as isize - cx as isize + 2, y as isize - cy as isize + 2);
                if (0..5).contains(&dx) && (0..5).contains(&dy) {
                    f[c * 25 + dy as usize * 5 + dx as usize]
                } else {
                    0.0
                }
            });
            s.push(format!("c{c}"), &p).unwrap();
        }
        let out = apply_pca_layer(&s, &layer, false).unwrap();
        let mut best = (0.0f32, usize::MAX, usize::MAX);
        for ch in 0..out.channels() {
            for (p, &v) in out.plane(ch).iter().enumerate() {
                if v.abs() > best.0 {
                    best = (v.abs(), ch, p);
                }
            }
        }
        assert_eq!((best.1, best.2), (k, cy * w + cx), "filter {k}");
    }
}

#[test]
fn too_small_and_all_zero_inputs_are_rejected() {
    let tiny = FeatureStack::new(4, 4, vec!["a".into()], vec![0.0; 16]).unwrap();
    assert_eq!(
        extract_patches(&tiny, 5, 1, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err(),
        PcaNetError::ImageTooSmall { width: 4, height: 4, patch: 5 }
    );
    let flat = FeatureStack::new(8, 8, vec!["a".into()], vec![0.5; 64]).unwrap();
    assert_eq!(fit_pcanet(&[flat], &PcaNetConfig { filters: vec![2], ..PcaNetConfig::default() }).unwrap_err(), PcaNetError::ZeroVariance);
}
