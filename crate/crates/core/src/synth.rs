//! Synthetic two-texture "brain slice" generator: a textured white-matter
//! core inside a differently textured grey-matter ring on a dark
//! background, both with wavy boundaries, plus additive Gaussian noise.

use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{LabelMap, Plane, BACKGROUND, GREY_MATTER, NUM_TISSUE_CLASSES, WHITE_MATTER};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// noise standard deviation as a fraction of the intensity range
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { width: 128, height: 128, noise: 0.03 }
    }
}

const BACKGROUND_LEVEL: f64 = 0.05;
const GREY_LEVEL: f64 = 0.45;
const WHITE_LEVEL: f64 = 0.75;

/// One image with its ground truth; identical seeds give identical output.
pub fn synth_image(seed: u64, cfg: &SynthConfig) -> (Plane, LabelMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let size = w.min(h) as f64;
    let cx = w as f64 / 2.0 + rng.gen_range(-0.03..0.03) * size;
    let cy = h as f64 / 2.0 + rng.gen_range(-0.03..0.03) * size;
    let outer = 0.40 * size * rng.gen_range(0.95..1.05);
    let inner = outer * rng.gen_range(0.50..0.58);
    let ph: [f64; 4] = core::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let amp: [f64; 4] = [rng.gen_range(0.04..0.09), rng.gen_range(0.02..0.05), rng.gen_range(0.08..0.15), rng.gen_range(0.04..0.08)];
    let angle = rng.gen_range(0.0..PI);
    let (sa, ca) = (libm::sin(angle), libm::cos(angle));
    let stripe_phase = rng.gen_range(0.0..2.0 * PI);
    let dot_phase = rng.gen_range(0.0..2.0 * PI);

    let mut img = Plane::zeros(w, h);
    let mut labels = alloc::vec![BACKGROUND; w * h];
    let noise = Normal::new(0.0, cfg.noise * (WHITE_LEVEL + 0.1 - BACKGROUND_LEVEL)).unwrap();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let r = libm::hypot(dx, dy);
            let t = libm::atan2(dy, dx);
            let r_out = outer * (1.0 + amp[0] * libm::sin(3.0 * t + ph[0]) + amp[1] * libm::cos(5.0 * t + ph[1]));
            let r_in = inner * (1.0 + amp[2] * libm::sin(2.0 * t + ph[2]) + amp[3] * libm::cos(4.0 * t + ph[3]));
            let (xf, yf) = (x as f64, y as f64);
            let (label, v) = if r < r_in {
                // isotropic dot texture
                let tex = libm::sin(2.0 * PI * xf / 5.0 + dot_phase) * libm::sin(2.0 * PI * yf / 5.0);
                (WHITE_MATTER, WHITE_LEVEL + 0.06 * tex)
            } else if r < r_out {
                // oriented stripes
                let u = xf * ca + yf * sa;
                (GREY_MATTER, GREY_LEVEL + 0.07 * libm::sin(2.0 * PI * u / 7.0 + stripe_phase))
            } else {
                (BACKGROUND, BACKGROUND_LEVEL)
            };
            labels[y * w + x] = label;
            img.set(x, y, v + noise.sample(&mut rng));
        }
    }
    let labels = LabelMap::new(w, h, 1, NUM_TISSUE_CLASSES, labels).expect("labels in range");
    (img, labels)
}
