//! Seeded synthetic image corpora for verification and desk-scale protocols:
//! smooth band-limited random fields and a procedural ten-class digit set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::FeatureMap;

/// Smooth random field: a superposition of low-frequency sinusoids,
/// normalized to [0, 1]. Deterministic in the seed.
pub fn smooth_field(seed: u64, n: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.3..1.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut data = vec![0.0; n * n];
    let inv = std::f64::consts::TAU / n as f64;
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for &(a, u, w, phase) in &terms {
                v += a * (inv * (u * i as f64 + w * j as f64) + phase).sin();
            }
            data[i * n + j] = v;
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for v in &mut data {
        *v = (*v - lo) / span;
    }
    FeatureMap::from_real(n, n, &data)
}

/// Smooth random field with a hard-zero border of width `pad`. Keeping the
/// content clear of the frame edge makes grid-exact transforms act as pure
/// permutations of the support, which the invariance checks rely on.
pub fn compact_field(seed: u64, n: usize, pad: usize) -> FeatureMap {
    let mut map = smooth_field(seed, n);
    for i in 0..n {
        for j in 0..n {
            if i < pad || j < pad || i >= n - pad || j >= n - pad {
                map.set(i, j, num_complex::Complex64::new(0.0, 0.0));
            }
        }
    }
    map
}

/// Compact-support field with a raised-cosine taper: exactly zero within
/// `pad` pixels of the border, ramping smoothly to full amplitude over the
/// next `ramp` pixels. The smooth edge keeps resampled transforms (arbitrary
/// rotations) from manufacturing high-frequency content at the support
/// boundary.
pub fn apodized_field(seed: u64, n: usize, pad: usize, ramp: usize) -> FeatureMap {
    let mut map = smooth_field(seed, n);
    let ramp = ramp.max(1) as f64;
    // radial window: the support is a disk, so any rotation about the image
    // center keeps all content inside the frame
    let center = (n as f64 - 1.0) / 2.0;
    let full_radius = center - pad as f64 - ramp;
    for i in 0..n {
        for j in 0..n {
            let r = ((i as f64 - center).powi(2) + (j as f64 - center).powi(2)).sqrt();
            let d = r - full_radius;
            let w = if d <= 0.0 {
                1.0
            } else if d >= ramp {
                0.0
            } else {
                0.5 + 0.5 * (std::f64::consts::PI * d / ramp).cos()
            };
            map.set(i, j, map.at(i, j) * w);
        }
    }
    map
}

// 5x7 digit glyphs, one bit per column (MSB left).
const GLYPHS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

/// One labeled digit image.
pub struct DigitSample {
    pub image: FeatureMap,
    pub label: usize,
}

fn glyph_value(digit: usize, x: f64, y: f64) -> f64 {
    // bilinear sample of the 5x7 bitmap over [0,1]²
    let gx = x * 4.0;
    let gy = y * 6.0;
    let x0 = gx.floor().clamp(0.0, 4.0) as usize;
    let y0 = gy.floor().clamp(0.0, 6.0) as usize;
    let x1 = (x0 + 1).min(4);
    let y1 = (y0 + 1).min(6);
    let fx = (gx - x0 as f64).clamp(0.0, 1.0);
    let fy = (gy - y0 as f64).clamp(0.0, 1.0);
    let bit = |col: usize, row: usize| -> f64 {
        if GLYPHS[digit][row] >> (4 - col) & 1 == 1 {
            1.0
        } else {
            0.0
        }
    };
    let top = bit(x0, y0) * (1.0 - fx) + bit(x1, y0) * fx;
    let bot = bit(x0, y1) * (1.0 - fx) + bit(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Render one digit into an n×n frame with jittered position, size, and
/// additive noise.
pub fn digit_image(digit: usize, seed: u64, n: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let box_h = (n as f64 * 0.55) * rng.gen_range(0.9..1.1);
    let box_w = box_h * 5.0 / 7.0;
    let jitter = (n as f64 * 0.06).max(1.0);
    let cx = n as f64 / 2.0 + rng.gen_range(-jitter..jitter);
    let cy = n as f64 / 2.0 + rng.gen_range(-jitter..jitter);
    let noise_amp = 0.05;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // i is the vertical axis here, j horizontal
            let y = (i as f64 - (cy - box_h / 2.0)) / box_h;
            let x = (j as f64 - (cx - box_w / 2.0)) / box_w;
            let mut v = if (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y) {
                glyph_value(digit, x, y)
            } else {
                0.0
            };
            v += noise_amp * rng.gen::<f64>();
            data[i * n + j] = v.clamp(0.0, 1.0);
        }
    }
    FeatureMap::from_real(n, n, &data)
}

/// Balanced ten-class digit corpus, `per_class` images per digit.
pub fn digit_dataset(seed: u64, per_class: usize, n: usize) -> Vec<DigitSample> {
    let mut out = Vec::with_capacity(10 * per_class);
    for digit in 0..10 {
        for idx in 0..per_class {
            out.push(DigitSample {
                image: digit_image(digit, seed ^ ((digit * 10_007 + idx) as u64), n),
                label: digit,
            });
        }
    }
    out
}
