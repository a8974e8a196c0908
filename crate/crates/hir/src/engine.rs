//! One representation unit U = P∘S∘C: same-size convolution with a sampled
//! kernel (direct or FFT path), magnitude nonlinearity, identity pooling.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{HirError, Result};
use crate::kernels::KernelTable;

/// Value domain of a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    ComplexValued,
    RealNonNegative,
}

/// Which convolution implementation to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvPath {
    Direct,
    Fft,
}

/// A 2-D complex grid with its provenance: channel index and the unit
/// parameters λ = (n, m, w) applied so far.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Vec<Complex64>,
    pub ni: usize,
    pub nj: usize,
    pub channel_id: usize,
    pub path_tag: Vec<(i32, i32, f64)>,
    pub domain_kind: DomainKind,
}

impl FeatureMap {
    pub fn new(ni: usize, nj: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), ni * nj);
        FeatureMap {
            data,
            ni,
            nj,
            channel_id: 0,
            path_tag: Vec::new(),
            domain_kind: DomainKind::ComplexValued,
        }
    }

    pub fn from_real(ni: usize, nj: usize, data: &[f64]) -> Self {
        let map = FeatureMap::new(
            ni,
            nj,
            data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        );
        map
    }

    pub fn zeros(ni: usize, nj: usize) -> Self {
        FeatureMap::new(ni, nj, vec![Complex64::default(); ni * nj])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.nj + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.nj + j] = v;
    }

    /// Max modulus over the full grid.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Max modulus over the grid minus a border of `margin` pixels.
    pub fn interior_max_norm(&self, margin: usize) -> f64 {
        let mut worst = 0.0_f64;
        if 2 * margin >= self.ni || 2 * margin >= self.nj {
            return 0.0;
        }
        for i in margin..self.ni - margin {
            for j in margin..self.nj - margin {
                worst = worst.max(self.at(i, j).norm());
            }
        }
        worst
    }
}

/// Same-size spatial convolution of M with the transposed kernel, zero-padded
/// boundary. Serves as the oracle for the FFT path.
pub fn conv_direct(m: &FeatureMap, h: &KernelTable) -> Result<FeatureMap> {
    if h.side > m.ni || h.side > m.nj {
        return Err(HirError::Shape(format!(
            "kernel side {} exceeds image dimensions {}x{}",
            h.side, m.ni, m.nj
        )));
    }
    let c = h.center() as isize;
    let side = h.side as isize;
    let (ni, nj) = (m.ni as isize, m.nj as isize);
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    out.channel_id = m.channel_id;
    out.path_tag = m.path_tag.clone();
    for i in 0..ni {
        for j in 0..nj {
            let mut acc = Complex64::default();
            for a in 0..side {
                let si = i - (a - c);
                if si < 0 || si >= ni {
                    continue;
                }
                let row = (si * nj) as usize;
                for b in 0..side {
                    let sj = j - (b - c);
                    if sj < 0 || sj >= nj {
                        continue;
                    }
                    // transposed kernel: entry (a, b) read as H(b, a)
                    acc += h.at(b as usize, a as usize) * m.data[row + sj as usize];
                }
            }
            out.set(i as usize, j as usize, acc);
        }
    }
    Ok(out)
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> =
        std::cell::RefCell::new(FftPlanner::new());
    // kernel spectra keyed by kernel identity and pad size; the same kernel
    // is reapplied across many images, so its transform is worth keeping
    static SPECTRUM_CACHE: std::cell::RefCell<
        std::collections::HashMap<SpectrumKey, std::rc::Rc<Vec<Complex64>>>,
    > = std::cell::RefCell::new(std::collections::HashMap::new());
}

type SpectrumKey = ((u8, u64, u64, u64), i32, i32, u64, String, usize, usize);

fn direction(inverse: bool) -> rustfft::FftDirection {
    if inverse {
        rustfft::FftDirection::Inverse
    } else {
        rustfft::FftDirection::Forward
    }
}

/// FFT each row in `row_range`; other rows are left untouched (the callers
/// know they are all zero or not needed).
fn fft_rows(data: &mut [Complex64], cols: usize, row_range: std::ops::Range<usize>, inverse: bool) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(cols, direction(inverse)));
    for r in row_range {
        fft.process(&mut data[r * cols..(r + 1) * cols]);
    }
}

/// FFT each row in `row_range`, exploiting that every row is real: two rows
/// are packed into one complex transform and unpacked by conjugate symmetry.
fn fft_rows_real(data: &mut [Complex64], cols: usize, rows: usize, inverse: bool) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(cols, direction(inverse)));
    let mut packed = vec![Complex64::default(); cols];
    let mut pair = rows_pairs(rows);
    while let Some((r0, r1)) = pair.next() {
        match r1 {
            None => fft.process(&mut data[r0 * cols..(r0 + 1) * cols]),
            Some(r1) => {
                for c in 0..cols {
                    packed[c] =
                        Complex64::new(data[r0 * cols + c].re, data[r1 * cols + c].re);
                }
                fft.process(&mut packed);
                // X(k) = A(k) + iB(k) with A, B conjugate-symmetric
                for c in 0..cols {
                    let x = packed[c];
                    let y = packed[(cols - c) % cols].conj();
                    data[r0 * cols + c] = 0.5 * (x + y);
                    data[r1 * cols + c] = Complex64::new(0.0, -0.5) * (x - y);
                }
            }
        }
    }
}

fn rows_pairs(rows: usize) -> impl Iterator<Item = (usize, Option<usize>)> {
    (0..rows.div_ceil(2)).map(move |k| {
        let r0 = 2 * k;
        let r1 = r0 + 1;
        (r0, if r1 < rows { Some(r1) } else { None })
    })
}

const TRANSPOSE_TILE: usize = 32;

fn transpose_into(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for bi in (0..rows).step_by(TRANSPOSE_TILE) {
        for bj in (0..cols).step_by(TRANSPOSE_TILE) {
            for i in bi..(bi + TRANSPOSE_TILE).min(rows) {
                for j in bj..(bj + TRANSPOSE_TILE).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

/// FFT every column via a cache-blocked transpose, contiguous row transforms
/// in the transposed layout, and a transpose back.
fn fft_cols(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut t = vec![Complex64::default(); rows * cols];
    transpose_into(data, &mut t, rows, cols);
    fft_rows(&mut t, rows, 0..cols, inverse);
    transpose_into(&t, data, cols, rows);
}

fn kernel_spectrum(h: &KernelTable, pi: usize, pj: usize) -> std::rc::Rc<Vec<Complex64>> {
    let key: SpectrumKey = (
        crate::kernels::family_key_bits(&h.family),
        h.order.n,
        h.order.m,
        h.scale.to_bits(),
        h.rule_label.clone(),
        pi,
        pj,
    );
    SPECTRUM_CACHE.with(|cache| {
        if let Some(hit) = cache.borrow().get(&key) {
            return hit.clone();
        }
        let mut b = vec![Complex64::default(); pi * pj];
        for i in 0..h.side {
            for j in 0..h.side {
                // transposed kernel, matching the direct path
                b[i * pj + j] = h.at(j, i);
            }
        }
        fft_rows(&mut b, pj, 0..h.side, false);
        fft_cols(&mut b, pi, pj, false);
        // stored column-major so conv_fft can multiply without leaving its
        // transposed intermediate layout
        let mut bt = vec![Complex64::default(); pi * pj];
        transpose_into(&b, &mut bt, pi, pj);
        let spectrum = std::rc::Rc::new(bt);
        cache.borrow_mut().insert(key, spectrum.clone());
        spectrum
    })
}

/// FFT-path convolution: zero-pad both operands to the next power of two at
/// least N + side − 1 per axis, multiply spectra, invert, crop to same size.
pub fn conv_fft(m: &FeatureMap, h: &KernelTable) -> Result<FeatureMap> {
    if h.side > m.ni || h.side > m.nj {
        return Err(HirError::Shape(format!(
            "kernel side {} exceeds image dimensions {}x{}",
            h.side, m.ni, m.nj
        )));
    }
    let pi = (m.ni + h.side - 1).next_power_of_two();
    let pj = (m.nj + h.side - 1).next_power_of_two();
    let mut a = vec![Complex64::default(); pi * pj];
    for i in 0..m.ni {
        a[i * pj..i * pj + m.nj].copy_from_slice(&m.data[i * m.nj..(i + 1) * m.nj]);
    }
    let b = kernel_spectrum(h, pi, pj);
    // forward: only the first m.ni rows are nonzero; real-valued inputs use
    // the packed two-rows-per-transform path
    let real_input = m.data.iter().all(|v| v.im == 0.0);
    if real_input {
        fft_rows_real(&mut a, pj, m.ni, false);
    } else {
        fft_rows(&mut a, pj, 0..m.ni, false);
    }
    // the column stages run in a transposed scratch so every transform is
    // contiguous; the kernel spectrum is cached in the same layout
    let mut t = vec![Complex64::default(); pi * pj];
    transpose_into(&a, &mut t, pi, pj);
    if real_input {
        // real rows make columns j and pj-j elementwise conjugates, so the
        // upper half of the column spectra follows from the lower half
        fft_rows(&mut t, pi, 0..pj / 2 + 1, false);
        for j in pj / 2 + 1..pj {
            let (lo, hi) = t.split_at_mut(j * pi);
            let src = &lo[(pj - j) * pi..(pj - j + 1) * pi];
            let dst = &mut hi[..pi];
            dst[0] = src[0].conj();
            for k in 1..pi {
                dst[k] = src[pi - k].conj();
            }
        }
    } else {
        fft_rows(&mut t, pi, 0..pj, false);
    }
    for (x, y) in t.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    // inverse: columns first, then only the rows the crop below will read
    let c = h.center();
    fft_rows(&mut t, pi, 0..pj, true);
    transpose_into(&t, &mut a, pj, pi);
    fft_rows(&mut a, pj, c..c + m.ni, true);
    let norm = 1.0 / (pi * pj) as f64;
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    out.channel_id = m.channel_id;
    out.path_tag = m.path_tag.clone();
    for i in 0..m.ni {
        for j in 0..m.nj {
            out.set(i, j, a[(i + c) * pj + (j + c)] * norm);
        }
    }
    Ok(out)
}

/// Elementwise modulus; the result is real and non-negative.
pub fn magnitude(m: &FeatureMap) -> FeatureMap {
    let mut out = m.clone();
    for v in &mut out.data {
        *v = Complex64::new(v.norm(), 0.0);
    }
    out.domain_kind = DomainKind::RealNonNegative;
    out
}

/// Identity pooling.
pub fn pool_identity(m: FeatureMap) -> FeatureMap {
    m
}

/// Apply one representation unit with a prebuilt kernel, appending λ to the
/// path tag.
pub fn unit_apply_kernel(
    m: &FeatureMap,
    kernel: &Arc<KernelTable>,
    path: ConvPath,
) -> Result<FeatureMap> {
    let conv = match path {
        ConvPath::Direct => conv_direct(m, kernel)?,
        ConvPath::Fft => conv_fft(m, kernel)?,
    };
    let mut out = pool_identity(magnitude(&conv));
    out.path_tag
        .push((kernel.order.n, kernel.order.m, kernel.scale));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisOrder, RadialFamily};
    use crate::kernels::{build_kernel, PixelGrid, QuadratureRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernel(n: i32, m: i32, w: f64) -> KernelTable {
        build_kernel(
            &RadialFamily::Cosine,
            BasisOrder::new(n, m).unwrap(),
            w,
            &PixelGrid::default(),
            &QuadratureRule::tensor_gauss(2),
        )
        .unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, ni: usize, nj: usize) -> FeatureMap {
        let data: Vec<Complex64> = (0..ni * nj)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        FeatureMap::new(ni, nj, data)
    }

    #[test]
    fn impulse_reproduces_transposed_kernel() {
        let h = kernel(1, 2, 4.0);
        let mut m = FeatureMap::zeros(31, 31);
        m.set(15, 15, Complex64::new(1.0, 0.0));
        let out = conv_direct(&m, &h).unwrap();
        let c = h.center() as isize;
        for a in 0..h.side as isize {
            for b in 0..h.side as isize {
                let v = out.at((15 + a - c) as usize, (15 + b - c) as usize);
                let expect = h.at(b as usize, a as usize);
                assert!((v - expect).norm() < 1e-12);
            }
        }
        // zero away from the kernel footprint
        assert_eq!(out.at(0, 0), Complex64::default());
    }

    #[test]
    fn zero_image_stays_zero() {
        let h = kernel(0, 1, 3.0);
        let out = conv_direct(&FeatureMap::zeros(16, 16), &h).unwrap();
        assert!(out.max_norm() == 0.0);
    }

    #[test]
    fn constant_image_interior_sums_kernel() {
        let h = kernel(0, 0, 3.0);
        let c_val = 2.5;
        let m = FeatureMap::from_real(21, 21, &vec![c_val; 21 * 21]);
        let out = conv_direct(&m, &h).unwrap();
        let expect = h.sum() * c_val;
        assert!((out.at(10, 10) - expect).norm() < 1e-12);
    }

    #[test]
    fn kernel_larger_than_image_errors() {
        let h = kernel(0, 0, 8.0); // side 17
        assert!(conv_direct(&FeatureMap::zeros(10, 10), &h).is_err());
        assert!(conv_fft(&FeatureMap::zeros(10, 10), &h).is_err());
    }

    #[test]
    fn fft_matches_direct_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = kernel(2, 1, 10.0);
        let m = random_map(&mut rng, 64, 64);
        let a = conv_direct(&m, &h).unwrap();
        let b = conv_fft(&m, &h).unwrap();
        let scale = a.max_norm();
        let worst = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(worst / scale < 1e-9, "relative deviation {}", worst / scale);
    }

    #[test]
    fn fft_impulse_reproduces_kernel() {
        let h = kernel(1, 1, 4.0);
        let mut m = FeatureMap::zeros(24, 24);
        m.set(12, 12, Complex64::new(1.0, 0.0));
        let direct = conv_direct(&m, &h).unwrap();
        let fft = conv_fft(&m, &h).unwrap();
        for (x, y) in direct.data.iter().zip(&fft.data) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn magnitude_pythagorean() {
        let mut m = FeatureMap::zeros(2, 2);
        m.set(0, 0, Complex64::new(3.0, 4.0));
        let s = magnitude(&m);
        assert_eq!(s.at(0, 0), Complex64::new(5.0, 0.0));
        assert_eq!(s.at(1, 1), Complex64::default());
        assert_eq!(s.domain_kind, DomainKind::RealNonNegative);
        // idempotent on non-negative reals
        let s2 = magnitude(&s);
        for (a, b) in s.data.iter().zip(&s2.data) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unit_apply_real_nonnegative_and_tagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_map(&mut rng, 32, 32);
        let h = Arc::new(kernel(1, 1, 5.0));
        let out = unit_apply_kernel(&m, &h, ConvPath::Fft).unwrap();
        assert_eq!(out.domain_kind, DomainKind::RealNonNegative);
        assert!(out.data.iter().all(|v| v.im == 0.0 && v.re >= 0.0));
        assert_eq!(out.path_tag, vec![(1, 1, 5.0)]);
        assert_eq!(out.ni, 32);
        assert_eq!(out.nj, 32);
    }

    #[test]
    fn unit_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_map(&mut rng, 48, 48);
        let h = Arc::new(kernel(0, 2, 6.0));
        let a = unit_apply_kernel(&m, &h, ConvPath::Direct).unwrap();
        let b = unit_apply_kernel(&m, &h, ConvPath::Fft).unwrap();
        let scale = a.max_norm();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).norm() / scale < 1e-9);
        }
    }
}
