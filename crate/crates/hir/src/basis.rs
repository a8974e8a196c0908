//! Continuous polar basis functions V_nm(r, θ) = R_n(r) · exp(jmθ).
//!
//! Three radial families are provided: a harmonic family with fractional
//! exponent α, a Jacobi-type polynomial family with parameters (α, p, q),
//! and the cosine family used throughout the experiments. All three satisfy
//! the weighted orthogonality ∫₀¹ R_n R_n'* r dr = δ_nn' / 2π.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HirError, Result};

/// Radial family selector with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RadialFamily {
    /// √(α r^(α−2) / 2π) · exp(j 2nπ r^α)
    Harmonic { alpha: f64 },
    /// Orthonormalized Jacobi-type polynomials in r^α.
    Jacobi { alpha: f64, p: f64, q: f64 },
    /// 1/√π (n = 0), √(2/π) cos(nπ r²) (n > 0)
    Cosine,
}

impl RadialFamily {
    pub fn harmonic(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(HirError::InvalidParameter(format!(
                "harmonic family requires alpha > 0, got {alpha}"
            )));
        }
        Ok(RadialFamily::Harmonic { alpha })
    }

    pub fn jacobi(alpha: f64, p: f64, q: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(HirError::InvalidParameter(format!(
                "jacobi family requires alpha > 0, got {alpha}"
            )));
        }
        if !(p - q > -1.0) || !(q > 0.0) {
            return Err(HirError::InvalidParameter(format!(
                "jacobi family requires p - q > -1 and q > 0, got p={p}, q={q}"
            )));
        }
        Ok(RadialFamily::Jacobi { alpha, p, q })
    }

    pub fn cosine() -> Self {
        RadialFamily::Cosine
    }

    /// Whether R_n is real-valued for every order.
    pub fn is_real(&self) -> bool {
        !matches!(self, RadialFamily::Harmonic { .. })
    }
}

/// Order parameter (n, m): radial order and angular repetition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisOrder {
    pub n: i32,
    pub m: i32,
}

impl BasisOrder {
    pub fn new(n: i32, m: i32) -> Result<Self> {
        if n < 0 {
            return Err(HirError::InvalidParameter(format!(
                "radial order must be non-negative, got n={n}"
            )));
        }
        Ok(BasisOrder { n, m })
    }
}

/// Disk placement: center (u, v) and radius w in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl LocalFrame {
    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        if !(w > 0.0) {
            return Err(HirError::InvalidParameter(format!(
                "disk radius must be positive, got w={w}"
            )));
        }
        Ok(LocalFrame { u, v, w })
    }
}

/// Natural log of |Γ(x)| together with the sign of Γ(x).
///
/// Lanczos approximation for x > 0, reflection formula otherwise. Working in
/// log space keeps the Jacobi normalization finite for n well past 20, where
/// Γ(p + n + k) itself overflows f64.
pub fn ln_gamma_signed(x: f64) -> (f64, f64) {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Γ(x) Γ(1−x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        if s == 0.0 {
            return (f64::INFINITY, 1.0);
        }
        let (lg, sg) = ln_gamma_signed(1.0 - x);
        (
            std::f64::consts::PI.ln() - s.abs().ln() - lg,
            s.signum() * sg,
        )
    } else {
        let xm1 = x - 1.0;
        let mut acc = COEF[0];
        for (i, c) in COEF.iter().enumerate().skip(1) {
            acc += c / (xm1 + i as f64);
        }
        let t = xm1 + G + 0.5;
        let lg = 0.5 * (2.0 * std::f64::consts::PI).ln() + (xm1 + 0.5) * t.ln() - t + acc.ln();
        (lg, 1.0)
    }
}

fn radial_harmonic(alpha: f64, n: i32, r: f64) -> Complex64 {
    let amp = (alpha * r.powf(alpha - 2.0) / (2.0 * std::f64::consts::PI)).sqrt();
    let phase = 2.0 * n as f64 * std::f64::consts::PI * r.powf(alpha);
    Complex64::from_polar(amp, phase)
}

fn radial_jacobi(alpha: f64, p: f64, q: f64, n: i32, r: f64) -> Complex64 {
    let nf = n as f64;
    let (lg_qn, s_qn) = ln_gamma_signed(q + nf);
    let (lg_pn, s_pn) = ln_gamma_signed(p + nf);
    let (lg_pqn, s_pqn) = ln_gamma_signed(p - q + nf + 1.0);
    let (lg_nf, _) = ln_gamma_signed(nf + 1.0);
    let ra = r.powf(alpha);
    let ln_norm = alpha.ln() + (alpha * q - 2.0) * r.ln() + (p - q) * (1.0 - ra).max(0.0).ln()
        + (p + 2.0 * nf).ln()
        + lg_qn
        + lg_nf
        - (2.0 * std::f64::consts::PI).ln()
        - lg_pn
        - lg_pqn;
    let norm_sign = s_qn * s_pn * s_pqn * (p + 2.0 * nf).signum();
    debug_assert!(norm_sign > 0.0, "jacobi normalization must be positive");
    let mut sum = 0.0;
    for k in 0..=n {
        let kf = k as f64;
        let (lg_pnk, s_pnk) = ln_gamma_signed(p + nf + kf);
        let (lg_k, _) = ln_gamma_signed(kf + 1.0);
        let (lg_nk, _) = ln_gamma_signed(nf - kf + 1.0);
        let (lg_qk, s_qk) = ln_gamma_signed(q + kf);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * s_pnk * s_qk * (lg_pnk - lg_k - lg_nk - lg_qk + alpha * kf * r.ln()).exp();
    }
    Complex64::new((0.5 * ln_norm).exp() * sum, 0.0)
}

fn radial_cosine(n: i32, r: f64) -> Complex64 {
    let v = if n == 0 {
        1.0 / std::f64::consts::PI.sqrt()
    } else {
        (2.0 / std::f64::consts::PI).sqrt() * (n as f64 * std::f64::consts::PI * r * r).cos()
    };
    Complex64::new(v, 0.0)
}

/// Radial basis value R_n(r). `r` must lie in [0, 1].
pub fn radial_value(family: &RadialFamily, n: i32, r: f64) -> Result<Complex64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(HirError::Domain(format!("radial argument r={r} not in [0,1]")));
    }
    Ok(match family {
        RadialFamily::Harmonic { alpha } => radial_harmonic(*alpha, n, r),
        RadialFamily::Jacobi { alpha, p, q } => radial_jacobi(*alpha, *p, *q, n, r),
        RadialFamily::Cosine => radial_cosine(n, r),
    })
}

/// Angular factor A_m(θ) = exp(jmθ); unit modulus by construction.
pub fn angular_value(m: i32, theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, m as f64 * theta)
}

/// Full basis value V_nm at cartesian (x, y) within a local frame.
///
/// Zero outside the closed disk of radius w; the frame center maps to
/// r' = 0 with θ' fixed at 0.
pub fn basis_value(
    family: &RadialFamily,
    order: BasisOrder,
    frame: &LocalFrame,
    x: f64,
    y: f64,
) -> Complex64 {
    let dx = x - frame.u;
    let dy = y - frame.v;
    let dist = (dx * dx + dy * dy).sqrt();
    let r = dist / frame.w;
    if r > 1.0 {
        return Complex64::new(0.0, 0.0);
    }
    let theta = if dist == 0.0 { 0.0 } else { dy.atan2(dx) };
    let radial = radial_value(family, order.n, r).expect("r clamped to [0,1]");
    radial * angular_value(order.m, theta)
}

/// 1-D quadrature on [0, 1]: positions with weights.
#[derive(Clone, Debug)]
pub struct Quad1d {
    pub nodes: Vec<(f64, f64)>,
    pub label: String,
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
    assert!(k >= 1);
    let mut out = Vec::with_capacity(k);
    let kf = k as f64;
    for i in 0..k {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0_f64, x);
            if k == 1 {
                p0 = x;
            }
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 1 { x } else { p1 };
            let pk_prev = if k == 1 { 1.0 } else { p0 };
            let dp = kf * (x * pk - pk_prev) / (x * x - 1.0);
            let dx = pk / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0_f64, x);
        for j in 2..=k {
            let jf = j as f64;
            let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
            p0 = p1;
            p1 = p2;
        }
        let pk_prev = if k == 1 { 1.0 } else { p0 };
        let pk = if k == 1 { x } else { p1 };
        let dp = kf * (x * pk - pk_prev) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

impl Quad1d {
    /// Composite Gauss-Legendre rule: `intervals` equal subintervals of [0, 1]
    /// with a `points`-node rule on each.
    pub fn composite_gauss(intervals: usize, points: usize) -> Self {
        let base = gauss_legendre(points);
        let mut nodes = Vec::with_capacity(intervals * points);
        let h = 1.0 / intervals as f64;
        for i in 0..intervals {
            let mid = (i as f64 + 0.5) * h;
            for &(x, w) in &base {
                nodes.push((mid + 0.5 * h * x, 0.5 * h * w));
            }
        }
        Quad1d {
            nodes,
            label: format!("composite-gauss-{intervals}x{points}"),
        }
    }
}

/// Gram matrix of radial inner products ∫₀¹ R_n R_n'* r dr for n, n' ≤ n_max.
///
/// Each entry should approximate δ_nn' / 2π for an orthonormal family.
pub fn orthogonality_gram(
    family: &RadialFamily,
    n_max: usize,
    rule: &Quad1d,
) -> Result<Vec<Vec<Complex64>>> {
    let dim = n_max + 1;
    // evaluate each R_n on the shared node set once
    let mut samples = vec![vec![Complex64::default(); rule.nodes.len()]; dim];
    for (n, row) in samples.iter_mut().enumerate() {
        for (idx, &(r, _)) in rule.nodes.iter().enumerate() {
            row[idx] = radial_value(family, n as i32, r)?;
        }
    }
    let mut gram = vec![vec![Complex64::default(); dim]; dim];
    for n in 0..dim {
        for n2 in 0..dim {
            let mut acc = Complex64::default();
            for (idx, &(r, wgt)) in rule.nodes.iter().enumerate() {
                acc += samples[n][idx] * samples[n2][idx].conj() * wgt * r;
            }
            gram[n][n2] = acc;
        }
    }
    Ok(gram)
}
