//! Invariant layer: global Fourier moments of each node activation, pooled
//! over annular frequency bands under the ℓ2 norm.
//!
//! With K = 0 and a single band the layer degenerates to the magnitude of the
//! map mean, i.e. plain global average pooling.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::engine::FeatureMap;
use crate::error::{HirError, Result};
use crate::network::{forward, scale_pool, ExecContext, NetworkSpec, NodeId, ScaleActivations};

/// Frequency sampling limits: coefficients over (n, m) ∈ [−K, K]², grouped
/// into `num_bands` annuli.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandConfig {
    pub k: usize,
    pub num_bands: usize,
}

impl BandConfig {
    pub fn new(k: usize, num_bands: usize) -> Result<Self> {
        if num_bands == 0 {
            return Err(HirError::Config("band count must be at least 1".into()));
        }
        if k == 0 && num_bands != 1 {
            return Err(HirError::Config(
                "K = 0 admits only a single band".into(),
            ));
        }
        Ok(BandConfig { k, num_bands })
    }

    /// Average pooling: K = 0, one band.
    pub fn average_pooling() -> Self {
        BandConfig { k: 0, num_bands: 1 }
    }
}

/// Fourier coefficients over the square lattice [−K, K]².
#[derive(Clone, Debug)]
pub struct MomentGrid {
    pub k: usize,
    values: Vec<Complex64>,
}

impl MomentGrid {
    #[inline]
    pub fn at(&self, n: i32, m: i32) -> Complex64 {
        let side = 2 * self.k as i32 + 1;
        self.values[((n + self.k as i32) * side + (m + self.k as i32)) as usize]
    }
}

/// Provenance of one invariant feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub node: NodeId,
    pub band: usize,
    pub radius_lo: f64,
    pub radius_hi: f64,
}

/// Ordered band-pooled features with their provenance.
#[derive(Clone, Debug)]
pub struct InvariantVector {
    pub values: Vec<f64>,
    pub meta: Vec<FeatureMeta>,
}

impl InvariantVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// DFT coefficients ⟨M, V_nm⟩ = (1/N_ij)·Σ M(i,j)·exp(−j2π(ni/N_i + mj/N_j))
/// for (n, m) ∈ [−K, K]². The (0, 0) term equals the mean of M.
pub fn global_fourier_moments(map: &FeatureMap, k: usize) -> Result<MomentGrid> {
    if k > map.ni.min(map.nj) / 2 {
        return Err(HirError::Config(format!(
            "K={k} exceeds the Nyquist bound for a {}x{} map",
            map.ni, map.nj
        )));
    }
    let mut data = map.data.clone();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(map.nj);
    for r in 0..map.ni {
        row_fft.process(&mut data[r * map.nj..(r + 1) * map.nj]);
    }
    let col_fft = planner.plan_fft_forward(map.ni);
    let mut buf = vec![Complex64::default(); map.ni];
    for c in 0..map.nj {
        for r in 0..map.ni {
            buf[r] = data[r * map.nj + c];
        }
        col_fft.process(&mut buf);
        for r in 0..map.ni {
            data[r * map.nj + c] = buf[r];
        }
    }
    let norm = 1.0 / (map.ni * map.nj) as f64;
    let side = 2 * k + 1;
    let mut values = vec![Complex64::default(); side * side];
    let ki = k as i32;
    for n in -ki..=ki {
        for m in -ki..=ki {
            let i = n.rem_euclid(map.ni as i32) as usize;
            let j = m.rem_euclid(map.nj as i32) as usize;
            values[((n + ki) * side as i32 + (m + ki)) as usize] = data[i * map.nj + j] * norm;
        }
    }
    Ok(MomentGrid { k, values })
}

/// Band edges: the i-th band covers ℓ2 radii [√2·K·(i−1)/#B, √2·K·i/#B),
/// with the last upper edge inclusive.
fn band_index(rho: f64, config: &BandConfig) -> usize {
    if config.k == 0 {
        return 0;
    }
    let step = std::f64::consts::SQRT_2 * config.k as f64 / config.num_bands as f64;
    ((rho / step).floor() as usize).min(config.num_bands - 1)
}

/// Sum coefficient magnitudes per band for a single moment grid.
pub fn band_pool(moments: &MomentGrid, config: &BandConfig, node: NodeId) -> InvariantVector {
    debug_assert_eq!(moments.k, config.k);
    let mut values = vec![0.0; config.num_bands];
    let ki = moments.k as i32;
    for n in -ki..=ki {
        for m in -ki..=ki {
            let rho = ((n * n + m * m) as f64).sqrt();
            values[band_index(rho, config)] += moments.at(n, m).norm();
        }
    }
    let step = if config.k == 0 {
        0.0
    } else {
        std::f64::consts::SQRT_2 * config.k as f64 / config.num_bands as f64
    };
    let meta = (0..config.num_bands)
        .map(|b| FeatureMeta {
            node,
            band: b,
            radius_lo: step * b as f64,
            radius_hi: if config.k == 0 { 0.0 } else { step * (b + 1) as f64 },
        })
        .collect();
    InvariantVector { values, meta }
}

fn extract_from_activations(
    acts: &ScaleActivations,
    config: &BandConfig,
) -> Result<InvariantVector> {
    let mut values = Vec::new();
    let mut meta = Vec::new();
    for (id, map) in &acts.map {
        let moments = global_fourier_moments(map, config.k)?;
        let mut banded = band_pool(&moments, config, *id);
        values.append(&mut banded.values);
        meta.append(&mut banded.meta);
    }
    Ok(InvariantVector { values, meta })
}

/// Full pipeline: forward pass, cross-scale pooling when the bank is
/// multi-scale, then per-node moments and band pooling, concatenated in
/// deterministic node order.
pub fn extract(
    image: &FeatureMap,
    net: &NetworkSpec,
    config: &BandConfig,
    ctx: &ExecContext,
) -> Result<InvariantVector> {
    let acts = forward(image, net, ctx)?;
    if net.is_multiscale() {
        let pooled = scale_pool(&acts, net.scale_reducer)?;
        extract_from_activations(&pooled, config)
    } else {
        extract_from_activations(&acts.per_scale[0], config)
    }
}
