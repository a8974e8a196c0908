//! Discrete convolution kernels H_nm^w sampled from the continuous basis by
//! per-pixel numerical integration.
//!
//! Each table covers a (2⌈w⌉+1)² raster with the disk centered on the middle
//! sample; pixels that miss the disk entirely stay exactly zero.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_value, gauss_legendre, BasisOrder, LocalFrame, RadialFamily};
use crate::error::{HirError, Result};

/// Pixel geometry (Δi, Δj); defaults to the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelGrid {
    pub delta_i: f64,
    pub delta_j: f64,
}

impl Default for PixelGrid {
    fn default() -> Self {
        PixelGrid {
            delta_i: 1.0,
            delta_j: 1.0,
        }
    }
}

impl PixelGrid {
    pub fn new(delta_i: f64, delta_j: f64) -> Result<Self> {
        if !(delta_i > 0.0 && delta_j > 0.0) {
            return Err(HirError::InvalidParameter(format!(
                "pixel extents must be positive, got ({delta_i}, {delta_j})"
            )));
        }
        Ok(PixelGrid { delta_i, delta_j })
    }
}

/// 2-D quadrature over one pixel: offsets relative to the pixel center in
/// units of the pixel extent, with weights summing to 1.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<(f64, f64, f64)>,
    pub order_label: String,
}

impl QuadratureRule {
    /// Single midpoint sample (zero-order approximation).
    pub fn midpoint() -> Self {
        QuadratureRule {
            nodes: vec![(0.0, 0.0, 1.0)],
            order_label: "midpoint-1".into(),
        }
    }

    /// k×k tensor-product Gauss rule; k = 2 gives the default 4-node rule.
    pub fn tensor_gauss(k: usize) -> Self {
        let base = gauss_legendre(k);
        let mut nodes = Vec::with_capacity(k * k);
        for &(xa, wa) in &base {
            for &(yb, wb) in &base {
                // map [-1,1] onto the unit pixel [-1/2, 1/2]
                nodes.push((0.5 * xa, 0.5 * yb, 0.25 * wa * wb));
            }
        }
        QuadratureRule {
            nodes,
            order_label: format!("tensor-gauss-{k}x{k}"),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Sampled kernel H_nm^w with its provenance.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub values: Vec<Complex64>,
    pub side: usize,
    pub order: BasisOrder,
    pub scale: f64,
    pub family: RadialFamily,
    pub rule_label: String,
}

impl KernelTable {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.side + j]
    }

    /// Index of the center sample, ⌈w⌉.
    pub fn center(&self) -> usize {
        self.side / 2
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum()
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }
}

/// Value h_nm^{uvw} for pixel (i, j): weighted conjugate basis samples scaled
/// by ΔiΔj/w², or exactly zero when the pixel rectangle misses the disk.
pub fn kernel_entry(
    family: &RadialFamily,
    order: BasisOrder,
    frame: &LocalFrame,
    i: f64,
    j: f64,
    grid: &PixelGrid,
    rule: &QuadratureRule,
) -> Complex64 {
    // closest point of the pixel rectangle to the disk center
    let gap_x = ((i - frame.u).abs() - 0.5 * grid.delta_i).max(0.0);
    let gap_y = ((j - frame.v).abs() - 0.5 * grid.delta_j).max(0.0);
    if gap_x * gap_x + gap_y * gap_y > frame.w * frame.w {
        return Complex64::new(0.0, 0.0);
    }
    let scale = grid.delta_i * grid.delta_j / (frame.w * frame.w);
    let mut acc = Complex64::new(0.0, 0.0);
    for &(xa, yb, c) in &rule.nodes {
        let x = i + xa * grid.delta_i;
        let y = j + yb * grid.delta_j;
        acc += basis_value(family, order, frame, x, y).conj() * c;
    }
    acc * scale
}

/// Build the full kernel table for scale w ≥ 1.
pub fn build_kernel(
    family: &RadialFamily,
    order: BasisOrder,
    w: f64,
    grid: &PixelGrid,
    rule: &QuadratureRule,
) -> Result<KernelTable> {
    if !(w >= 1.0) {
        return Err(HirError::InvalidParameter(format!(
            "kernel scale must be at least one pixel, got w={w}"
        )));
    }
    let half = w.ceil() as usize;
    let side = 2 * half + 1;
    let frame = LocalFrame::new(half as f64, half as f64, w)?;
    let mut values = vec![Complex64::default(); side * side];
    for i in 0..side {
        for j in 0..side {
            values[i * side + j] =
                kernel_entry(family, order, &frame, i as f64, j as f64, grid, rule);
        }
    }
    Ok(KernelTable {
        values,
        side,
        order,
        scale: w,
        family: *family,
        rule_label: rule.order_label.clone(),
    })
}

pub(crate) fn family_key_bits(family: &RadialFamily) -> (u8, u64, u64, u64) {
    match family {
        RadialFamily::Harmonic { alpha } => (0, alpha.to_bits(), 0, 0),
        RadialFamily::Jacobi { alpha, p, q } => (1, alpha.to_bits(), p.to_bits(), q.to_bits()),
        RadialFamily::Cosine => (2, 0, 0, 0),
    }
}

type CacheKey = ((u8, u64, u64, u64), i32, i32, u64, String);

/// Concurrent memoization of `build_kernel`: many readers, exclusive insert.
#[derive(Default)]
pub struct KernelCache {
    map: RwLock<HashMap<CacheKey, Arc<KernelTable>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &self,
        family: &RadialFamily,
        order: BasisOrder,
        w: f64,
        grid: &PixelGrid,
        rule: &QuadratureRule,
    ) -> Result<Arc<KernelTable>> {
        let key: CacheKey = (
            family_key_bits(family),
            order.n,
            order.m,
            w.to_bits(),
            rule.order_label.clone(),
        );
        if let Some(hit) = self.map.read().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let table = Arc::new(build_kernel(family, order, w, grid, rule)?);
        let mut guard = self.map.write().unwrap();
        Ok(Arc::clone(guard.entry(key).or_insert(table)))
    }

    pub fn clear(&self) {
        self.map.write().unwrap().clear();
    }
}

/// Sidecar descriptor written next to a kernel dump.
#[derive(Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub family: RadialFamily,
    pub n: i32,
    pub m: i32,
    pub w: f64,
    pub rule: String,
    pub side: usize,
}

/// Dump a kernel as (i, j, re, im) CSV rows plus a JSON descriptor.
pub fn dump_kernel(table: &KernelTable, csv_path: &std::path::Path) -> Result<()> {
    let wrap = |e: std::io::Error| HirError::Io {
        path: csv_path.display().to_string(),
        source: e,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path).map_err(wrap)?);
    writeln!(out, "i,j,re,im").map_err(wrap)?;
    for i in 0..table.side {
        for j in 0..table.side {
            let v = table.at(i, j);
            writeln!(out, "{i},{j},{:.9e},{:.9e}", v.re, v.im).map_err(wrap)?;
        }
    }
    let desc = KernelDescriptor {
        family: table.family,
        n: table.order.n,
        m: table.order.m,
        w: table.scale,
        rule: table.rule_label.clone(),
        side: table.side,
    };
    let json_path = csv_path.with_extension("json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&desc).expect("descriptor serializes"),
    )
    .map_err(|e| HirError::Io {
        path: json_path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
