//! Tree-structured cascades of representation units and multi-scale banks.
//!
//! Level l carries one unit node per order (n, m) with n + m = l plus one
//! identity skip node. Each node has a single parent on the previous level
//! (units chain through (n, m−1), falling back to (n−1, 0); skips chain
//! through skips), so every root-to-node path is a valid increasing-order
//! path and each node owns exactly one activation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisOrder, RadialFamily};
use crate::engine::{unit_apply_kernel, ConvPath, FeatureMap};
use crate::error::{HirError, Result};
use crate::kernels::{KernelCache, PixelGrid, QuadratureRule};

pub const MAX_LEVEL: usize = 8;

/// Identifier of one node in the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeId {
    Unit { level: usize, n: i32, m: i32 },
    Skip { level: usize },
}

impl NodeId {
    fn sort_key(&self) -> (usize, u8, i32) {
        match *self {
            NodeId::Unit { level, n, .. } => (level, 0, n),
            NodeId::Skip { level } => (level, 1, 0),
        }
    }

    pub fn level(&self) -> usize {
        match *self {
            NodeId::Unit { level, .. } | NodeId::Skip { level } => level,
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            NodeId::Unit { level, n, m } => write!(f, "u{level}:{n}:{m}"),
            NodeId::Skip { level } => write!(f, "s{level}"),
        }
    }
}

impl std::str::FromStr for NodeId {
    type Err = HirError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HirError::Parse {
            path: "<node id>".into(),
            message: format!("malformed node id `{s}`"),
        };
        if let Some(rest) = s.strip_prefix('u') {
            let mut it = rest.split(':');
            let level = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let n = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let m = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if it.next().is_some() {
                return Err(bad());
            }
            Ok(NodeId::Unit { level, n, m })
        } else if let Some(rest) = s.strip_prefix('s') {
            Ok(NodeId::Skip {
                level: rest.parse().map_err(|_| bad())?,
            })
        } else {
            Err(bad())
        }
    }
}

/// Ordered unit parameters along one root-to-node cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    pub lambdas: Vec<(i32, i32, f64)>,
}

impl PathSpec {
    pub fn new(lambdas: Vec<(i32, i32, f64)>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(HirError::Config("path must contain at least one unit".into()));
        }
        for pair in lambdas.windows(2) {
            let a = pair[0].0.abs() + pair[0].1.abs();
            let b = pair[1].0.abs() + pair[1].1.abs();
            if b < a {
                return Err(HirError::Config(format!(
                    "path order must be non-decreasing under the l1 norm, got {a} then {b}"
                )));
            }
        }
        Ok(PathSpec { lambdas })
    }
}

/// How corresponding activations are merged across scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleReducer {
    Max,
    Mean,
}

/// The network: topology is implied by (max_level, fan_out_cap, pruned set);
/// scale_set holds one w for single-scale use or a dyadic bank.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub family: RadialFamily,
    pub max_level: usize,
    pub scales: Vec<f64>,
    pub fan_out_cap: Option<usize>,
    pub pruned_node_ids: BTreeSet<NodeId>,
    pub scale_reducer: ScaleReducer,
}

#[derive(Serialize, Deserialize)]
struct NetworkSpecRepr {
    family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    max_level: usize,
    scales: Vec<f64>,
    fan_out_cap: Option<usize>,
    pruned_node_ids: Vec<String>,
    #[serde(default = "default_reducer")]
    scale_reducer: ScaleReducer,
}

fn default_reducer() -> ScaleReducer {
    ScaleReducer::Max
}

impl NetworkSpec {
    /// Single-scale tree of depth L at scale w.
    pub fn build_tree(max_level: usize, w: f64, family: RadialFamily) -> Result<Self> {
        if max_level == 0 || max_level > MAX_LEVEL {
            return Err(HirError::Config(format!(
                "depth must be in 1..={MAX_LEVEL}, got {max_level}"
            )));
        }
        if !(w >= 1.0) {
            return Err(HirError::Config(format!("scale must be >= 1, got {w}")));
        }
        Ok(NetworkSpec {
            family,
            max_level,
            scales: vec![w],
            fan_out_cap: None,
            pruned_node_ids: BTreeSet::new(),
            scale_reducer: ScaleReducer::Max,
        })
    }

    /// Dyadic bank {2^t : t_min ≤ t ≤ t_max}, identical topology per scale.
    pub fn build_multiscale(
        max_level: usize,
        t_min: i32,
        t_max: i32,
        family: RadialFamily,
    ) -> Result<Self> {
        if t_min > t_max {
            return Err(HirError::Config(format!(
                "scale range requires t_min <= t_max, got {t_min}..{t_max}"
            )));
        }
        if t_min < 0 {
            return Err(HirError::Config(format!(
                "2^t_min must be at least one pixel, got t_min={t_min}"
            )));
        }
        let mut spec = NetworkSpec::build_tree(max_level, 1.0, family)?;
        spec.scales = (t_min..=t_max).map(|t| (2.0_f64).powi(t)).collect();
        Ok(spec)
    }

    /// Unit orders at one level, ordered by ascending n, honoring the cap.
    pub fn units_at_level(&self, level: usize) -> Vec<BasisOrder> {
        let count = level + 1;
        let capped = match self.fan_out_cap {
            Some(c) => count.min(c),
            None => count,
        };
        (0..capped as i32)
            .map(|n| BasisOrder {
                n,
                m: level as i32 - n,
            })
            .collect()
    }

    /// All nodes in deterministic order (levels ascending, units by n, skip
    /// last), pruned nodes excluded.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for level in 1..=self.max_level {
            for order in self.units_at_level(level) {
                let id = NodeId::Unit {
                    level,
                    n: order.n,
                    m: order.m,
                };
                if !self.pruned_node_ids.contains(&id) {
                    out.push(id);
                }
            }
            let skip = NodeId::Skip { level };
            if !self.pruned_node_ids.contains(&skip) {
                out.push(skip);
            }
        }
        out
    }

    /// Parent in the cascade tree; None for level-1 nodes (the input image).
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        match id {
            NodeId::Unit { level, n, m } => {
                if level == 1 {
                    None
                } else if m > 0 {
                    Some(NodeId::Unit {
                        level: level - 1,
                        n,
                        m: m - 1,
                    })
                } else {
                    Some(NodeId::Unit {
                        level: level - 1,
                        n: n - 1,
                        m: 0,
                    })
                }
            }
            NodeId::Skip { level } => {
                if level == 1 {
                    None
                } else {
                    Some(NodeId::Skip { level: level - 1 })
                }
            }
        }
    }

    /// Unit parameters along the root path of a node, at a given scale.
    pub fn path_for(&self, id: NodeId, w: f64) -> Result<PathSpec> {
        let mut lambdas = Vec::new();
        let mut cursor = Some(id);
        while let Some(node) = cursor {
            if let NodeId::Unit { n, m, .. } = node {
                lambdas.push((n, m, w));
            }
            cursor = self.parent(node);
        }
        lambdas.reverse();
        PathSpec::new(lambdas)
    }

    pub fn is_multiscale(&self) -> bool {
        self.scales.len() > 1
    }

    pub fn to_json(&self) -> String {
        let (family, alpha, p, q) = match self.family {
            RadialFamily::Harmonic { alpha } => ("harmonic", Some(alpha), None, None),
            RadialFamily::Jacobi { alpha, p, q } => ("jacobi", Some(alpha), Some(p), Some(q)),
            RadialFamily::Cosine => ("cosine", None, None, None),
        };
        let repr = NetworkSpecRepr {
            family: family.into(),
            alpha,
            p,
            q,
            max_level: self.max_level,
            scales: self.scales.clone(),
            fan_out_cap: self.fan_out_cap,
            pruned_node_ids: self.pruned_node_ids.iter().map(|n| n.to_string()).collect(),
            scale_reducer: self.scale_reducer,
        };
        serde_json::to_string_pretty(&repr).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: NetworkSpecRepr = serde_json::from_str(text).map_err(|e| HirError::Parse {
            path: "<network spec>".into(),
            message: e.to_string(),
        })?;
        let family = match repr.family.as_str() {
            "cosine" => RadialFamily::Cosine,
            "harmonic" => RadialFamily::harmonic(repr.alpha.unwrap_or(2.0))?,
            "jacobi" => RadialFamily::jacobi(
                repr.alpha.unwrap_or(2.0),
                repr.p.unwrap_or(4.0),
                repr.q.unwrap_or(3.0),
            )?,
            other => {
                return Err(HirError::Config(format!("unknown radial family `{other}`")))
            }
        };
        let mut pruned = BTreeSet::new();
        for s in &repr.pruned_node_ids {
            pruned.insert(s.parse()?);
        }
        if repr.max_level == 0 || repr.max_level > MAX_LEVEL {
            return Err(HirError::Config(format!(
                "depth must be in 1..={MAX_LEVEL}, got {}",
                repr.max_level
            )));
        }
        Ok(NetworkSpec {
            family,
            max_level: repr.max_level,
            scales: repr.scales,
            fan_out_cap: repr.fan_out_cap,
            pruned_node_ids: pruned,
            scale_reducer: repr.scale_reducer,
        })
    }
}

/// Execution context shared across forward passes.
pub struct ExecContext {
    pub cache: KernelCache,
    pub grid: PixelGrid,
    pub rule: QuadratureRule,
    pub conv: ConvPath,
}

impl ExecContext {
    pub fn new(conv: ConvPath) -> Self {
        ExecContext {
            cache: KernelCache::new(),
            grid: PixelGrid::default(),
            rule: QuadratureRule::tensor_gauss(2),
            conv,
        }
    }
}

/// Activations of one scale, keyed by node.
#[derive(Clone, Debug)]
pub struct ScaleActivations {
    pub w: f64,
    pub map: BTreeMap<NodeId, FeatureMap>,
}

/// Per-scale activation sets produced by a forward pass.
#[derive(Clone, Debug)]
pub struct NodeActivationSet {
    pub per_scale: Vec<ScaleActivations>,
}

fn forward_one_scale(
    image: &FeatureMap,
    net: &NetworkSpec,
    w: f64,
    ctx: &ExecContext,
) -> Result<ScaleActivations> {
    let side = 2 * (w.ceil() as usize) + 1;
    if side > image.ni || side > image.nj {
        return Err(HirError::Shape(format!(
            "image {}x{} too small for kernel side {side} at scale w={w}",
            image.ni, image.nj
        )));
    }
    let mut map: BTreeMap<NodeId, FeatureMap> = BTreeMap::new();
    for level in 1..=net.max_level {
        let level_nodes: Vec<NodeId> = net
            .nodes()
            .into_iter()
            .filter(|n| n.level() == level)
            .collect();
        let computed: Vec<(NodeId, Result<FeatureMap>)> = level_nodes
            .into_par_iter()
            .map(|id| {
                let parent_map = match net.parent(id) {
                    None => image,
                    Some(p) => match map.get(&p) {
                        Some(m) => m,
                        // parent pruned away: node is unreachable
                        None => return (id, Err(HirError::Config(format!(
                            "node {id} is unreachable: parent was pruned"
                        )))),
                    },
                };
                let act = match id {
                    NodeId::Skip { .. } => Ok(parent_map.clone()),
                    NodeId::Unit { n, m, .. } => {
                        let order = BasisOrder { n, m };
                        ctx.cache
                            .get(&net.family, order, w, &ctx.grid, &ctx.rule)
                            .and_then(|k| unit_apply_kernel(parent_map, &k, ctx.conv))
                    }
                };
                (id, act)
            })
            .collect();
        for (id, act) in computed {
            map.insert(id, act?);
        }
    }
    Ok(ScaleActivations { w, map })
}

/// Forward pass over every scale of the bank.
pub fn forward(
    image: &FeatureMap,
    net: &NetworkSpec,
    ctx: &ExecContext,
) -> Result<NodeActivationSet> {
    let per_scale = net
        .scales
        .iter()
        .map(|&w| forward_one_scale(image, net, w, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeActivationSet { per_scale })
}

/// Merge corresponding node activations across scales with the configured
/// reducer; requires at least two scales with identical topology.
pub fn scale_pool(
    activations: &NodeActivationSet,
    reducer: ScaleReducer,
) -> Result<ScaleActivations> {
    if activations.per_scale.len() < 2 {
        return Err(HirError::Config(
            "scale pooling needs at least two scales".into(),
        ));
    }
    let first = &activations.per_scale[0];
    let keys: Vec<NodeId> = first.map.keys().copied().collect();
    for sc in &activations.per_scale[1..] {
        let other: Vec<NodeId> = sc.map.keys().copied().collect();
        if other != keys {
            return Err(HirError::Shape(
                "scale banks have mismatched topologies".into(),
            ));
        }
    }
    let mut map = BTreeMap::new();
    let count = activations.per_scale.len() as f64;
    for id in keys {
        let mut acc = first.map[&id].clone();
        for sc in &activations.per_scale[1..] {
            let m = &sc.map[&id];
            if m.ni != acc.ni || m.nj != acc.nj {
                return Err(HirError::Shape(format!(
                    "activation sizes differ across scales at node {id}"
                )));
            }
            for (a, b) in acc.data.iter_mut().zip(&m.data) {
                match reducer {
                    ScaleReducer::Max => {
                        if b.re > a.re {
                            *a = *b;
                        }
                    }
                    ScaleReducer::Mean => {
                        *a += *b;
                    }
                }
            }
        }
        if reducer == ScaleReducer::Mean {
            for a in &mut acc.data {
                *a /= count;
            }
        }
        map.insert(id, acc);
    }
    Ok(ScaleActivations { w: first.w, map })
}
