//! Feature and architecture selection: Fisher-ratio ranking of invariant
//! features and pruning of the network down to the paths that produce the
//! selected features.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{HirError, Result};
use crate::network::{NetworkSpec, NodeId};

const FISHER_EPS: f64 = 1e-12;

/// Row-major matrix of invariant features with one class label per row.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
    /// Originating node per column, when known.
    pub column_nodes: Option<Vec<NodeId>>,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f64>,
        rows: usize,
        cols: usize,
        labels: Vec<usize>,
        column_nodes: Option<Vec<NodeId>>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HirError::Shape(format!(
                "feature matrix holds {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if labels.len() != rows {
            return Err(HirError::Shape(format!(
                "{} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(nodes) = &column_nodes {
            if nodes.len() != cols {
                return Err(HirError::Shape(format!(
                    "{} column nodes for {cols} columns",
                    nodes.len()
                )));
            }
        }
        Ok(FeatureMatrix {
            data,
            rows,
            cols,
            labels,
            column_nodes,
        })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Ranking (and optionally a top-k cut) over feature columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionResult {
    pub ranked_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub selected_k: usize,
    pub surviving_node_ids: BTreeSet<String>,
}

/// Fisher discriminant ratio per column: weighted between-class variance of
/// the class means over pooled within-class variance. Constant columns score
/// zero. Descending stable sort, ties broken by lower column index.
pub fn rank_features(matrix: &FeatureMatrix) -> Result<SelectionResult> {
    let classes = matrix.class_count();
    if classes < 2 {
        return Err(HirError::Config(
            "feature ranking needs at least two classes".into(),
        ));
    }
    let mut class_sizes = vec![0usize; classes];
    for &l in &matrix.labels {
        class_sizes[l] += 1;
    }
    if class_sizes.iter().any(|&c| c < 2) {
        return Err(HirError::Config(
            "feature ranking needs at least two samples per class".into(),
        ));
    }
    let mut scores = vec![0.0; matrix.cols];
    for col in 0..matrix.cols {
        let mut class_sum = vec![0.0; classes];
        let mut class_sq = vec![0.0; classes];
        let mut total = 0.0;
        for row in 0..matrix.rows {
            let v = matrix.at(row, col);
            class_sum[matrix.labels[row]] += v;
            class_sq[matrix.labels[row]] += v * v;
            total += v;
        }
        let grand_mean = total / matrix.rows as f64;
        let mut between = 0.0;
        let mut within = 0.0;
        for c in 0..classes {
            let nc = class_sizes[c] as f64;
            let mean = class_sum[c] / nc;
            between += nc * (mean - grand_mean) * (mean - grand_mean);
            within += class_sq[c] - nc * mean * mean;
        }
        between /= matrix.rows as f64;
        within /= matrix.rows as f64;
        if between <= 0.0 {
            scores[col] = 0.0;
        } else {
            scores[col] = between / (within.max(0.0) + FISHER_EPS);
        }
    }
    let mut ranked: Vec<usize> = (0..matrix.cols).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(SelectionResult {
        ranked_indices: ranked,
        scores,
        selected_k: matrix.cols,
        surviving_node_ids: surviving_nodes(matrix, matrix.cols, None),
    })
}

fn surviving_nodes(
    matrix: &FeatureMatrix,
    k: usize,
    ranked: Option<&[usize]>,
) -> BTreeSet<String> {
    let Some(nodes) = &matrix.column_nodes else {
        return BTreeSet::new();
    };
    match ranked {
        Some(order) => order.iter().take(k).map(|&c| nodes[c].to_string()).collect(),
        None => nodes.iter().map(|n| n.to_string()).collect(),
    }
}

/// Keep only the first k ranked columns and recompute the surviving nodes.
pub fn select_top_k(
    result: &SelectionResult,
    matrix: &FeatureMatrix,
    k: usize,
) -> Result<SelectionResult> {
    if k == 0 || k > result.ranked_indices.len() {
        return Err(HirError::Config(format!(
            "selection size must be in 1..={}, got {k}",
            result.ranked_indices.len()
        )));
    }
    Ok(SelectionResult {
        ranked_indices: result.ranked_indices.clone(),
        scores: result.scores.clone(),
        selected_k: k,
        surviving_node_ids: surviving_nodes(matrix, k, Some(&result.ranked_indices)),
    })
}

/// Selected column indices in their original column order.
pub fn selected_columns(result: &SelectionResult) -> Vec<usize> {
    let mut cols: Vec<usize> = result
        .ranked_indices
        .iter()
        .take(result.selected_k)
        .copied()
        .collect();
    cols.sort_unstable();
    cols
}

/// Remove every node that neither contributes a selected feature nor lies on
/// the path of one. Extraction with the pruned network reproduces exactly
/// the columns of the retained nodes.
pub fn prune_network(net: &NetworkSpec, result: &SelectionResult) -> Result<NetworkSpec> {
    let mut keep: BTreeSet<NodeId> = BTreeSet::new();
    for s in &result.surviving_node_ids {
        let id: NodeId = s.parse()?;
        // the whole root path is needed to compute the node's activation
        let mut cursor = Some(id);
        while let Some(node) = cursor {
            keep.insert(node);
            cursor = net.parent(node);
        }
    }
    if keep.is_empty() {
        return Err(HirError::Config(
            "selection does not map to any network node".into(),
        ));
    }
    let mut pruned = net.clone();
    for id in net.nodes() {
        if !keep.contains(&id) {
            pruned.pruned_node_ids.insert(id);
        }
    }
    Ok(pruned)
}
