//! Verification and desk-scale evaluation: geometric transforms, deviation
//! reports for equivariance and invariance, simple classifiers, and metrics.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::FeatureMap;
use crate::error::{HirError, Result};
use crate::invariant::{extract, BandConfig};
use crate::network::{forward, scale_pool, ExecContext, NetworkSpec, NodeId};

/// A geometric transform of the image plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    /// Exact grid rotation by `quarter_turns` * 90 degrees, counterclockwise.
    Rotate90 { quarter_turns: u32 },
    /// Exact mirror across the vertical axis (columns reversed).
    FlipHorizontal,
    /// Exact mirror across the horizontal axis (rows reversed).
    FlipVertical,
    /// Integer shift with zero fill.
    Translate { di: i64, dj: i64 },
    /// Bicubic rotation about the image center by an arbitrary angle.
    Rotate { degrees: f64 },
    /// Bicubic rescaling about the image center.
    Rescale { factor: f64 },
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            TransformKind::Rotate90 { quarter_turns } => write!(f, "rot90x{quarter_turns}"),
            TransformKind::FlipHorizontal => write!(f, "flip_h"),
            TransformKind::FlipVertical => write!(f, "flip_v"),
            TransformKind::Translate { di, dj } => write!(f, "translate({di},{dj})"),
            TransformKind::Rotate { degrees } => write!(f, "rotate({degrees})"),
            TransformKind::Rescale { factor } => write!(f, "rescale({factor})"),
        }
    }
}

fn rot90_once(m: &FeatureMap) -> FeatureMap {
    // (i, j) <- (j, ni - 1 - i) maps the old top row to the left column
    let mut out = FeatureMap::zeros(m.nj, m.ni);
    for i in 0..m.nj {
        for j in 0..m.ni {
            out.set(i, j, m.at(j, m.nj - 1 - i));
        }
    }
    out
}

fn flip_h(m: &FeatureMap) -> FeatureMap {
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    for i in 0..m.ni {
        for j in 0..m.nj {
            out.set(i, j, m.at(i, m.nj - 1 - j));
        }
    }
    out
}

fn flip_v(m: &FeatureMap) -> FeatureMap {
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    for i in 0..m.ni {
        for j in 0..m.nj {
            out.set(i, j, m.at(m.ni - 1 - i, j));
        }
    }
    out
}

fn translate(m: &FeatureMap, di: i64, dj: i64) -> FeatureMap {
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    for i in 0..m.ni {
        for j in 0..m.nj {
            let si = i as i64 - di;
            let sj = j as i64 - dj;
            if si >= 0 && sj >= 0 && (si as usize) < m.ni && (sj as usize) < m.nj {
                out.set(i, j, m.at(si as usize, sj as usize));
            }
        }
    }
    out
}

fn cubic_weight(t: f64) -> f64 {
    // Catmull-Rom style kernel with a = -0.5
    let a = -0.5;
    let t = t.abs();
    if t < 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn bicubic_at(m: &FeatureMap, y: f64, x: f64) -> Complex64 {
    let i0 = y.floor() as i64;
    let j0 = x.floor() as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for di in -1..=2 {
        let wi = cubic_weight(y - (i0 + di) as f64);
        if wi == 0.0 {
            continue;
        }
        for dj in -1..=2 {
            let wj = cubic_weight(x - (j0 + dj) as f64);
            if wj == 0.0 {
                continue;
            }
            let si = i0 + di;
            let sj = j0 + dj;
            if si >= 0 && sj >= 0 && (si as usize) < m.ni && (sj as usize) < m.nj {
                acc += m.at(si as usize, sj as usize) * (wi * wj);
            }
        }
    }
    acc
}

fn rotate_bicubic(m: &FeatureMap, degrees: f64) -> FeatureMap {
    let theta = degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let cy = (m.ni as f64 - 1.0) / 2.0;
    let cx = (m.nj as f64 - 1.0) / 2.0;
    let mut out = FeatureMap::zeros(m.ni, m.nj);
    for i in 0..m.ni {
        for j in 0..m.nj {
            // pull from the source by the inverse rotation
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            let sy = cy + c * dy + s * dx;
            let sx = cx - s * dy + c * dx;
            out.set(i, j, bicubic_at(m, sy, sx));
        }
    }
    out
}

fn rescale_bicubic(m: &FeatureMap, factor: f64) -> FeatureMap {
    let ni = ((m.ni as f64) * factor).round().max(1.0) as usize;
    let nj = ((m.nj as f64) * factor).round().max(1.0) as usize;
    let mut out = FeatureMap::zeros(ni, nj);
    for i in 0..ni {
        for j in 0..nj {
            out.set(i, j, bicubic_at(m, i as f64 / factor, j as f64 / factor));
        }
    }
    out
}

/// Apply a transform to a feature map.
pub fn apply_transform(m: &FeatureMap, t: &TransformKind) -> Result<FeatureMap> {
    match *t {
        TransformKind::Rotate90 { quarter_turns } => {
            let mut cur = m.clone();
            for _ in 0..quarter_turns % 4 {
                cur = rot90_once(&cur);
            }
            Ok(cur)
        }
        TransformKind::FlipHorizontal => Ok(flip_h(m)),
        TransformKind::FlipVertical => Ok(flip_v(m)),
        TransformKind::Translate { di, dj } => Ok(translate(m, di, dj)),
        TransformKind::Rotate { degrees } => Ok(rotate_bicubic(m, degrees)),
        TransformKind::Rescale { factor } => {
            if !(factor > 0.0) {
                return Err(HirError::InvalidParameter(format!(
                    "rescale factor must be positive, got {factor}"
                )));
            }
            Ok(rescale_bicubic(m, factor))
        }
    }
}

/// One measured deviation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub transform: String,
    pub node: String,
    pub deviation: f64,
}

/// Outcome of an equivariance or invariance check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeviationReport {
    pub check: String,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub passed: bool,
    pub entries: Vec<DeviationEntry>,
}

impl DeviationReport {
    fn from_entries(check: &str, tolerance: f64, entries: Vec<DeviationEntry>) -> Self {
        let max_deviation = entries.iter().map(|e| e.deviation).fold(0.0, f64::max);
        DeviationReport {
            check: check.to_string(),
            tolerance,
            max_deviation,
            passed: max_deviation <= tolerance,
            entries,
        }
    }
}

fn pooled_activations(
    image: &FeatureMap,
    net: &NetworkSpec,
    ctx: &ExecContext,
) -> Result<BTreeMap<NodeId, FeatureMap>> {
    let acts = forward(image, net, ctx)?;
    if net.is_multiscale() {
        Ok(scale_pool(&acts, net.scale_reducer)?.map)
    } else {
        Ok(acts.per_scale.into_iter().next().unwrap().map)
    }
}

fn interior_max_diff(a: &FeatureMap, b: &FeatureMap, margin: usize) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in margin..a.ni.saturating_sub(margin) {
        for j in margin..a.nj.saturating_sub(margin) {
            num = num.max((a.at(i, j) - b.at(i, j)).norm());
            den = den.max(a.at(i, j).norm());
        }
    }
    num / den.max(1e-12)
}

/// Compare, per node, transforming-then-processing against
/// processing-then-transforming. Boundary rings whose receptive field leaves
/// the frame are excluded, as is the zero-fill band a translation drags in.
pub fn equivariance_report(
    image: &FeatureMap,
    net: &NetworkSpec,
    ctx: &ExecContext,
    transforms: &[TransformKind],
    tolerance: f64,
) -> Result<DeviationReport> {
    let w_max = net.scales.iter().cloned().fold(0.0, f64::max);
    let base_margin = net.max_level * w_max.ceil() as usize;
    let base = pooled_activations(image, net, ctx)?;
    let mut entries = Vec::new();
    for t in transforms {
        let shift = match *t {
            TransformKind::Translate { di, dj } => di.unsigned_abs().max(dj.unsigned_abs()) as usize,
            _ => 0,
        };
        let margin = base_margin + shift;
        let transformed_first = pooled_activations(&apply_transform(image, t)?, net, ctx)?;
        for (node, map) in &base {
            let expected = apply_transform(map, t)?;
            let got = &transformed_first[node];
            entries.push(DeviationEntry {
                transform: t.to_string(),
                node: node.to_string(),
                deviation: interior_max_diff(&expected, got, margin),
            });
        }
    }
    Ok(DeviationReport::from_entries("equivariance", tolerance, entries))
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Compare the pooled descriptor of the original image against each
/// transformed copy, one relative-l2 deviation per transform.
pub fn invariance_report(
    image: &FeatureMap,
    net: &NetworkSpec,
    config: &BandConfig,
    ctx: &ExecContext,
    transforms: &[TransformKind],
    tolerance: f64,
) -> Result<DeviationReport> {
    let base = extract(image, net, config, ctx)?;
    let mut entries = Vec::new();
    for t in transforms {
        let other = extract(&apply_transform(image, t)?, net, config, ctx)?;
        if other.values.len() != base.values.len() {
            return Err(HirError::Shape(format!(
                "descriptor length changed under {t}: {} vs {}",
                base.values.len(),
                other.values.len()
            )));
        }
        entries.push(DeviationEntry {
            transform: t.to_string(),
            node: "all".into(),
            deviation: relative_l2(&base.values, &other.values),
        });
    }
    Ok(DeviationReport::from_entries("invariance", tolerance, entries))
}

/// Stratified train/test split: within each class, a seeded shuffle puts the
/// first `ratio` fraction (at least one sample) in the train set.
pub fn train_test_split(
    labels: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(HirError::InvalidParameter(format!(
            "train ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        let cut = ((idxs.len() as f64 * ratio).round() as usize).clamp(1, idxs.len() - 1);
        train.extend_from_slice(&idxs[..cut]);
        test.extend_from_slice(&idxs[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Which classifier to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Centroid,
    Ridge,
}

/// Per-column affine normalization fitted on training data only.
#[derive(Clone, Debug)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; cols];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; cols];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(*row) {
                let d = x - m;
                *v += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| (v / n).sqrt().max(1e-12))
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// A fitted classifier.
#[derive(Clone, Debug)]
pub enum TrainedClassifier {
    Centroid {
        standardizer: Standardizer,
        classes: Vec<usize>,
        centroids: Vec<Vec<f64>>,
    },
    Ridge {
        standardizer: Standardizer,
        classes: Vec<usize>,
        // one weight vector (with trailing bias) per class
        weights: Vec<Vec<f64>>,
    },
}

fn cholesky_solve(a: &mut [Vec<f64>], b: &mut [Vec<f64>]) -> Result<()> {
    // in-place lower Cholesky of the symmetric positive definite `a`,
    // then forward/back substitution for each right-hand side in `b`
    let n = a.len();
    for k in 0..n {
        let mut d = a[k][k];
        for t in 0..k {
            d -= a[k][t] * a[k][t];
        }
        if d <= 0.0 {
            return Err(HirError::Domain(
                "normal matrix is not positive definite".into(),
            ));
        }
        let d = d.sqrt();
        a[k][k] = d;
        for i in k + 1..n {
            let mut s = a[i][k];
            for t in 0..k {
                s -= a[i][t] * a[k][t];
            }
            a[i][k] = s / d;
        }
    }
    for rhs in b.iter_mut() {
        for i in 0..n {
            let mut s = rhs[i];
            for t in 0..i {
                s -= a[i][t] * rhs[t];
            }
            rhs[i] = s / a[i][i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for t in i + 1..n {
                s -= a[t][i] * rhs[t];
            }
            rhs[i] = s / a[i][i];
        }
    }
    Ok(())
}

/// Fit a classifier on the given rows. Features are standardized with
/// statistics from these rows alone.
pub fn train_classifier(
    kind: ClassifierKind,
    rows: &[&[f64]],
    labels: &[usize],
    ridge_lambda: f64,
) -> Result<TrainedClassifier> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(HirError::Shape(format!(
            "training set has {} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let standardizer = Standardizer::fit(rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    match kind {
        ClassifierKind::Centroid => {
            let cols = x[0].len();
            let mut centroids = vec![vec![0.0; cols]; classes.len()];
            let mut counts = vec![0usize; classes.len()];
            for (row, &label) in x.iter().zip(labels) {
                let c = classes.binary_search(&label).unwrap();
                counts[c] += 1;
                for (acc, v) in centroids[c].iter_mut().zip(row) {
                    *acc += v;
                }
            }
            for (centroid, count) in centroids.iter_mut().zip(&counts) {
                for v in centroid.iter_mut() {
                    *v /= *count as f64;
                }
            }
            Ok(TrainedClassifier::Centroid {
                standardizer: standardizer,
                classes,
                centroids,
            })
        }
        ClassifierKind::Ridge => {
            // one-vs-rest least squares with an unregularized-in-spirit bias
            // column folded into the design matrix
            let d = x[0].len() + 1;
            let n = x.len();
            let mut gram = vec![vec![0.0; d]; d];
            let mut xty = vec![vec![0.0; d]; classes.len()];
            let mut aug = vec![0.0; d];
            for (row, &label) in x.iter().zip(labels) {
                aug[..d - 1].copy_from_slice(row);
                aug[d - 1] = 1.0;
                for i in 0..d {
                    for j in 0..=i {
                        gram[i][j] += aug[i] * aug[j];
                    }
                }
                let c = classes.binary_search(&label).unwrap();
                for (acc, v) in xty[c].iter_mut().zip(&aug) {
                    *acc += v;
                }
            }
            for i in 0..d {
                for j in i + 1..d {
                    gram[i][j] = gram[j][i];
                }
                gram[i][i] += ridge_lambda * n as f64;
            }
            cholesky_solve(&mut gram, &mut xty)?;
            Ok(TrainedClassifier::Ridge {
                standardizer: standardizer,
                classes,
                weights: xty,
            })
        }
    }
}

impl TrainedClassifier {
    /// Predict the class of one row; score ties resolve to the lowest class id.
    pub fn predict(&self, row: &[f64]) -> usize {
        match self {
            TrainedClassifier::Centroid {
                standardizer,
                classes,
                centroids,
            } => {
                let x = standardizer.apply(row);
                let mut best = (f64::INFINITY, classes[0]);
                for (centroid, &class) in centroids.iter().zip(classes) {
                    let dist: f64 = x
                        .iter()
                        .zip(centroid)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if dist < best.0 {
                        best = (dist, class);
                    }
                }
                best.1
            }
            TrainedClassifier::Ridge {
                standardizer,
                classes,
                weights,
            } => {
                let x = standardizer.apply(row);
                let mut best = (f64::NEG_INFINITY, classes[0]);
                for (w, &class) in weights.iter().zip(classes) {
                    let score: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                        + w[w.len() - 1];
                    if score > best.0 {
                        best = (score, class);
                    }
                }
                best.1
            }
        }
    }
}

/// Macro-averaged classification metrics, in percent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Score predictions against ground truth. Classes with no predicted (or no
/// true) samples contribute zero to the corresponding average.
pub fn evaluate(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(HirError::Shape(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let mut classes: Vec<usize> = truth.iter().chain(predicted).cloned().collect();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let index = |c: usize| classes.binary_search(&c).unwrap();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[index(t)][index(p)] += 1;
    }
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut per_class_f1 = Vec::with_capacity(k);
    let mut correct = 0usize;
    for c in 0..k {
        let tp = confusion[c][c];
        correct += tp;
        let pred_total: usize = (0..k).map(|t| confusion[t][c]).sum();
        let true_total: usize = confusion[c].iter().sum();
        let precision = if pred_total > 0 {
            tp as f64 / pred_total as f64
        } else {
            0.0
        };
        let recall = if true_total > 0 {
            tp as f64 / true_total as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
        per_class_f1.push(100.0 * f1);
    }
    Ok(Metrics {
        accuracy: 100.0 * correct as f64 / truth.len() as f64,
        macro_precision: 100.0 * precision_sum / k as f64,
        macro_recall: 100.0 * recall_sum / k as f64,
        macro_f1: 100.0 * f1_sum / k as f64,
        per_class_f1,
    })
}
