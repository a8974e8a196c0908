//! Acceptance gate: ten end-to-end properties of the representation stack,
//! one pass/fail line each. Run with `--nocapture` to see the lines on
//! success as well.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;

use hir::adapt::{prune_network, rank_features, select_top_k, selected_columns, FeatureMatrix};
use hir::basis::{orthogonality_gram, BasisOrder, LocalFrame, Quad1d, RadialFamily};
use hir::engine::{conv_direct, conv_fft, magnitude, ConvPath, FeatureMap};
use hir::harness::{
    apply_transform, equivariance_report, evaluate, train_classifier, train_test_split,
    ClassifierKind, TransformKind,
};
use hir::invariant::{extract, BandConfig};
use hir::kernels::{build_kernel, kernel_entry, PixelGrid, QuadratureRule};
use hir::network::{forward, ExecContext, NetworkSpec, NodeId};
use hir::synth::{apodized_field, digit_image, smooth_field};

struct Outcome {
    number: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn families() -> Vec<(&'static str, RadialFamily)> {
    vec![
        ("harmonic", RadialFamily::harmonic(2.0).unwrap()),
        ("jacobi", RadialFamily::jacobi(2.0, 2.0, 2.0).unwrap()),
        ("cosine", RadialFamily::cosine()),
    ]
}

// 1. Gram matrices of all radial families stay within 1e-6 of (1/2π)·I.
fn criterion_1() -> (bool, String) {
    let rule = Quad1d::composite_gauss(24, 8);
    let target = 1.0 / (2.0 * std::f64::consts::PI);
    let mut worst = 0.0f64;
    for (name, family) in families() {
        let gram = orthogonality_gram(&family, 8, &rule).unwrap();
        for (i, row) in gram.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { target } else { 0.0 };
                let dev = (v - expected).norm();
                if dev > worst {
                    worst = dev;
                }
                if dev > 1e-6 {
                    return (
                        false,
                        format!("{name} gram[{i}][{j}] off by {dev:.3e}"),
                    );
                }
            }
        }
    }
    (true, format!("worst gram deviation {worst:.3e}"))
}

// 2. FFT and direct convolution agree within 1e-9 relative max-norm over 50
//    seeded (image, kernel) pairs.
fn criterion_2() -> (bool, String) {
    let grid = PixelGrid::default();
    let rule = QuadratureRule::tensor_gauss(2);
    let fams = families();
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let size = 32 + (trial as usize % 5) * 8;
        let image = smooth_field(1000 + trial, size);
        let (_, family) = &fams[trial as usize % 3];
        let order = BasisOrder::new((trial % 3) as i32, (trial % 4) as i32 - 1).unwrap();
        let w = 2.0 + (trial % 4) as f64 * 1.5;
        let kernel = build_kernel(family, order, w, &grid, &rule).unwrap();
        let a = conv_direct(&image, &kernel).unwrap();
        let b = conv_fft(&image, &kernel).unwrap();
        let diff = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        let scale = a.max_norm().max(1e-12);
        worst = worst.max(diff / scale);
        if diff / scale > 1e-9 {
            return (
                false,
                format!("trial {trial}: relative max-norm {:.3e}", diff / scale),
            );
        }
    }
    (true, format!("worst relative max-norm {worst:.3e} over 50 pairs"))
}

// 3. Per-pixel quadrature error against a 64-node reference strictly
//    decreases from the 1-node to the 4-node rule on boundary pixels.
fn criterion_3() -> (bool, String) {
    let grid = PixelGrid::default();
    let order = BasisOrder::new(2, 1).unwrap();
    let family = RadialFamily::cosine();
    let mut summary = String::new();
    for w in [4.0f64, 8.0, 16.0] {
        let c = w.ceil();
        let frame = LocalFrame::new(c, c, w).unwrap();
        // pixel centered on the disk boundary along the vertical axis
        let (i, j) = (c + w.round(), c);
        let reference = kernel_entry(&family, order, &frame, i, j, &grid, &QuadratureRule::tensor_gauss(8));
        let e1 = (kernel_entry(&family, order, &frame, i, j, &grid, &QuadratureRule::midpoint())
            - reference)
            .norm();
        let e4 = (kernel_entry(&family, order, &frame, i, j, &grid, &QuadratureRule::tensor_gauss(2))
            - reference)
            .norm();
        if !(e4 < e1) {
            return (false, format!("w={w}: 4-node error {e4:.3e} !< 1-node {e1:.3e}"));
        }
        summary.push_str(&format!("w={w}: {e1:.1e}->{e4:.1e}  "));
    }
    (true, summary.trim_end().to_string())
}

// 4. Strict equivariance at every node for L=3, w=10 over 20 seeded images.
fn criterion_4() -> (bool, String) {
    let net = NetworkSpec::build_tree(3, 10.0, RadialFamily::cosine()).unwrap();
    let ctx = ExecContext::new(ConvPath::Fft);
    let transforms = [
        TransformKind::Rotate90 { quarter_turns: 1 },
        TransformKind::Rotate90 { quarter_turns: 2 },
        TransformKind::Rotate90 { quarter_turns: 3 },
        TransformKind::FlipHorizontal,
        TransformKind::FlipVertical,
        TransformKind::Translate { di: 4, dj: -3 },
        TransformKind::Translate { di: -2, dj: 5 },
    ];
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let image = smooth_field(2000 + seed, 128);
        let report = equivariance_report(&image, &net, &ctx, &transforms, 1e-6).unwrap();
        worst = worst.max(report.max_deviation);
        if !report.passed {
            let bad = report
                .entries
                .iter()
                .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
                .unwrap();
            return (
                false,
                format!(
                    "seed {seed}: {} at {} deviates {:.3e}",
                    bad.transform, bad.node, bad.deviation
                ),
            );
        }
    }
    (true, format!("worst interior deviation {worst:.3e} over 20 images"))
}

// 5. Scaling covariance: doubling both the image and the kernel scale
//    commutes within 5% interior relative l2 on 10 images.
fn criterion_5() -> (bool, String) {
    let grid = PixelGrid::default();
    let rule = QuadratureRule::tensor_gauss(2);
    let order = BasisOrder::new(1, 1).unwrap();
    let family = RadialFamily::cosine();
    let w = 8.0;
    let small = Arc::new(build_kernel(&family, order, w, &grid, &rule).unwrap());
    let big = Arc::new(build_kernel(&family, order, 2.0 * w, &grid, &rule).unwrap());
    let up = TransformKind::Rescale { factor: 2.0 };
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let image = smooth_field(3000 + seed, 96);
        // process-then-upscale against upscale-then-process at twice the scale
        let a = apply_transform(&magnitude(&conv_fft(&image, &small).unwrap()), &up).unwrap();
        let b = magnitude(&conv_fft(&apply_transform(&image, &up).unwrap(), &big).unwrap());
        let margin = (2.0 * w).ceil() as usize + 4;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in margin..a.ni - margin {
            for j in margin..a.nj - margin {
                num += (a.at(i, j) - b.at(i, j)).norm_sqr();
                den += a.at(i, j).norm_sqr();
            }
        }
        let rel = (num / den.max(1e-300)).sqrt();
        worst = worst.max(rel);
        if rel >= 0.05 {
            return (false, format!("seed {seed}: interior relative l2 {rel:.4}"));
        }
    }
    (true, format!("worst interior relative l2 {worst:.4} over 10 images"))
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

// 6. End-to-end descriptor invariance: machine precision under grid-exact
//    transforms with a zero margin, within 5% under bicubic rotation.
fn criterion_6() -> (bool, String) {
    let net = NetworkSpec::build_tree(2, 6.0, RadialFamily::cosine()).unwrap();
    let ctx = ExecContext::new(ConvPath::Fft);
    let bands = BandConfig::new(12, 3).unwrap();
    let strict = [
        TransformKind::Rotate90 { quarter_turns: 1 },
        TransformKind::Rotate90 { quarter_turns: 2 },
        TransformKind::Rotate90 { quarter_turns: 3 },
        TransformKind::FlipHorizontal,
        TransformKind::FlipVertical,
        TransformKind::Translate { di: 3, dj: -4 },
    ];
    let mut worst_strict = 0.0f64;
    let mut worst_rotated = 0.0f64;
    for seed in 0..5u64 {
        let image = apodized_field(4000 + seed, 160, 16, 20);
        let base = extract(&image, &net, &bands, &ctx).unwrap();
        for t in &strict {
            let other = extract(&apply_transform(&image, t).unwrap(), &net, &bands, &ctx).unwrap();
            let rel = relative_l2(&base.values, &other.values);
            worst_strict = worst_strict.max(rel);
            if rel >= 1e-6 {
                return (false, format!("seed {seed}, {t}: relative l2 {rel:.3e}"));
            }
        }
        let rotated = apply_transform(&image, &TransformKind::Rotate { degrees: 33.0 }).unwrap();
        let other = extract(&rotated, &net, &bands, &ctx).unwrap();
        let rel = relative_l2(&base.values, &other.values);
        worst_rotated = worst_rotated.max(rel);
        if rel >= 0.05 {
            return (false, format!("seed {seed}, rotate(33°): relative l2 {rel:.4}"));
        }
    }
    (
        true,
        format!("strict {worst_strict:.3e}, bicubic 33° {worst_rotated:.4}"),
    )
}

// 7. K=0 with one band reproduces the modulus of each node map's mean.
fn criterion_7() -> (bool, String) {
    let net = NetworkSpec::build_tree(2, 3.0, RadialFamily::cosine()).unwrap();
    let ctx = ExecContext::new(ConvPath::Fft);
    let image = smooth_field(5000, 48);
    let vector = extract(&image, &net, &BandConfig::average_pooling(), &ctx).unwrap();
    let acts = forward(&image, &net, &ctx).unwrap();
    let maps = &acts.per_scale[0].map;
    if vector.values.len() != maps.len() {
        return (false, "one feature per node expected".into());
    }
    let mut worst = 0.0f64;
    for (value, meta) in vector.values.iter().zip(&vector.meta) {
        let map = &maps[&meta.node];
        let mean = map.data.iter().sum::<Complex64>() / map.data.len() as f64;
        let dev = (value - mean.norm()).abs();
        worst = worst.max(dev);
        if dev > 1e-12 {
            return (false, format!("node {}: off by {dev:.3e}", meta.node));
        }
    }
    (true, format!("worst |mean| deviation {worst:.3e}"))
}

// 8. FFT path faster than direct at w=32 on 256x256 and at most twice as slow
//    at w=2.
fn criterion_8() -> (bool, String) {
    let grid = PixelGrid::default();
    let rule = QuadratureRule::tensor_gauss(2);
    let order = BasisOrder::new(1, 1).unwrap();
    let family = RadialFamily::cosine();
    let image = smooth_field(6000, 256);
    // minimum over several warmed repetitions: the least noise-sensitive
    // estimator for short single-threaded kernels on a shared machine
    let best_ms = |f: &dyn Fn() -> FeatureMap| {
        f();
        f(); // warm caches, plans, and the cpu clock
        (0..7)
            .map(|_| {
                let start = Instant::now();
                f();
                start.elapsed().as_secs_f64() * 1000.0
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut report = String::new();
    let mut results = Vec::new();
    for w in [2.0, 32.0] {
        let kernel = build_kernel(&family, order, w, &grid, &rule).unwrap();
        let direct = best_ms(&|| conv_direct(&image, &kernel).unwrap());
        let fft = best_ms(&|| conv_fft(&image, &kernel).unwrap());
        report.push_str(&format!("w={w}: direct {direct:.2}ms fft {fft:.2}ms  "));
        results.push((w, direct, fft));
    }
    let (_, d2, f2) = results[0];
    let (_, d32, f32_) = results[1];
    if f32_ >= d32 {
        return (false, format!("fft not faster at w=32: {report}"));
    }
    if f2 > 2.0 * d2 {
        return (false, format!("fft more than 2x slower at w=2: {report}"));
    }
    (true, report.trim_end().to_string())
}

fn digit_features(
    net: &NetworkSpec,
    bands: &BandConfig,
    ctx: &ExecContext,
    per_class: usize,
    size: usize,
    transform: Option<&TransformKind>,
    test_ids: &std::collections::HashSet<usize>,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rayon::prelude::*;
    let jobs: Vec<(usize, usize, u64)> = (0..10)
        .flat_map(|d| (0..per_class).map(move |i| (d, i, (d * 10_007 + i) as u64)))
        .collect();
    let rows: Vec<(Vec<f64>, usize)> = jobs
        .par_iter()
        .map(|&(digit, idx, seed)| {
            let mut image = digit_image(digit, 7000 ^ seed, size);
            let flat = digit * per_class + idx;
            if let Some(t) = transform {
                if test_ids.contains(&flat) {
                    image = apply_transform(&image, t).unwrap();
                }
            }
            (extract(&image, net, bands, ctx).unwrap().values, digit)
        })
        .collect();
    rows.into_iter().unzip()
}

// 9. Digit protocol: the invariant pipeline loses < 3 macro-F1 points when
//    the test split is rotated/flipped; a raw-pixel baseline loses > 20.
fn criterion_9() -> (bool, String) {
    let per_class = 100;
    let size = 64;
    let net = NetworkSpec::build_tree(4, 10.0, RadialFamily::cosine()).unwrap();
    let bands = BandConfig::average_pooling();
    let ctx = ExecContext::new(ConvPath::Fft);
    let labels: Vec<usize> = (0..10).flat_map(|d| std::iter::repeat(d).take(per_class)).collect();
    let (train_idx, test_idx) = train_test_split(&labels, 0.5, 42).unwrap();
    let test_set: std::collections::HashSet<usize> = test_idx.iter().copied().collect();

    let evaluate_drop = |rows_aligned: &[Vec<f64>], rows_moved: &[Vec<f64>]| -> (f64, f64) {
        let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| rows_aligned[i].as_slice()).collect();
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let model =
            train_classifier(ClassifierKind::Ridge, &train_rows, &train_labels, 1e-3).unwrap();
        let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        let f1 = |rows: &[Vec<f64>]| {
            let predicted: Vec<usize> =
                test_idx.iter().map(|&i| model.predict(&rows[i])).collect();
            evaluate(&predicted, &truth).unwrap().macro_f1
        };
        (f1(rows_aligned), f1(rows_moved))
    };

    let transform = TransformKind::Rotate90 { quarter_turns: 1 };
    let (aligned, _) = digit_features(&net, &bands, &ctx, per_class, size, None, &test_set);
    let (moved, _) =
        digit_features(&net, &bands, &ctx, per_class, size, Some(&transform), &test_set);
    let (hir_aligned, hir_moved) = evaluate_drop(&aligned, &moved);
    let hir_drop = hir_aligned - hir_moved;

    // raw-pixel baseline: 16x16 block means of the same images
    let test_set = &test_set;
    let raw = |transform: Option<&TransformKind>| -> Vec<Vec<f64>> {
        (0..10)
            .flat_map(|digit| {
                (0..per_class).map(move |idx| {
                    let seed = (digit * 10_007 + idx) as u64;
                    let mut image = digit_image(digit, 7000 ^ seed, size);
                    let flat = digit * per_class + idx;
                    if let Some(t) = transform {
                        if test_set.contains(&flat) {
                            image = apply_transform(&image, t).unwrap();
                        }
                    }
                    let block = size / 16;
                    let mut row = vec![0.0; 256];
                    for i in 0..size {
                        for j in 0..size {
                            row[(i / block) * 16 + j / block] += image.at(i, j).re;
                        }
                    }
                    row
                })
            })
            .collect()
    };
    let (base_aligned, base_moved) = evaluate_drop(&raw(None), &raw(Some(&transform)));
    let base_drop = base_aligned - base_moved;

    let detail = format!(
        "hir F1 {hir_aligned:.1}->{hir_moved:.1} (drop {hir_drop:.1}), raw F1 {base_aligned:.1}->{base_moved:.1} (drop {base_drop:.1})"
    );
    if hir_drop >= 3.0 {
        return (false, format!("invariant pipeline dropped too much: {detail}"));
    }
    if base_drop <= 20.0 {
        return (false, format!("baseline did not degrade as expected: {detail}"));
    }
    (true, detail)
}

// 10. Pruned-network extraction bitwise-matches the selected columns of the
//     full extraction, and Fisher top-k beats random-k on held-out accuracy.
fn criterion_10() -> (bool, String) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let net = NetworkSpec::build_tree(3, 4.0, RadialFamily::cosine()).unwrap();
    let bands = BandConfig::new(2, 2).unwrap();
    let ctx = ExecContext::new(ConvPath::Fft);
    let per_class = 30;
    let size = 32;
    let all = std::collections::HashSet::new();
    let (rows, labels) = digit_features(&net, &bands, &ctx, per_class, size, None, &all);
    let cols = rows[0].len();
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let column_nodes: Vec<NodeId> = {
        let probe = extract(&digit_image(0, 1, size), &net, &bands, &ctx).unwrap();
        probe.meta.iter().map(|m| m.node).collect()
    };
    let matrix = FeatureMatrix::new(
        data,
        rows.len(),
        cols,
        labels.clone(),
        Some(column_nodes),
    )
    .unwrap();
    let ranking = rank_features(&matrix).unwrap();
    let k = 10;
    let selection = select_top_k(&ranking, &matrix, k).unwrap();
    let keep = selected_columns(&selection);

    // bitwise agreement between pruned-network extraction and the column
    // subset of the full extraction, on a fresh image
    let pruned = prune_network(&net, &selection).unwrap();
    let image = digit_image(3, 99, size);
    let full = extract(&image, &net, &bands, &ctx).unwrap();
    let reduced = extract(&image, &pruned, &bands, &ctx).unwrap();
    for (value, meta) in reduced.values.iter().zip(&reduced.meta) {
        let original = full
            .meta
            .iter()
            .position(|m| m == meta)
            .expect("pruned feature present in full layout");
        if value.to_bits() != full.values[original].to_bits() {
            return (
                false,
                format!("node {} band {} differs after pruning", meta.node, meta.band),
            );
        }
    }
    for &col in &keep {
        let meta = &full.meta[col];
        if !reduced.meta.iter().any(|m| m == meta) {
            return (false, format!("selected column {col} missing from pruned layout"));
        }
    }

    // mean held-out accuracy over 10 seeds: Fisher top-k against random-k
    let accuracy_with = |columns: &[usize], seed: u64| -> f64 {
        let (train_idx, test_idx) = train_test_split(&labels, 0.5, seed).unwrap();
        let project = |i: usize| -> Vec<f64> {
            columns.iter().map(|&c| matrix.at(i, c)).collect()
        };
        let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| project(i)).collect();
        let refs: Vec<&[f64]> = train_rows.iter().map(|r| r.as_slice()).collect();
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let model = train_classifier(ClassifierKind::Ridge, &refs, &train_labels, 1e-3).unwrap();
        let correct = test_idx
            .iter()
            .filter(|&&i| model.predict(&project(i)) == labels[i])
            .count();
        correct as f64 / test_idx.len() as f64
    };
    let mut top_sum = 0.0;
    let mut rand_sum = 0.0;
    for seed in 0..10u64 {
        top_sum += accuracy_with(&keep, seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(900 + seed);
        let mut all_cols: Vec<usize> = (0..cols).collect();
        all_cols.shuffle(&mut rng);
        rand_sum += accuracy_with(&all_cols[..k], seed);
    }
    let top_mean = top_sum / 10.0;
    let rand_mean = rand_sum / 10.0;
    if top_mean < rand_mean {
        return (
            false,
            format!("top-k mean accuracy {top_mean:.3} < random-k {rand_mean:.3}"),
        );
    }
    (
        true,
        format!("bitwise subset ok; top-k mean acc {top_mean:.3} vs random-k {rand_mean:.3}"),
    )
}

#[test]
fn acceptance() {
    let criteria: Vec<(usize, &'static str, fn() -> (bool, String))> = vec![
        (1, "radial family orthogonality", criterion_1),
        (2, "fft/direct convolution equivalence", criterion_2),
        (3, "quadrature refinement ordering", criterion_3),
        (4, "strict per-node equivariance", criterion_4),
        (5, "dyadic scaling covariance", criterion_5),
        (6, "end-to-end descriptor invariance", criterion_6),
        (7, "average pooling special case", criterion_7),
        (8, "convolution complexity crossover", criterion_8),
        (9, "digit robustness protocol", criterion_9),
        (10, "feature selection soundness", criterion_10),
    ];
    let mut outcomes = Vec::new();
    for (number, title, run) in criteria {
        let (passed, detail) = run();
        println!(
            "criterion {number:>2} [{}] {title}: {detail}",
            if passed { "PASS" } else { "FAIL" }
        );
        outcomes.push(Outcome {
            number,
            title,
            passed,
            detail,
        });
    }
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    assert!(
        failed.is_empty(),
        "{} criteria failed: {}",
        failed.len(),
        failed
            .iter()
            .map(|o| format!("#{} {} ({})", o.number, o.title, o.detail))
            .collect::<Vec<_>>()
            .join("; ")
    );
}
