//! Command-line driver: extraction, verification, benchmarking, feature
//! selection, and classification over directories of images.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hir::adapt::{prune_network, rank_features, select_top_k, selected_columns, FeatureMatrix};
use hir::basis::{BasisOrder, RadialFamily};
use hir::engine::{conv_direct, conv_fft, ConvPath};
use hir::harness::{
    equivariance_report, evaluate, invariance_report, train_classifier, train_test_split,
    ClassifierKind, DeviationReport, TransformKind,
};
use hir::invariant::{extract, BandConfig};
use hir::io::{
    read_features_csv, read_image, scan_input_dir, write_features_csv, write_text, FeatureTable,
};
use hir::kernels::{build_kernel, PixelGrid, QuadratureRule};
use hir::network::{ExecContext, NetworkSpec, NodeId};
use hir::synth::{compact_field, smooth_field};
use hir::{HirError, Result};

const EXIT_USAGE: i32 = 1;
const EXIT_INVARIANT: i32 = 2;
const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "hir",
    version,
    about = "Hierarchical invariant representations: extraction, verification, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute descriptors for every image under --input and write a CSV
    Extract(CommonArgs),
    /// Run the equivariance and invariance suites; nonzero exit on violation
    Verify(CommonArgs),
    /// Time direct against FFT convolution across kernel scales
    Bench(CommonArgs),
    /// Split a descriptor table, fit a classifier, and report metrics
    Classify(CommonArgs),
    /// Rank features by Fisher score, keep the top k, and emit a pruned network
    Select(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Extract(a)
            | Command::Verify(a)
            | Command::Bench(a)
            | Command::Classify(a)
            | Command::Select(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; command-line flags override its fields
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input directory (extract/verify) or descriptor CSV (classify/select)
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
    /// Output artifact path; stdout when omitted where that makes sense
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Random seed for splits and synthetic inputs
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Convolution path
    #[arg(long, value_name = "PATH", value_parser = ["direct", "fft"])]
    conv: Option<String>,
    /// Cascade depth L
    #[arg(long, value_name = "L")]
    depth: Option<usize>,
    /// Single kernel scale w
    #[arg(long, value_name = "W", conflicts_with = "scales")]
    scale: Option<f64>,
    /// Dyadic scale bank, as TMIN:TMAX exponents of two
    #[arg(long, value_name = "TMIN:TMAX")]
    scales: Option<String>,
    /// Band pooling, as K:NB (max frequency : band count)
    #[arg(long, value_name = "K:NB")]
    bands: Option<String>,
    /// Number of top-ranked features to keep
    #[arg(long = "select-k", value_name = "K")]
    select_k: Option<usize>,
    /// Classifier kind
    #[arg(long, value_name = "KIND", value_parser = ["centroid", "ridge"])]
    classifier: Option<String>,
    /// Fraction of each class used for training
    #[arg(long = "train-ratio", value_name = "R")]
    train_ratio: Option<f64>,
}

/// Full run configuration; serialized next to every artifact.
#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    family: RadialFamily,
    depth: usize,
    scale: f64,
    /// dyadic exponent range; takes precedence over `scale` when set
    scales: Option<(i32, i32)>,
    /// (max frequency K, number of annular bands)
    bands: (usize, usize),
    conv: ConvPath,
    seed: u64,
    select_k: Option<usize>,
    classifier: ClassifierKind,
    train_ratio: f64,
    ridge_lambda: f64,
    tolerance: f64,
    workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: RadialFamily::cosine(),
            depth: 3,
            scale: 10.0,
            scales: None,
            bands: (0, 1),
            conv: ConvPath::Fft,
            seed: 0,
            select_k: None,
            classifier: ClassifierKind::Ridge,
            train_ratio: 0.5,
            ridge_lambda: 1e-3,
            tolerance: 1e-6,
            workers: None,
        }
    }
}

fn parse_pair<T: std::str::FromStr>(text: &str, what: &str) -> Result<(T, T)> {
    let err = || HirError::Config(format!("{what} must look like A:B, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(err)?;
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

impl RunConfig {
    fn load(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HirError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                serde_json::from_str(&text).map_err(|e| HirError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(conv) = &args.conv {
            cfg.conv = match conv.as_str() {
                "direct" => ConvPath::Direct,
                _ => ConvPath::Fft,
            };
        }
        if let Some(depth) = args.depth {
            cfg.depth = depth;
        }
        if let Some(scale) = args.scale {
            cfg.scale = scale;
            cfg.scales = None;
        }
        if let Some(scales) = &args.scales {
            cfg.scales = Some(parse_pair(scales, "--scales")?);
        }
        if let Some(bands) = &args.bands {
            cfg.bands = parse_pair(bands, "--bands")?;
        }
        if let Some(k) = args.select_k {
            cfg.select_k = Some(k);
        }
        if let Some(kind) = &args.classifier {
            cfg.classifier = match kind.as_str() {
                "centroid" => ClassifierKind::Centroid,
                _ => ClassifierKind::Ridge,
            };
        }
        if let Some(r) = args.train_ratio {
            cfg.train_ratio = r;
        }
        Ok(cfg)
    }

    fn network(&self) -> Result<NetworkSpec> {
        match self.scales {
            Some((t_min, t_max)) => {
                NetworkSpec::build_multiscale(self.depth, t_min, t_max, self.family)
            }
            None => NetworkSpec::build_tree(self.depth, self.scale, self.family),
        }
    }

    fn band_config(&self) -> Result<BandConfig> {
        BandConfig::new(self.bands.0, self.bands.1)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn write_config_sidecar(cfg: &RunConfig, beside: &Path) -> Result<()> {
    let mut name = beside.as_os_str().to_owned();
    name.push(".config.json");
    write_text(Path::new(&name), &cfg.to_json())
}

fn require_input(args: &CommonArgs) -> Result<&Path> {
    args.input
        .as_deref()
        .ok_or_else(|| HirError::Config("--input is required for this command".into()))
}

fn require_output(args: &CommonArgs) -> Result<&Path> {
    args.output
        .as_deref()
        .ok_or_else(|| HirError::Config("--output is required for this command".into()))
}

fn cmd_extract(args: &CommonArgs, cfg: &RunConfig) -> Result<i32> {
    let input = require_input(args)?;
    let output = require_output(args)?;
    let net = cfg.network()?;
    let bands = cfg.band_config()?;
    let ctx = ExecContext::new(cfg.conv);
    let entries = scan_input_dir(input)?;
    let vectors = entries
        .par_iter()
        .map(|entry| extract(&read_image(&entry.path)?, &net, &bands, &ctx))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<(String, Option<String>)> = entries
        .iter()
        .map(|e| (e.id.clone(), e.label.clone()))
        .collect();
    write_features_csv(output, &ids, &vectors)?;
    write_config_sidecar(cfg, output)?;
    eprintln!(
        "extracted {} descriptors of length {} -> {}",
        vectors.len(),
        vectors[0].values.len(),
        output.display()
    );
    Ok(0)
}

fn strict_transforms() -> Vec<TransformKind> {
    vec![
        TransformKind::Rotate90 { quarter_turns: 1 },
        TransformKind::Rotate90 { quarter_turns: 2 },
        TransformKind::Rotate90 { quarter_turns: 3 },
        TransformKind::FlipHorizontal,
        TransformKind::FlipVertical,
        TransformKind::Translate { di: 3, dj: -2 },
    ]
}

#[derive(Serialize)]
struct VerifyReport {
    image: String,
    equivariance: DeviationReport,
    invariance: DeviationReport,
}

fn cmd_verify(args: &CommonArgs, cfg: &RunConfig) -> Result<i32> {
    let net = cfg.network()?;
    let bands = cfg.band_config()?;
    let ctx = ExecContext::new(cfg.conv);
    let transforms = strict_transforms();
    // image side large enough that the interior margin survives the depth;
    // synthetic inputs carry a zero border so strict transforms act as pure
    // permutations of the content
    let w_max = net.scales.iter().cloned().fold(0.0f64, f64::max);
    let pad = net.max_level * w_max.ceil() as usize + 8;
    let side = (8 * pad).max(64);
    let images: Vec<(String, hir::engine::FeatureMap)> = match &args.input {
        Some(dir) => scan_input_dir(dir)?
            .into_iter()
            .map(|e| Ok((e.id.clone(), read_image(&e.path)?)))
            .collect::<Result<_>>()?,
        None => (0..5)
            .map(|i| (format!("synthetic-{i}"), compact_field(cfg.seed + i, side, pad)))
            .collect(),
    };
    let mut reports = Vec::new();
    let mut all_passed = true;
    for (id, image) in &images {
        let equivariance =
            equivariance_report(image, &net, &ctx, &transforms, cfg.tolerance)?;
        let invariance =
            invariance_report(image, &net, &bands, &ctx, &transforms, cfg.tolerance)?;
        all_passed &= equivariance.passed && invariance.passed;
        reports.push(VerifyReport {
            image: id.clone(),
            equivariance,
            invariance,
        });
    }
    let text = serde_json::to_string_pretty(&reports).expect("report serializes");
    match &args.output {
        Some(path) => {
            write_text(path, &text)?;
            write_config_sidecar(cfg, path)?;
        }
        None => println!("{text}"),
    }
    if all_passed {
        eprintln!("verify: all {} images within tolerance", reports.len());
        Ok(0)
    } else {
        eprintln!("verify: tolerance exceeded, see report");
        Ok(EXIT_INVARIANT)
    }
}

#[derive(Serialize)]
struct BenchRow {
    w: f64,
    direct_ms: f64,
    fft_ms: f64,
}

fn cmd_bench(args: &CommonArgs, cfg: &RunConfig) -> Result<i32> {
    let image = smooth_field(cfg.seed, 256);
    let order = BasisOrder::new(1, 1)?;
    let grid = PixelGrid::default();
    let rule = QuadratureRule::tensor_gauss(2);
    let mut rows = Vec::new();
    for w in [2.0, 4.0, 8.0, 16.0, 32.0] {
        let kernel = build_kernel(&cfg.family, order, w, &grid, &rule)?;
        let time = |f: &dyn Fn() -> Result<hir::engine::FeatureMap>| -> Result<f64> {
            f()?; // warm caches and FFT plans
            let reps = 3;
            let start = Instant::now();
            for _ in 0..reps {
                f()?;
            }
            Ok(start.elapsed().as_secs_f64() * 1000.0 / reps as f64)
        };
        let direct_ms = time(&|| conv_direct(&image, &kernel))?;
        let fft_ms = time(&|| conv_fft(&image, &kernel))?;
        println!("w={w:<5} direct={direct_ms:>10.3} ms   fft={fft_ms:>10.3} ms");
        rows.push(BenchRow { w, direct_ms, fft_ms });
    }
    let crossover = rows.iter().find(|r| r.fft_ms < r.direct_ms).map(|r| r.w);
    match crossover {
        Some(w) => println!("fft path first faster at w={w}"),
        None => println!("direct path faster at every tested scale"),
    }
    if let Some(path) = &args.output {
        let text = serde_json::to_string_pretty(&rows).expect("rows serialize");
        write_text(path, &text)?;
        write_config_sidecar(cfg, path)?;
    }
    Ok(0)
}

fn labeled_matrix(table: &FeatureTable) -> Result<(FeatureMatrix, Vec<String>)> {
    let mut class_names: Vec<String> = table
        .labels
        .iter()
        .map(|l| {
            l.clone()
                .ok_or_else(|| HirError::Config("every row needs a class label".into()))
        })
        .collect::<Result<_>>()?;
    class_names.sort();
    class_names.dedup();
    let labels: Vec<usize> = table
        .labels
        .iter()
        .map(|l| {
            class_names
                .binary_search(l.as_ref().unwrap())
                .expect("label present")
        })
        .collect();
    let column_nodes: Option<Vec<NodeId>> = table
        .columns
        .iter()
        .map(|c| c.rsplit_once(":b").map(|(node, _)| node.parse().ok()).flatten())
        .collect();
    let matrix = FeatureMatrix::new(
        table.values.clone(),
        table.ids.len(),
        table.columns.len(),
        labels,
        column_nodes,
    )?;
    Ok((matrix, class_names))
}

fn cmd_classify(args: &CommonArgs, cfg: &RunConfig) -> Result<i32> {
    let table = read_features_csv(require_input(args)?)?;
    let (matrix, class_names) = labeled_matrix(&table)?;
    let (train_idx, test_idx) = train_test_split(&matrix.labels, cfg.train_ratio, cfg.seed)?;
    let row = |i: usize| &matrix.data[i * matrix.cols..(i + 1) * matrix.cols];
    let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| row(i)).collect();
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| matrix.labels[i]).collect();
    let model = train_classifier(cfg.classifier, &train_rows, &train_labels, cfg.ridge_lambda)?;
    let predicted: Vec<usize> = test_idx.iter().map(|&i| model.predict(row(i))).collect();
    let truth: Vec<usize> = test_idx.iter().map(|&i| matrix.labels[i]).collect();
    let metrics = evaluate(&predicted, &truth)?;
    let report = serde_json::json!({
        "classes": class_names,
        "train_size": train_idx.len(),
        "test_size": test_idx.len(),
        "metrics": &metrics,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.output {
        Some(path) => {
            write_text(path, &text)?;
            write_config_sidecar(cfg, path)?;
        }
        None => println!("{text}"),
    }
    eprintln!(
        "classify: accuracy {:.2}%, macro-F1 {:.2}%",
        metrics.accuracy, metrics.macro_f1
    );
    Ok(0)
}

fn cmd_select(args: &CommonArgs, cfg: &RunConfig) -> Result<i32> {
    let output = require_output(args)?;
    let table = read_features_csv(require_input(args)?)?;
    let (matrix, _) = labeled_matrix(&table)?;
    let k = cfg
        .select_k
        .ok_or_else(|| HirError::Config("--select-k is required for select".into()))?;
    let ranking = rank_features(&matrix)?;
    let selection = select_top_k(&ranking, &matrix, k)?;
    write_text(
        output,
        &serde_json::to_string_pretty(&selection).expect("selection serializes"),
    )?;
    write_config_sidecar(cfg, output)?;
    let net = cfg.network()?;
    let pruned = prune_network(&net, &selection)?;
    let mut net_path = output.as_os_str().to_owned();
    net_path.push(".network.json");
    write_text(Path::new(&net_path), &pruned.to_json())?;
    eprintln!(
        "select: kept {} of {} columns across {} surviving nodes",
        selected_columns(&selection).len(),
        matrix.cols,
        selection.surviving_node_ids.len()
    );
    Ok(0)
}

fn exit_code_for(err: &HirError) -> i32 {
    match err {
        HirError::Io { .. } | HirError::Parse { .. } => EXIT_IO,
        HirError::Config(_) | HirError::InvalidParameter(_) => EXIT_USAGE,
        HirError::Domain(_) | HirError::Shape(_) => EXIT_INVARIANT,
    }
}

fn run(cli: Cli) -> Result<i32> {
    let args = cli.command.args();
    let cfg = RunConfig::load(args)?;
    if let Ok(text) = std::env::var("HIR_NUM_WORKERS") {
        let n: usize = text
            .parse()
            .map_err(|_| HirError::Config(format!("HIR_NUM_WORKERS must be a count, got {text:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    } else if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match &cli.command {
        Command::Extract(a) => cmd_extract(a, &cfg),
        Command::Verify(a) => cmd_verify(a, &cfg),
        Command::Bench(a) => cmd_bench(a, &cfg),
        Command::Classify(a) => cmd_classify(a, &cfg),
        Command::Select(a) => cmd_select(a, &cfg),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}
