//! Batch command-line surface for the super-resolution engine: model
//! training, single-image upscaling, dataset evaluation and ablation runs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use farf::imgproc::{load_color, save_color};
use farf::pipeline::{
    evaluate, run_ablation, train, write_report, AblationCell, EvalOptions, Preset, SRConfig,
    TrainedModel,
};

#[derive(Parser)]
#[command(
    name = "farf",
    about = "Feature-augmented random forest single-image super-resolution",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a directory of high-resolution images.
    Train(TrainArgs),
    /// Super-resolve one image with a trained model.
    Sr(SrArgs),
    /// Evaluate a model (and the bicubic baseline) over a dataset.
    Eval(EvalArgs),
    /// Train and evaluate a named grid of configurations.
    Ablate(AblateArgs),
}

/// Flags that map 1:1 onto configuration fields. Precedence:
/// defaults < --preset < --config file < individual flags.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Named preset: RF, RF+, RF#, FARF, FARF*.
    #[arg(long)]
    preset: Option<String>,
    /// Key-value config file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Upscaling factor (2, 3 or 4).
    #[arg(long)]
    scale: Option<u32>,
    /// Master seed for all randomized stages.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trees.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Training-sample cap.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    train_stride: Option<usize>,
    #[arg(long)]
    infer_stride: Option<usize>,
    /// Include the two gradient-magnitude channels.
    #[arg(long)]
    use_magnitudes: Option<bool>,
    /// Routing projection: pca or lsh.
    #[arg(long)]
    projection: Option<String>,
    #[arg(long)]
    projection_dim: Option<usize>,
    /// Leaf regression feature space: original or compressed.
    #[arg(long)]
    leaf_features: Option<String>,
    /// Coarse estimator: bicubic or ibp.
    #[arg(long)]
    coarse: Option<String>,
    /// Degradation: bicubic or gaussian.
    #[arg(long)]
    degradation: Option<String>,
    #[arg(long)]
    degradation_sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gmm_k: Option<usize>,
    #[arg(long)]
    gwrr_cap: Option<f64>,
    #[arg(long)]
    gmm_max_iters: Option<usize>,
    #[arg(long)]
    bag_fraction: Option<f64>,
    #[arg(long)]
    threshold_candidates: Option<usize>,
    #[arg(long)]
    feature_candidates: Option<usize>,
    #[arg(long)]
    ibp_iterations: Option<usize>,
    #[arg(long)]
    projection_fit_cap: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> anyhow::Result<SRConfig> {
        let scale = self.scale.unwrap_or(3);
        let mut cfg = match &self.preset {
            Some(name) => match Preset::from_name(name) {
                Some(p) => p.config(scale),
                None => {
                    return Err(UsageError::new(format!(
                        "unknown preset {name}; valid names: {}",
                        preset_names()
                    ))
                    .into())
                }
            },
            None => SRConfig::defaults(scale),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_kv(&text)?;
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        macro_rules! set {
            ($flag:ident, $field:ident) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            };
        }
        set!(seed, seed);
        set!(trees, n_trees);
        set!(max_depth, max_depth);
        set!(min_leaf, min_leaf);
        set!(samples, n_train_samples);
        set!(patch_size, patch_size);
        set!(train_stride, train_stride);
        set!(infer_stride, infer_stride);
        set!(use_magnitudes, use_magnitudes);
        set!(projection_dim, projection_dim);
        set!(lambda, lambda_base);
        set!(gmm_k, gmm_k);
        set!(gwrr_cap, gwrr_cap);
        set!(gmm_max_iters, gmm_max_iters);
        set!(bag_fraction, bag_fraction);
        set!(threshold_candidates, n_threshold_candidates);
        set!(feature_candidates, n_feature_candidates);
        set!(ibp_iterations, ibp_iterations);
        set!(projection_fit_cap, projection_fit_cap);
        // Enum-valued flags reuse the key-value parser for consistency.
        let mut kv = String::new();
        if let Some(v) = &self.projection {
            kv.push_str(&format!("projection_kind = {v}\n"));
        }
        if let Some(v) = &self.leaf_features {
            kv.push_str(&format!("leaf_features = {v}\n"));
        }
        if let Some(v) = &self.coarse {
            kv.push_str(&format!("coarse_estimator = {v}\n"));
        }
        if let Some(v) = &self.degradation {
            kv.push_str(&format!("degradation = {v}\n"));
            kv.push_str(&format!(
                "degradation_sigma = {}\n",
                self.degradation_sigma.unwrap_or(0.6 * cfg.scale as f64)
            ));
        }
        if !kv.is_empty() {
            cfg.apply_kv(&kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn preset_names() -> String {
    Preset::ALL
        .iter()
        .map(|p| p.name())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of high-resolution training images (PNG/PPM/PGM).
    #[arg(long)]
    hr_dir: PathBuf,
    /// Output model path.
    #[arg(long)]
    out_model: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SrArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Input image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image (PNG or PPM by extension).
    #[arg(long = "out")]
    output: PathBuf,
    /// Expected scale; fails if the model was trained for another factor.
    #[arg(long)]
    scale: Option<u32>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model file; omit with --baseline-only.
    #[arg(long, required_unless_present = "baseline_only")]
    model: Option<PathBuf>,
    /// Directory of ground-truth images.
    #[arg(long)]
    dataset: PathBuf,
    /// Report CSV path (a .meta sidecar is written next to it).
    #[arg(long)]
    report: PathBuf,
    /// Evaluate only the bicubic baseline.
    #[arg(long)]
    baseline_only: bool,
    /// Scale; defaults to the model's, required with --baseline-only.
    #[arg(long)]
    scale: Option<u32>,
    /// Border pixels excluded from PSNR (default: the scale).
    #[arg(long)]
    border_crop: Option<usize>,
    /// Measure PSNR on full-range luma instead of studio-swing.
    #[arg(long)]
    full_range_luma: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory of high-resolution training images.
    #[arg(long)]
    hr_dir: PathBuf,
    /// Evaluation dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Combined report CSV path.
    #[arg(long)]
    report: PathBuf,
    /// Comma-separated preset names, e.g. RF,RF+,FARF.
    #[arg(long, required_unless_present = "trees_sweep")]
    grid: Option<String>,
    /// Optional comma-separated tree counts swept on the FARF preset.
    #[arg(long)]
    trees_sweep: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

/// Error that should exit with code 2 (usage) rather than 1.
#[derive(Debug)]
struct UsageError(String);

impl UsageError {
    fn new(msg: impl Into<String>) -> Self {
        UsageError(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn init_threads() {
    if let Ok(v) = std::env::var("FARF_THREADS") {
        match v.parse::<usize>() {
            Ok(0) => {}
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => eprintln!("warning: ignoring invalid FARF_THREADS={v}"),
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Train(args) => cmd_train(args),
        Command::Sr(args) => cmd_sr(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = args.cfg.build()?;
    let t0 = Instant::now();
    let (_, report) = train(&args.hr_dir, &cfg, Some(&args.out_model))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for (stage, secs) in &report.stage_seconds {
        eprintln!("stage {stage}: {secs:.2}s");
    }
    eprintln!(
        "samples: {} used of {} extracted",
        report.n_triples_used, report.n_triples_total
    );
    print_leaf_histogram(&report.leaf_sizes);
    eprintln!(
        "trained and saved {} in {:.2}s",
        args.out_model.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn print_leaf_histogram(sizes: &[usize]) {
    if sizes.is_empty() {
        return;
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let total = sorted.len();
    eprintln!(
        "leaves: {} (min {}, median {}, max {})",
        total,
        sorted[0],
        sorted[total / 2],
        sorted[total - 1]
    );
    // Power-of-two size buckets.
    let mut bucket_lo = 1usize;
    while bucket_lo <= *sorted.last().unwrap() {
        let bucket_hi = bucket_lo * 2;
        let count = sorted
            .iter()
            .filter(|&&s| s >= bucket_lo && s < bucket_hi)
            .count();
        if count > 0 {
            eprintln!("  [{:>6}..{:<6}) {count}", bucket_lo, bucket_hi);
        }
        bucket_lo = bucket_hi;
    }
}

fn cmd_sr(args: SrArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&args.model)?;
    if let Some(s) = args.scale {
        if s != model.config.scale {
            anyhow::bail!(
                "scale mismatch: expected x{} (model), got x{s} (--scale)",
                model.config.scale
            );
        }
    }
    let input = load_color(&args.input)?;
    let out = farf::pipeline::super_resolve(&model, &input, model.config.scale)?;
    save_color(&out, &args.output)?;
    eprintln!(
        "{} ({}x{}) -> {} ({}x{})",
        args.input.display(),
        input.width(),
        input.height(),
        args.output.display(),
        out.width(),
        out.height()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let model = match (&args.model, args.baseline_only) {
        (Some(path), false) => Some(TrainedModel::load(path)?),
        (None, true) => None,
        (Some(_), true) => {
            return Err(UsageError::new("--model conflicts with --baseline-only").into())
        }
        (None, false) => unreachable!("clap enforces model or baseline_only"),
    };
    let scale = match (args.scale, &model) {
        (Some(s), _) => s,
        (None, Some(m)) => m.config.scale,
        (None, None) => return Err(UsageError::new("--baseline-only requires --scale").into()),
    };
    let opts = EvalOptions {
        border_crop: args.border_crop,
        studio_luma: !args.full_range_luma,
        method_label: "farf".into(),
    };
    let report = evaluate(model.as_ref(), &args.dataset, scale, &opts)?;
    write_report(&report, &args.report)?;
    for row in report.rows.iter().filter(|r| r.image == "average") {
        println!(
            "average,{},{},{:.4}",
            row.method, row.scale, row.psnr_db
        );
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let base = args.cfg.build()?;
    let mut cells = Vec::new();
    let grid = args.grid.as_deref().unwrap_or("");
    for name in grid.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let preset = Preset::from_name(name).ok_or_else(|| {
            UsageError::new(format!(
                "unknown grid name {name}; valid names: {}",
                preset_names()
            ))
        })?;
        let mut config = preset.config(base.scale);
        inherit_shared(&mut config, &base);
        cells.push(AblationCell {
            label: name.to_string(),
            config,
        });
    }
    if let Some(sweep) = &args.trees_sweep {
        for tok in sweep.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let n: usize = tok
                .parse()
                .map_err(|_| UsageError::new(format!("bad tree count {tok} in --trees-sweep")))?;
            let mut config = Preset::Farf.config(base.scale);
            inherit_shared(&mut config, &base);
            config.n_trees = n;
            cells.push(AblationCell {
                label: format!("FARF-T{n}"),
                config,
            });
        }
    }
    if cells.is_empty() {
        return Err(UsageError::new("empty --grid").into());
    }

    let outcome = run_ablation(&args.hr_dir, &args.dataset, &cells)?;
    for (label, err) in &outcome.failures {
        eprintln!("cell {label} failed: {err}");
    }
    let report = farf::pipeline::EvalReport {
        rows: outcome.rows,
        scale: base.scale,
        border_crop: base.scale as usize,
        studio_luma: true,
        dataset: args.dataset.display().to_string(),
        config_snapshot: Some(base.to_kv()),
        seed: Some(base.seed),
    };
    write_report(&report, &args.report)?;
    for row in report.rows.iter().filter(|r| r.image == "average") {
        println!("average,{},{},{:.4}", row.method, row.scale, row.psnr_db);
    }
    Ok(())
}

/// Shared-data knobs every ablation cell inherits from the base flags.
fn inherit_shared(config: &mut SRConfig, base: &SRConfig) {
    config.seed = base.seed;
    config.n_train_samples = base.n_train_samples;
    config.train_stride = base.train_stride;
    config.infer_stride = base.infer_stride;
    config.min_leaf = base.min_leaf;
    config.max_depth = base.max_depth;
    config.gmm_max_iters = base.gmm_max_iters;
    config.projection_fit_cap = base.projection_fit_cap;
}
