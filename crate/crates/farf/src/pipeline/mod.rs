//! End-to-end orchestration: training-set construction, model training,
//! super-resolution inference, dataset evaluation and model persistence.

mod config;
mod model_io;
mod report;

pub use config::{CoarseEstimator, DegradationKind, Preset, SRConfig};
pub use report::{write_report, EvalReport, EvalRow};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FarfError, Result, StageContext};
use crate::features::{assemble_one, channel_maps};
use crate::forest::{derive_seed, infer_patch, train_forest, ForestModel, SampleSet};
use crate::ibp::ibp_upscale;
use crate::imgproc::{
    aggregate_patches, degrade, load_color, patch_origins, psnr, resize_bicubic, rgb_to_ycc,
    to_studio_luma, ColorImage, ImagePlane, Patch,
};
use crate::projection::{fit_lsh, fit_pca, project_rows, ProjectionKind, ProjectionModel, Rows};

/// A trained model: config snapshot, projection and forest. The snapshot
/// is authoritative at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: SRConfig,
    pub projection: ProjectionModel,
    pub forest: ForestModel,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        model_io::save_model(self, path)
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        model_io::load_model(path)
    }
}

/// Training-set construction output.
pub struct TrainingData {
    pub samples: SampleSet,
    pub projection: ProjectionModel,
    /// Triple count over all images before capping.
    pub n_before_cap: usize,
    pub warnings: Vec<String>,
}

/// Timings and diagnostics from a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub stage_seconds: Vec<(String, f64)>,
    pub n_triples_total: usize,
    pub n_triples_used: usize,
    pub leaf_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Coarse HR estimate of a low-resolution plane per the config.
pub fn coarse_estimate(lr: &ImagePlane, cfg: &SRConfig) -> Result<ImagePlane> {
    match cfg.coarse {
        CoarseEstimator::Bicubic => resize_bicubic(lr, cfg.scale as f64),
        CoarseEstimator::Ibp => ibp_upscale(lr, &cfg.degrade_spec()?, &cfg.ibp_params()),
    }
}

fn crop_to_scale(plane: &ImagePlane, scale: u32) -> Result<ImagePlane> {
    let s = scale as usize;
    let w = plane.width() - plane.width() % s;
    let h = plane.height() - plane.height() % s;
    plane.center_crop(w, h)
}

fn swap_rows(data: &mut [f64], a: usize, b: usize, d: usize) {
    if a == b {
        return;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let (head, tail) = data.split_at_mut(hi * d);
    head[lo * d..(lo + 1) * d].swap_with_slice(&mut tail[..d]);
}

/// Builds (compressed, original, target) triples from HR luma planes:
/// degrade, coarse-upscale, feature maps, co-located residual targets.
/// Triples are reservoir-capped at `n_train_samples` and shuffled by the
/// seed; the projection is fitted on a prefix of the shuffled originals.
pub fn build_training_set(hr_lumas: &[(String, ImagePlane)], cfg: &SRConfig) -> Result<TrainingData> {
    cfg.validate()?;
    let feat_cfg = cfg.feature_config();
    let d_o = feat_cfg.feature_dim();
    let d_t = cfg.patch_size * cfg.patch_size;
    let cap = cfg.n_train_samples;
    let spec = cfg.degrade_spec()?;

    let mut originals: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut n_seen = 0usize;
    let mut warnings = Vec::new();
    let mut reservoir_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7e5e_72e5));

    for (name, hr) in hr_lumas {
        let min_dim = (cfg.patch_size * cfg.scale as usize).max(5 * cfg.scale as usize);
        let cropped = match crop_to_scale(hr, cfg.scale) {
            Ok(c) if c.width() >= min_dim && c.height() >= min_dim => c,
            _ => {
                warnings.push(format!("skipping {name}: too small for scale {}", cfg.scale));
                continue;
            }
        };
        let lr = degrade(&cropped, &spec).stage("degrade")?;
        let coarse = coarse_estimate(&lr, cfg).stage("coarse estimate")?;
        let maps = channel_maps(&coarse).stage("feature maps")?;
        let origins = patch_origins(
            coarse.width(),
            coarse.height(),
            cfg.patch_size,
            cfg.train_stride,
        )
        .stage("patch origins")?;

        let mut target = vec![0.0f64; d_t];
        for &(x, y) in &origins {
            let feature = assemble_one(&maps, x, y, &feat_cfg);
            let mut k = 0;
            for dy in 0..cfg.patch_size {
                for dx in 0..cfg.patch_size {
                    target[k] = cropped.get(x + dx, y + dy) - coarse.get(x + dx, y + dy);
                    k += 1;
                }
            }
            let t = n_seen;
            n_seen += 1;
            if t < cap {
                originals.extend_from_slice(&feature);
                targets.extend_from_slice(&target);
            } else {
                let j = reservoir_rng.gen_range(0..=t);
                if j < cap {
                    originals[j * d_o..(j + 1) * d_o].copy_from_slice(&feature);
                    targets[j * d_t..(j + 1) * d_t].copy_from_slice(&target);
                }
            }
        }
    }

    let n = n_seen.min(cap);
    if n == 0 {
        return Err(FarfError::EmptyDataset(
            "no usable patches in training images".into(),
        ));
    }

    // In-place seeded shuffle of the kept triples.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x53f1_e0a7));
    for i in (1..n).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        swap_rows(&mut originals, i, j, d_o);
        swap_rows(&mut targets, i, j, d_t);
    }

    // Fit the projection on a prefix of the shuffled originals.
    let fit_n = n.min(cfg.projection_fit_cap);
    let projection = match cfg.projection_kind {
        ProjectionKind::Pca => fit_pca(
            Rows::new(&originals[..fit_n * d_o], fit_n, d_o)?,
            cfg.projection_dim.min(d_o),
        )
        .stage("projection fit")?,
        ProjectionKind::Lsh => fit_lsh(d_o, cfg.projection_dim, derive_seed(cfg.seed, 0x15a5))
            .stage("projection fit")?,
    };
    let compressed = project_rows(&projection, Rows::new(&originals, n, d_o)?)
        .stage("feature compression")?;

    let samples = SampleSet {
        compressed,
        original: originals,
        targets,
        n,
        d_compressed: projection.d_out(),
        d_original: d_o,
        d_target: d_t,
    };
    samples.validate()?;
    Ok(TrainingData {
        samples,
        projection,
        n_before_cap: n_seen,
        warnings,
    })
}

/// Image files of a directory in sorted filename order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if ["png", "ppm", "pgm", "pnm"].contains(&e.as_str())
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Trains a model from a directory of HR images, optionally persisting it.
/// Unreadable images are skipped with a warning in the report.
pub fn train(hr_dir: &Path, cfg: &SRConfig, out_model: Option<&Path>) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    let t0 = Instant::now();

    let files = list_images(hr_dir).stage("list training images")?;
    if files.is_empty() {
        return Err(FarfError::EmptyDataset(format!(
            "no images in {}",
            hr_dir.display()
        )));
    }
    let mut lumas = Vec::new();
    for f in &files {
        match load_color(f) {
            Ok(color) => {
                let (y, _, _) = rgb_to_ycc(&color);
                lumas.push((f.file_name().unwrap().to_string_lossy().into_owned(), y));
            }
            Err(e) => report.warnings.push(format!("skipping {}: {e}", f.display())),
        }
    }
    report.stage_seconds.push(("load".into(), t0.elapsed().as_secs_f64()));

    let t1 = Instant::now();
    let data = build_training_set(&lumas, cfg).stage("build training set")?;
    report.warnings.extend(data.warnings.clone());
    report.n_triples_total = data.n_before_cap;
    report.n_triples_used = data.samples.n;
    report
        .stage_seconds
        .push(("features+projection".into(), t1.elapsed().as_secs_f64()));

    let t2 = Instant::now();
    let forest = train_forest(&data.samples, &cfg.forest_params()).stage("train forest")?;
    report
        .stage_seconds
        .push(("forest".into(), t2.elapsed().as_secs_f64()));
    for tree in &forest.trees {
        for node in &tree.nodes {
            if let crate::forest::TreeNode::Leaf(l) = node {
                report.leaf_sizes.push(l.n_samples);
            }
        }
    }

    let model = TrainedModel {
        config: cfg.clone(),
        projection: data.projection,
        forest,
    };
    if let Some(path) = out_model {
        let t3 = Instant::now();
        model.save(path).stage("save model")?;
        report
            .stage_seconds
            .push(("save".into(), t3.elapsed().as_secs_f64()));
    }
    Ok((model, report))
}

/// Super-resolves a color image: the luma channel goes through the
/// forest patch-by-patch, chroma is upscaled bicubically, and the final
/// output is clamped to [0, 1].
pub fn super_resolve(model: &TrainedModel, lr: &ColorImage, scale: u32) -> Result<ColorImage> {
    let cfg = &model.config;
    if scale != cfg.scale {
        return Err(FarfError::InvalidParam(format!(
            "scale mismatch: model trained for x{}, requested x{}",
            cfg.scale, scale
        )));
    }
    let (y, cb, cr) = rgb_to_ycc(lr);
    let coarse = coarse_estimate(&y, cfg).stage("coarse estimate")?;
    let maps = channel_maps(&coarse).stage("feature maps")?;
    let feat_cfg = cfg.feature_config();
    let origins = patch_origins(
        coarse.width(),
        coarse.height(),
        cfg.patch_size,
        cfg.infer_stride,
    )
    .stage("patch origins")?;

    let ps = cfg.patch_size;
    let patches: Vec<Patch> = origins
        .par_iter()
        .map(|&(x, y)| {
            let feature = assemble_one(&maps, x, y, &feat_cfg);
            let mut compressed = vec![0.0f64; model.projection.d_out()];
            crate::projection::project_into(&model.projection, &feature, &mut compressed);
            let mut coarse_patch = Vec::with_capacity(ps * ps);
            crate::imgproc::read_window(&coarse, x, y, ps, &mut coarse_patch);
            let values = infer_patch(&model.forest, &compressed, &feature, &coarse_patch);
            Patch {
                x,
                y,
                size: ps,
                values,
            }
        })
        .collect();

    let luma = aggregate_patches(&patches, coarse.width(), coarse.height())
        .stage("patch aggregation")?
        .clamped();
    let cb_up = resize_bicubic(&cb, scale as f64).stage("chroma upscale")?;
    let cr_up = resize_bicubic(&cr, scale as f64).stage("chroma upscale")?;
    let rgb = crate::imgproc::ycc_to_rgb(&luma, &cb_up, &cr_up)?;
    Ok(ColorImage {
        r: rgb.r.clamped(),
        g: rgb.g.clamped(),
        b: rgb.b.clamped(),
    })
}

/// Evaluation options. PSNR is measured on the luma channel; by default on
/// its studio-swing rescale with a border crop of `scale` pixels, matching
/// the convention the benchmark figures use. Both knobs are surfaced in
/// the report metadata.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub border_crop: Option<usize>,
    pub studio_luma: bool,
    pub method_label: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            border_crop: None,
            studio_luma: true,
            method_label: "farf".into(),
        }
    }
}

/// Evaluates a model (and always the bicubic baseline) over a directory of
/// HR images: crop, degrade, super-resolve, PSNR per image plus averages.
pub fn evaluate(
    model: Option<&TrainedModel>,
    dataset_dir: &Path,
    scale: u32,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if scale < 2 {
        return Err(FarfError::InvalidParam(
            "scale 1 would evaluate against identity degradation; use scale 2..=4".into(),
        ));
    }
    if let Some(m) = model {
        if m.config.scale != scale {
            return Err(FarfError::InvalidParam(format!(
                "scale mismatch: model trained for x{}, requested x{}",
                m.config.scale, scale
            )));
        }
    }
    let files = list_images(dataset_dir).stage("list dataset")?;
    if files.is_empty() {
        return Err(FarfError::EmptyDataset(format!(
            "no images in {}",
            dataset_dir.display()
        )));
    }
    let border = opts.border_crop.unwrap_or(scale as usize);
    let spec = match model {
        Some(m) => m.config.degrade_spec()?,
        None => crate::imgproc::DegradeSpec::bicubic(scale)?,
    };

    let per_image: Vec<Result<Vec<EvalRow>>> = files
        .par_iter()
        .map(|path| -> Result<Vec<EvalRow>> {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let color = load_color(path)?;
            let hr = ColorImage {
                r: crop_to_scale(&color.r, scale)?,
                g: crop_to_scale(&color.g, scale)?,
                b: crop_to_scale(&color.b, scale)?,
            };
            let lr = ColorImage {
                r: degrade(&hr.r, &spec)?,
                g: degrade(&hr.g, &spec)?,
                b: degrade(&hr.b, &spec)?,
            };
            let (hr_y, _, _) = rgb_to_ycc(&hr);
            let (lr_y, _, _) = rgb_to_ycc(&lr);
            let measure = |a: &ImagePlane, b: &ImagePlane| -> Result<f64> {
                if opts.studio_luma {
                    psnr(&to_studio_luma(a), &to_studio_luma(b), border)
                } else {
                    psnr(a, b, border)
                }
            };

            let mut rows = Vec::new();
            let up = resize_bicubic(&lr_y, scale as f64)?;
            rows.push(EvalRow {
                image: name.clone(),
                method: "bicubic".into(),
                scale,
                psnr_db: measure(&up, &hr_y)?,
            });
            if let Some(m) = model {
                let sr = super_resolve(m, &lr, scale).stage(&format!("super-resolve {name}"))?;
                let (sr_y, _, _) = rgb_to_ycc(&sr);
                rows.push(EvalRow {
                    image: name,
                    method: opts.method_label.clone(),
                    scale,
                    psnr_db: measure(&sr_y, &hr_y)?,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for r in per_image {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.image.cmp(&b.image).then(a.method.cmp(&b.method)));

    // Average row per method, appended after the per-image rows.
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    for m in methods {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == m && r.image != "average")
            .map(|r| r.psnr_db)
            .collect();
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        rows.push(EvalRow {
            image: "average".into(),
            method: m,
            scale,
            psnr_db: avg,
        });
    }

    Ok(EvalReport {
        rows,
        scale,
        border_crop: border,
        studio_luma: opts.studio_luma,
        dataset: dataset_dir.display().to_string(),
        config_snapshot: model.map(|m| m.config.to_kv()),
        seed: model.map(|m| m.config.seed),
    })
}

/// One cell of an ablation run.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub label: String,
    pub config: SRConfig,
}

/// Ablation outcome: combined evaluation rows plus per-cell failures.
#[derive(Debug)]
pub struct AblationOutcome {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<(String, String)>,
}

/// Trains every cell on the same image directory and evaluates on the
/// dataset; failed cells are marked and the run continues. The bicubic
/// baseline appears once.
pub fn run_ablation(
    hr_dir: &Path,
    dataset_dir: &Path,
    cells: &[AblationCell],
) -> Result<AblationOutcome> {
    let mut rows: Vec<EvalRow> = Vec::new();
    let mut failures = Vec::new();
    let mut have_baseline = false;
    for cell in cells {
        let outcome = train(hr_dir, &cell.config, None).and_then(|(model, _)| {
            evaluate(
                Some(&model),
                dataset_dir,
                cell.config.scale,
                &EvalOptions {
                    method_label: cell.label.clone(),
                    ..EvalOptions::default()
                },
            )
        });
        match outcome {
            Ok(report) => {
                for row in report.rows {
                    if row.method == "bicubic" {
                        if !have_baseline {
                            rows.push(row);
                        }
                    } else {
                        rows.push(row);
                    }
                }
                have_baseline = true;
            }
            Err(e) => failures.push((cell.label.clone(), e.to_string())),
        }
    }
    if rows.is_empty() && !failures.is_empty() {
        let summary = failures
            .iter()
            .map(|(l, e)| format!("{l}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(FarfError::InvalidParam(format!(
            "every ablation cell failed: {summary}"
        )));
    }
    rows.sort_by(|a, b| a.image.cmp(&b.image).then(a.method.cmp(&b.method)));
    Ok(AblationOutcome { rows, failures })
}
