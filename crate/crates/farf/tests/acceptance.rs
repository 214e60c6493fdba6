//! Acceptance suite. Each test covers one numbered criterion and prints a
//! PASS / SKIPPED line (run with `-- --nocapture` to see them).
//!
//! Criteria tied to the standard benchmark datasets (Set5, the 91-image
//! training set) run whenever those directories are present — either
//! `data/Set5` / `data/T91` at the workspace root or the `FARF_SET5_DIR` /
//! `FARF_T91_DIR` environment variables (images as PNG/PPM/PGM). Without
//! them those criteria are reported as SKIPPED and a bundled stand-in
//! corpus exercises the same machinery at desk scale.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use farf::forest::{
    bag_indices, route, split_score, train_forest, ForestParams, LeafFeatures, SampleSet, Tree,
    TreeNode,
};
use farf::ibp::{ibp_upscale_traced, IbpParams};
use farf::imgproc::{
    aggregate_patches, degrade, extract_patches, load_color, resize_bicubic, rgb_to_ycc,
    DegradeSpec, ImagePlane,
};
use farf::pipeline::{
    evaluate, super_resolve, train, EvalOptions, EvalReport, Preset, SRConfig, TrainedModel,
};
use farf::regression::{fit_gmm, fit_gwrr, fit_ridge, responsibilities};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn dataset_dir(env_var: &str, default_subdir: &str) -> Option<PathBuf> {
    let path = match std::env::var_os(env_var) {
        Some(v) => PathBuf::from(v),
        None => workspace_root().join(default_subdir),
    };
    let has_images = path.is_dir()
        && std::fs::read_dir(&path).map_or(false, |mut entries| {
            entries.any(|e| {
                e.ok().map_or(false, |e| {
                    matches!(
                        e.path().extension().and_then(|x| x.to_str()),
                        Some("png" | "ppm" | "pgm" | "pnm")
                    )
                })
            })
        });
    has_images.then_some(path)
}

fn set5_dir() -> Option<PathBuf> {
    dataset_dir("FARF_SET5_DIR", "data/Set5")
}

fn t91_dir() -> Option<PathBuf> {
    dataset_dir("FARF_T91_DIR", "data/T91")
}

fn standin_train_dir() -> PathBuf {
    workspace_root().join("data/train")
}

fn standin_test_dir() -> PathBuf {
    workspace_root().join("data/test")
}

/// Desk-scale configuration used by the stand-in runs: reduced sample cap
/// and tree count, leaves big enough for the original-feature regressors.
fn desk_config(preset: Preset, seed: u64) -> SRConfig {
    let mut cfg = preset.config(3);
    cfg.n_trees = 5;
    cfg.max_depth = 11;
    cfg.min_leaf = 64;
    cfg.train_stride = 2;
    cfg.n_train_samples = 100_000;
    cfg.gmm_max_iters = 5;
    cfg.seed = seed;
    cfg
}

fn psnr_for(report: &EvalReport, image_stem: &str, method: &str) -> Option<f64> {
    report
        .rows
        .iter()
        .find(|r| r.method == method && r.image.to_lowercase().contains(image_stem))
        .map(|r| r.psnr_db)
}

// --- Criterion 1: bicubic baseline reproduction on Set5 x3 ---

#[test]
fn acceptance_1_bicubic_baseline() {
    let Some(set5) = set5_dir() else {
        println!(
            "ACCEPTANCE 1 bicubic-baseline: SKIPPED (Set5 not present; set FARF_SET5_DIR or \
             place PNGs under data/Set5)"
        );
        return;
    };
    let report = evaluate(None, &set5, 3, &EvalOptions::default()).unwrap();
    let avg = report.average("bicubic").unwrap();
    assert!(
        (avg - 30.39).abs() <= 0.3,
        "Set5 x3 bicubic average {avg:.3} dB outside 30.39 +/- 0.3"
    );
    for (stem, expect) in [("baby", 33.91), ("butterfly", 24.04), ("head", 32.88)] {
        let got = psnr_for(&report, stem, "bicubic")
            .unwrap_or_else(|| panic!("Set5 image {stem} not found in report"));
        assert!(
            (got - expect).abs() <= 0.3,
            "{stem} bicubic {got:.3} dB outside {expect} +/- 0.3"
        );
    }
    println!("ACCEPTANCE 1 bicubic-baseline: PASS (average {avg:.3} dB)");
}

// --- Criterion 2: learning lift over bicubic ---

#[test]
fn acceptance_2_learning_lift() {
    // Full criterion: FARF preset, 91-image training set, 500k sample cap,
    // 10 trees, depth 15, >= +1.0 dB over bicubic on Set5 x3.
    match (t91_dir(), set5_dir()) {
        (Some(t91), Some(set5)) => {
            let mut cfg = Preset::Farf.config(3);
            cfg.seed = 1;
            let (model, _) = train(&t91, &cfg, None).unwrap();
            let report = evaluate(Some(&model), &set5, 3, &EvalOptions::default()).unwrap();
            let farf = report.average("farf").unwrap();
            let bicubic = report.average("bicubic").unwrap();
            assert!(
                farf - bicubic >= 1.0,
                "lift {:.3} dB below 1.0 (farf {farf:.3}, bicubic {bicubic:.3})",
                farf - bicubic
            );
            println!(
                "ACCEPTANCE 2 learning-lift: PASS (farf {farf:.3} vs bicubic {bicubic:.3})"
            );
        }
        _ => println!(
            "ACCEPTANCE 2 learning-lift: SKIPPED (91-image set / Set5 not present; set \
             FARF_T91_DIR and FARF_SET5_DIR)"
        ),
    }

    // Stand-in check on the bundled corpus at desk scale. Not the
    // criterion bound; it guards the learning machinery end to end.
    let cfg = desk_config(Preset::Farf, 1);
    let (model, _) = train(&standin_train_dir(), &cfg, None).unwrap();
    let report = evaluate(Some(&model), &standin_test_dir(), 3, &EvalOptions::default()).unwrap();
    let farf = report.average("farf").unwrap();
    let bicubic = report.average("bicubic").unwrap();
    let lift = farf - bicubic;
    assert!(
        lift >= 0.8,
        "stand-in desk-scale lift {lift:.3} dB below 0.8 (farf {farf:.3}, bicubic {bicubic:.3})"
    );
    println!(
        "ACCEPTANCE 2 learning-lift [stand-in corpus, desk scale]: PASS (+{lift:.3} dB over \
         bicubic {bicubic:.3})"
    );
}

// --- Criterion 3: ablation direction over >= 3 seeds ---

fn ablation_means(train_dir: &Path, test_dir: &Path) -> [f64; 3] {
    let presets = [Preset::Rf, Preset::RfPlus, Preset::Farf];
    let mut sums = [0.0f64; 3];
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        for (i, &preset) in presets.iter().enumerate() {
            let cfg = desk_config(preset, seed);
            let (model, _) = train(train_dir, &cfg, None).unwrap();
            let report = evaluate(Some(&model), test_dir, 3, &EvalOptions::default()).unwrap();
            sums[i] += report.average("farf").unwrap();
        }
    }
    sums.map(|s| s / seeds.len() as f64)
}

#[test]
fn acceptance_3_ablation_direction() {
    let check = |means: [f64; 3], label: &str| {
        let [rf, rf_plus, farf] = means;
        assert!(
            farf >= rf_plus - 0.05,
            "{label}: FARF {farf:.4} below RF+ {rf_plus:.4} - 0.05"
        );
        assert!(
            rf_plus >= rf - 0.05,
            "{label}: RF+ {rf_plus:.4} below RF {rf:.4} - 0.05"
        );
        println!(
            "ACCEPTANCE 3 ablation-direction{label}: PASS (RF {rf:.3} -> RF+ {rf_plus:.3} -> \
             FARF {farf:.3})"
        );
    };

    match (t91_dir(), set5_dir()) {
        (Some(t91), Some(set5)) => check(ablation_means(&t91, &set5), ""),
        _ => {
            println!(
                "ACCEPTANCE 3 ablation-direction: SKIPPED on Set5 (datasets not present); \
                 running stand-in corpus"
            );
            check(
                ablation_means(&standin_train_dir(), &standin_test_dir()),
                " [stand-in corpus]",
            );
        }
    }
}

// --- Criterion 4: ridge oracle equivalence on 100 random instances ---

/// Independent brute-force solver: naive-loop normal equations plus
/// Gauss-Jordan elimination with partial pivoting.
fn oracle_ridge(d_l: &DMatrix<f64>, d_h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (m, d) = (d_l.nrows(), d_l.ncols());
    let dh = d_h.ncols();
    let mut a = vec![vec![0.0f64; d]; d];
    for i in 0..d {
        for j in 0..d {
            for s in 0..m {
                a[i][j] += d_l[(s, i)] * d_l[(s, j)];
            }
        }
        a[i][i] += lambda;
    }
    let mut b = vec![vec![0.0f64; dh]; d];
    for i in 0..d {
        for j in 0..dh {
            for s in 0..m {
                b[i][j] += d_l[(s, i)] * d_h[(s, j)];
            }
        }
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let diag = a[col][col];
        for v in a[col].iter_mut() {
            *v /= diag;
        }
        for v in b[col].iter_mut() {
            *v /= diag;
        }
        for r in 0..d {
            if r != col && a[r][col] != 0.0 {
                let f = a[r][col];
                for c in 0..d {
                    a[r][c] -= f * a[col][c];
                }
                for c in 0..dh {
                    b[r][c] -= f * b[col][c];
                }
            }
        }
    }
    DMatrix::from_fn(dh, d, |r, c| b[c][r])
}

fn random_instances(seed: u64) -> Vec<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let m = rng.gen_range(5..=200);
            let d = rng.gen_range(2..=50);
            let dh = rng.gen_range(1..=12);
            let d_l = DMatrix::from_fn(m, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let d_h = DMatrix::from_fn(m, dh, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
            (d_l, d_h, lambda)
        })
        .collect()
}

#[test]
fn acceptance_4_ridge_oracle_equivalence() {
    let mut worst = 0.0f64;
    for (d_l, d_h, lambda) in random_instances(40) {
        let reg = fit_ridge(&d_l, &d_h, lambda).unwrap();
        let oracle = oracle_ridge(&d_l, &d_h, lambda);
        let rel = (reg.p - &oracle).norm() / oracle.norm();
        worst = worst.max(rel);
        assert!(rel < 1e-8, "relative Frobenius error {rel}");
    }
    println!("ACCEPTANCE 4 ridge-oracle: PASS (worst relative error {worst:.2e})");
}

// --- Criterion 5: GWRR degeneracy to plain ridge at cap = 1 ---

#[test]
fn acceptance_5_gwrr_degeneracy() {
    let mut worst = 0.0f64;
    for (d_l, d_h, lambda) in random_instances(40) {
        let ridge = fit_ridge(&d_l, &d_h, lambda).unwrap();
        let gwrr = fit_gwrr(&d_l, &d_h, 3, lambda, 1.0, 1e-6, 7, 30).unwrap();
        let diff = (ridge.p - gwrr.p).amax();
        worst = worst.max(diff);
        assert!(diff <= 1e-12, "cap=1 deviation {diff}");
    }
    println!("ACCEPTANCE 5 gwrr-degeneracy: PASS (worst deviation {worst:.2e})");
}

// --- Criterion 6: EM properties ---

#[test]
fn acceptance_6_em_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for case in 0..20 {
        let m = rng.gen_range(30..=200);
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=4).min(m);
        // A loose mixture so EM has structure to climb toward.
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect())
            .collect();
        let samples = DMatrix::from_fn(m, d, |r, c| {
            centers[r % k][c] + rng.gen::<f64>() - 0.5
        });
        let gmm = fit_gmm(&samples, k, rng.gen(), 100).unwrap();
        for w in gmm.ll_trace.windows(2) {
            assert!(
                w[1] >= w[0],
                "case {case}: log-likelihood decreased {} -> {}",
                w[0],
                w[1]
            );
        }
        let (resp, _) = responsibilities(&gmm, &samples);
        for i in 0..m {
            let s: f64 = (0..k).map(|j| resp[(i, j)]).sum();
            assert!((s - 1.0).abs() <= 1e-9, "case {case}: responsibilities sum {s}");
        }
        let weight_sum: f64 = gmm.weights.iter().sum();
        assert!((weight_sum - 1.0).abs() <= 1e-9);
    }

    // Two-blob recovery: means near {0, 100}, mixing weights near the true
    // proportions.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (n0, n1) = (120, 60);
    let mut rows = Vec::new();
    for _ in 0..n0 {
        rows.push(rng.gen::<f64>() * 0.6 - 0.3);
    }
    for _ in 0..n1 {
        rows.push(100.0 + rng.gen::<f64>() * 0.6 - 0.3);
    }
    let samples = DMatrix::from_column_slice(n0 + n1, 1, &rows);
    let gmm = fit_gmm(&samples, 2, 9, 200).unwrap();
    let mut pairs: Vec<(f64, f64)> = gmm
        .means
        .iter()
        .zip(&gmm.weights)
        .map(|(mean, &w)| (mean[0], w))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    assert!((pairs[0].0 - 0.0).abs() < 0.5, "low mean {}", pairs[0].0);
    assert!((pairs[1].0 - 100.0).abs() < 0.5, "high mean {}", pairs[1].0);
    assert!((pairs[0].1 - n0 as f64 / 180.0).abs() < 0.05);
    assert!((pairs[1].1 - n1 as f64 / 180.0).abs() < 0.05);
    println!("ACCEPTANCE 6 em-properties: PASS");
}

// --- Criterion 7: forest invariant suite ---

/// Synthetic clustered regression data with cluster structure visible to
/// the compressed features.
fn synthetic_samples(n_per: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_c, d_o, d_t) = (6, 10, 4);
    let n = 2 * n_per;
    let mut compressed = Vec::with_capacity(n * d_c);
    let mut original = Vec::with_capacity(n * d_o);
    let mut targets = Vec::with_capacity(n * d_t);
    for cluster in 0..2 {
        let base = if cluster == 0 { -1.0 } else { 1.0 };
        for _ in 0..n_per {
            compressed.push(base + rng.gen::<f64>() * 0.4 - 0.2);
            for _ in 1..d_c {
                compressed.push(rng.gen::<f64>() - 0.5);
            }
            let feats: Vec<f64> = (0..d_o).map(|_| rng.gen::<f64>()).collect();
            original.extend_from_slice(&feats);
            targets.push(feats.iter().sum::<f64>() * base);
            targets.push((feats[0] - feats[1]) * base);
            targets.push(feats[2] * base * 0.5);
            targets.push(rng.gen::<f64>() * 0.01);
        }
    }
    SampleSet {
        compressed,
        original,
        targets,
        n,
        d_compressed: d_c,
        d_original: d_o,
        d_target: d_t,
    }
}

fn tree_max_depth(tree: &Tree, idx: usize) -> usize {
    match &tree.nodes[idx] {
        TreeNode::Leaf(_) => 0,
        TreeNode::Split(s) => 1 + tree_max_depth(tree, s.left).max(tree_max_depth(tree, s.right)),
    }
}

fn assert_monotone_splits(tree: &Tree, idx: usize, samples_at: &[u32], set: &SampleSet) {
    if let TreeNode::Split(s) = &tree.nodes[idx] {
        let (l, r): (Vec<u32>, Vec<u32>) = samples_at
            .iter()
            .partition(|&&i| set.compressed_row(i as usize)[s.feat_index] < s.threshold);
        let lt: Vec<&[f64]> = l.iter().map(|&i| set.target_row(i as usize)).collect();
        let rt: Vec<&[f64]> = r.iter().map(|&i| set.target_row(i as usize)).collect();
        let children = split_score(&lt, &rt);
        // Parent impurity via the same public scorer: a split with one
        // empty side is the parent itself, so score the parent as a
        // single-side union.
        let all: Vec<&[f64]> = samples_at
            .iter()
            .map(|&i| set.target_row(i as usize))
            .collect();
        let parent = {
            // Weighted two-pass variance of the full node.
            let d = all[0].len();
            let m = all.len() as f64;
            (0..d)
                .map(|c| {
                    let mean: f64 = all.iter().map(|row| row[c]).sum::<f64>() / m;
                    all.iter().map(|row| (row[c] - mean).powi(2)).sum::<f64>() / m
                })
                .sum::<f64>()
        };
        assert!(
            children <= parent - 1e-12,
            "node {idx}: children impurity {children} did not reduce parent {parent}"
        );
        assert_monotone_splits(tree, s.left, &l, set);
        assert_monotone_splits(tree, s.right, &r, set);
    }
}

#[test]
fn acceptance_7_forest_invariants() {
    let set = synthetic_samples(512, 70);
    let params = ForestParams {
        n_trees: 4,
        max_depth: 6,
        min_leaf: 32,
        seed: 71,
        ..ForestParams::default()
    };
    let model = train_forest(&set, &params).unwrap();

    for (t, tree) in model.trees.iter().enumerate() {
        let bag = bag_indices(params.seed, t, set.n, &params);
        // Partition: every bagged sample routes to exactly one leaf and
        // the leaf counts add up to the bag size.
        let mut routed = vec![0usize; tree.nodes.len()];
        for &i in &bag {
            let leaf = route(tree, set.compressed_row(i as usize));
            let idx = tree
                .nodes
                .iter()
                .position(|n| matches!(n, TreeNode::Leaf(l) if std::ptr::eq(l, leaf)))
                .unwrap();
            routed[idx] += 1;
        }
        let mut total = 0usize;
        for (idx, node) in tree.nodes.iter().enumerate() {
            if let TreeNode::Leaf(l) = node {
                assert_eq!(l.n_samples, routed[idx], "tree {t} leaf {idx} count");
                total += l.n_samples;
            }
        }
        assert_eq!(total, bag.len(), "tree {t} partition size");

        assert!(tree_max_depth(tree, 0) <= params.max_depth, "depth bound");
        assert_monotone_splits(tree, 0, &bag, &set);
    }

    // Seed determinism end to end: identical config + data give
    // bit-identical serialized models.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(Preset::Farf, 99);
    cfg.n_trees = 2;
    cfg.max_depth = 5;
    cfg.n_train_samples = 6000;
    cfg.gmm_max_iters = 2;
    let (model_a, _) = train(&standin_train_dir(), &cfg, Some(&dir.path().join("a.farf"))).unwrap();
    let (_, _) = train(&standin_train_dir(), &cfg, Some(&dir.path().join("b.farf"))).unwrap();
    let bytes_a = std::fs::read(dir.path().join("a.farf")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b.farf")).unwrap();
    assert_eq!(bytes_a, bytes_b, "serialized models differ across runs");
    drop(model_a);

    // Degenerate forest: a single full-bag tree forced to stay a leaf,
    // with uniform mixture weights, reproduces the global ridge regressor.
    let small = synthetic_samples(128, 72);
    let degenerate = ForestParams {
        n_trees: 1,
        max_depth: 1,
        min_leaf: small.n,
        bag_fraction: 1.0,
        bag_with_replacement: false,
        leaf_features: LeafFeatures::Original,
        leaf_fit: farf::forest::LeafFitParams {
            gwrr_cap: 1.0,
            ..Default::default()
        },
        seed: 5,
        ..ForestParams::default()
    };
    let forest = train_forest(&small, &degenerate).unwrap();
    assert_eq!(forest.trees[0].nodes.len(), 1, "root must stay a leaf");
    let x = DMatrix::from_fn(small.n, small.d_original, |r, c| small.original_row(r)[c]);
    let y = DMatrix::from_fn(small.n, small.d_target, |r, c| small.target_row(r)[c]);
    let global = fit_ridge(&x, &y, degenerate.leaf_fit.lambda_base).unwrap();
    let coarse = vec![0.0f64; small.d_target];
    for i in 0..small.n {
        let ours = farf::forest::infer_patch(
            &forest,
            small.compressed_row(i),
            small.original_row(i),
            &coarse,
        );
        let reference = farf::regression::predict(&global, small.original_row(i)).unwrap();
        for (a, b) in ours.iter().zip(&reference) {
            assert!(
                (a - b).abs() <= 1e-10,
                "degenerate forest deviates from global ridge: {a} vs {b}"
            );
        }
    }
    println!("ACCEPTANCE 7 forest-invariants: PASS");
}

// --- Criterion 8: IBP residual property ---

#[test]
fn acceptance_8_ibp_property() {
    let (dir, label) = match set5_dir() {
        Some(d) => (d, "Set5"),
        None => (standin_test_dir(), "stand-in corpus"),
    };
    let spec = DegradeSpec::bicubic(3).unwrap();
    let params = IbpParams::for_scale(3);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|x| x.to_str()),
                Some("png" | "ppm" | "pgm" | "pnm")
            )
        })
        .collect();
    files.sort();
    assert!(!files.is_empty());

    let l2 = |a: &ImagePlane, b: &ImagePlane| -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    for path in &files {
        let color = load_color(path).unwrap();
        let (y, _, _) = rgb_to_ycc(&color);
        let w = y.width() - y.width() % 3;
        let h = y.height() - y.height() % 3;
        let hr = y.center_crop(w, h).unwrap();
        let lr = degrade(&hr, &spec).unwrap();

        let (ibp_out, trace) = ibp_upscale_traced(&lr, &spec, &params).unwrap();
        let bicubic = resize_bicubic(&lr, 3.0).unwrap();
        let res_ibp = l2(&lr, &degrade(&ibp_out, &spec).unwrap());
        let res_bicubic = l2(&lr, &degrade(&bicubic, &spec).unwrap());
        assert!(
            res_ibp <= res_bicubic,
            "{}: IBP residual {res_ibp} above bicubic {res_bicubic}",
            path.display()
        );
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0],
                "{}: accepted residual increased {} -> {}",
                path.display(),
                w[0],
                w[1]
            );
        }
    }
    println!(
        "ACCEPTANCE 8 ibp-property: PASS ({} images, {label})",
        files.len()
    );
}

// --- Criterion 9: pipeline determinism and round-trips ---

#[test]
fn acceptance_9_determinism_and_round_trip() {
    // Save / load / super-resolve must match the in-memory model bit for
    // bit.
    let mut cfg = desk_config(Preset::Farf, 31);
    cfg.n_trees = 2;
    cfg.max_depth = 6;
    cfg.n_train_samples = 10_000;
    cfg.gmm_max_iters = 3;
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.farf");
    let (model, _) = train(&standin_train_dir(), &cfg, Some(&model_path)).unwrap();
    let loaded = TrainedModel::load(&model_path).unwrap();

    let input = load_color(&standin_test_dir().join("chelsea.png")).unwrap();
    let out_mem = super_resolve(&model, &input, 3).unwrap();
    let out_loaded = super_resolve(&loaded, &input, 3).unwrap();
    assert_eq!(out_mem.r.data(), out_loaded.r.data(), "red plane differs");
    assert_eq!(out_mem.g.data(), out_loaded.g.data(), "green plane differs");
    assert_eq!(out_mem.b.data(), out_loaded.b.data(), "blue plane differs");

    let png_a = dir.path().join("a.png");
    let png_b = dir.path().join("b.png");
    farf::imgproc::save_color(&out_mem, &png_a).unwrap();
    farf::imgproc::save_color(&out_loaded, &png_b).unwrap();
    assert_eq!(
        std::fs::read(&png_a).unwrap(),
        std::fs::read(&png_b).unwrap(),
        "encoded outputs differ"
    );

    // Extract / aggregate identity on 50 random images.
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for case in 0..50 {
        let w = rng.gen_range(8..48);
        let h = rng.gen_range(8..48);
        let img = ImagePlane::from_vec(
            w,
            h,
            (0..w * h).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let size = rng.gen_range(2..=6usize.min(w).min(h));
        let stride = rng.gen_range(1..=size);
        let patches = extract_patches(&img, size, stride).unwrap();
        let back = aggregate_patches(&patches, w, h).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!(
                (a - b).abs() < 1e-12,
                "case {case}: identity violated by {}",
                (a - b).abs()
            );
        }
    }
    println!("ACCEPTANCE 9 determinism-roundtrip: PASS");
}

// --- Criterion 10 (extended, opt-in): full-scale reproduction ---

#[test]
fn acceptance_10_full_scale_optin() {
    let opted_in = std::env::var("FARF_FULL_SCALE").map_or(false, |v| v == "1");
    match (opted_in, t91_dir(), set5_dir()) {
        (true, Some(t91), Some(set5)) => {
            let mut cfg = Preset::FarfStar.config(3);
            cfg.n_train_samples = 2_000_000;
            cfg.seed = 1;
            let (model, _) = train(&t91, &cfg, None).unwrap();
            let report = evaluate(Some(&model), &set5, 3, &EvalOptions::default()).unwrap();
            let avg = report.average("farf").unwrap();
            assert!(
                (avg - 32.78).abs() <= 0.2,
                "FARF* Set5 x3 average {avg:.3} outside 32.78 +/- 0.2"
            );
            println!("ACCEPTANCE 10 full-scale: PASS ({avg:.3} dB)");
        }
        _ => println!(
            "ACCEPTANCE 10 full-scale: SKIPPED (opt-in; requires FARF_FULL_SCALE=1 plus the \
             91-image set and Set5)"
        ),
    }
}

// --- Additional pinned check: super-resolve self-consistency ---

#[test]
fn super_resolve_output_stays_consistent_with_input() {
    let mut cfg = desk_config(Preset::Farf, 8);
    cfg.n_trees = 2;
    cfg.max_depth = 6;
    cfg.n_train_samples = 10_000;
    cfg.gmm_max_iters = 3;
    let (model, _) = train(&standin_train_dir(), &cfg, None).unwrap();
    let lr = load_color(&standin_test_dir().join("flower.png")).unwrap();
    let sr = super_resolve(&model, &lr, 3).unwrap();
    assert_eq!(sr.width(), lr.width() * 3);
    assert_eq!(sr.height(), lr.height() * 3);

    // Downscaling the output must reproduce the input closely.
    let spec = DegradeSpec::bicubic(3).unwrap();
    let (sr_y, _, _) = rgb_to_ycc(&sr);
    let (lr_y, _, _) = rgb_to_ycc(&lr);
    let down = degrade(&sr_y, &spec).unwrap();
    let psnr = farf::imgproc::psnr(&down, &lr_y, 0).unwrap();
    assert!(psnr > 30.0, "self-consistency PSNR {psnr:.2} dB too low");

    // Constant input stays constant.
    let flat = farf::imgproc::ColorImage::from_gray(ImagePlane::constant(24, 24, 0.5));
    let out = super_resolve(&model, &flat, 3).unwrap();
    for &v in out.g.data() {
        assert!((v - 0.5).abs() < 2e-2, "constant drifted to {v}");
    }
}
