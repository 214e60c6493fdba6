//! Random forest over coupled feature sets: split nodes threshold one
//! compressed-feature dimension, leaves hold ridge regressors fitted on
//! the configured leaf feature space (original by default).
//!
//! Training is deterministic end to end: per-tree seeds derive from the
//! master seed, per-node generators derive from (tree seed, preorder node
//! id), and leaf fitting order never affects results, so parallel and
//! sequential runs produce identical models.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FarfError, Result, StageContext};
use crate::regression::{
    fit_gwrr, fit_ridge, predict_add, LeafRegressor,
};

/// Which feature space feeds the leaf regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafFeatures {
    Original,
    Compressed,
}

/// Leaf regression hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafFitParams {
    pub lambda_base: f64,
    pub gmm_k: usize,
    pub gwrr_cap: f64,
    pub gwrr_epsilon: f64,
    pub gmm_max_iters: usize,
}

impl Default for LeafFitParams {
    fn default() -> Self {
        LeafFitParams {
            lambda_base: 0.01,
            gmm_k: 3,
            gwrr_cap: 10.0,
            gwrr_epsilon: 1e-6,
            gmm_max_iters: 50,
        }
    }
}

/// Forest training parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_threshold_candidates: usize,
    /// Compressed dimensions drawn per split; 0 means round(sqrt(d)).
    pub n_feature_candidates: usize,
    pub bag_fraction: f64,
    pub bag_with_replacement: bool,
    pub leaf_features: LeafFeatures,
    pub leaf_fit: LeafFitParams,
    pub seed: u64,
}

/// Floor below which min_leaf is rejected regardless of dimensionality.
pub const MIN_LEAF_FLOOR: usize = 32;

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            max_depth: 15,
            min_leaf: 64,
            n_threshold_candidates: 16,
            n_feature_candidates: 0,
            bag_fraction: 0.8,
            bag_with_replacement: true,
            leaf_features: LeafFeatures::Original,
            leaf_fit: LeafFitParams::default(),
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(FarfError::InvalidParam("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(FarfError::InvalidParam("max_depth must be >= 1".into()));
        }
        if self.min_leaf < MIN_LEAF_FLOOR {
            return Err(FarfError::InvalidParam(format!(
                "min_leaf must be >= {MIN_LEAF_FLOOR}, got {}",
                self.min_leaf
            )));
        }
        if self.n_threshold_candidates == 0 {
            return Err(FarfError::InvalidParam(
                "n_threshold_candidates must be >= 1".into(),
            ));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(FarfError::InvalidParam(format!(
                "bag_fraction must be in (0, 1], got {}",
                self.bag_fraction
            )));
        }
        if !(self.leaf_fit.lambda_base > 0.0) {
            return Err(FarfError::InvalidParam(format!(
                "lambda_base must be > 0, got {}",
                self.leaf_fit.lambda_base
            )));
        }
        if self.leaf_fit.gmm_k == 0 || !(self.leaf_fit.gwrr_cap >= 1.0) {
            return Err(FarfError::InvalidParam(
                "gmm_k must be >= 1 and gwrr_cap >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_candidates_for(&self, d_compressed: usize) -> usize {
        let n = if self.n_feature_candidates == 0 {
            (d_compressed as f64).sqrt().round() as usize
        } else {
            self.n_feature_candidates
        };
        n.clamp(1, d_compressed)
    }
}

/// Training triples: row-major compressed/original features and targets.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub compressed: Vec<f64>,
    pub original: Vec<f64>,
    pub targets: Vec<f64>,
    pub n: usize,
    pub d_compressed: usize,
    pub d_original: usize,
    pub d_target: usize,
}

impl SampleSet {
    pub fn validate(&self) -> Result<()> {
        if self.compressed.len() != self.n * self.d_compressed
            || self.original.len() != self.n * self.d_original
            || self.targets.len() != self.n * self.d_target
        {
            return Err(FarfError::DimensionMismatch {
                expected: format!("{} consistent triples", self.n),
                got: "ragged sample arrays".into(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn compressed_row(&self, i: usize) -> &[f64] {
        &self.compressed[i * self.d_compressed..(i + 1) * self.d_compressed]
    }

    #[inline]
    pub fn original_row(&self, i: usize) -> &[f64] {
        &self.original[i * self.d_original..(i + 1) * self.d_original]
    }

    #[inline]
    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.d_target..(i + 1) * self.d_target]
    }
}

/// Internal split: route left when compressed[feat_index] < threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitNode {
    pub feat_index: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// Terminal node holding the fitted regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafNode {
    pub regressor: LeafRegressor,
    pub n_samples: usize,
    /// Mean training target; fallback predictor and diagnostics.
    pub mean_target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split(SplitNode),
    Leaf(LeafNode),
}

/// One decision tree; nodes stored in preorder, root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf(_)))
            .count()
    }
}

/// A trained ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub d_compressed: usize,
    pub d_leaf_input: usize,
    pub d_target: usize,
    pub trees: Vec<Tree>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic seed derivation: hash(master, index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0xA5A5_5A5A_0F0F_F0F0)))
}

/// Bagged sample indices for one tree, sorted ascending. With replacement
/// the bag may repeat indices; without replacement at fraction 1.0 the
/// bag is the identity subset.
pub fn bag_indices(master_seed: u64, tree_index: usize, n: usize, params: &ForestParams) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, tree_index as u64));
    let k = ((n as f64 * params.bag_fraction).round() as usize).clamp(1, n);
    let mut bag: Vec<u32> = if params.bag_with_replacement {
        (0..k).map(|_| rng.gen_range(0..n) as u32).collect()
    } else {
        // Partial Fisher-Yates selection of k distinct indices.
        let mut pool: Vec<u32> = (0..n as u32).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    };
    bag.sort_unstable();
    bag
}

/// Weighted impurity of a two-way split: each side scores the trace of its
/// target covariance (sum of per-dimension population variances), combined
/// by sample fraction. Lower is better; an empty side scores infinity.
pub fn split_score(l_targets: &[&[f64]], r_targets: &[&[f64]]) -> f64 {
    if l_targets.is_empty() || r_targets.is_empty() {
        return f64::INFINITY;
    }
    let n = (l_targets.len() + r_targets.len()) as f64;
    (variance_trace_times_n(l_targets) + variance_trace_times_n(r_targets)) / n
}

/// |S| * H(S): sum over dimensions of (sum of squares - sum^2 / |S|).
fn variance_trace_times_n(targets: &[&[f64]]) -> f64 {
    let d = targets[0].len();
    let mut sum = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    for t in targets {
        for (c, &v) in t.iter().enumerate() {
            sum[c] += v;
            sumsq[c] += v * v;
        }
    }
    let m = targets.len() as f64;
    sum.iter()
        .zip(&sumsq)
        .map(|(&s, &q)| q - s * s / m)
        .sum()
}

/// Per-node target statistics used by the threshold scan.
struct NodeStats {
    count: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl NodeStats {
    fn gather(samples: &SampleSet, idx: &[u32]) -> NodeStats {
        let d = samples.d_target;
        let mut sum = vec![0.0f64; d];
        let mut sumsq = vec![0.0f64; d];
        for &i in idx {
            for (c, &v) in samples.target_row(i as usize).iter().enumerate() {
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        NodeStats {
            count: idx.len(),
            sum,
            sumsq,
        }
    }

    /// |S| * H(S), as in `variance_trace_times_n`.
    fn impurity_times_n(&self) -> f64 {
        let m = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(&s, &q)| q - s * s / m)
            .sum()
    }
}

struct BestSplit {
    feat_index: usize,
    threshold: f64,
    score: f64,
}

/// Margin a candidate split must beat the parent impurity by.
const SPLIT_GAIN_MARGIN: f64 = 1e-12;

struct TreeBuilder<'a> {
    samples: &'a SampleSet,
    params: &'a ForestParams,
    tree_seed: u64,
    tree_label: usize,
    nodes: Vec<Option<TreeNode>>,
    leaf_jobs: Vec<(usize, Vec<u32>)>,
}

impl<'a> TreeBuilder<'a> {
    fn build(&mut self, idx: Vec<u32>, depth: usize) -> usize {
        let node_id = self.nodes.len();
        self.nodes.push(None);

        let stats = NodeStats::gather(self.samples, &idx);
        let n = stats.count;
        let parent_impurity = stats.impurity_times_n() / n as f64;

        let can_split = depth < self.params.max_depth && n >= 2 * self.params.min_leaf;
        let best = if can_split {
            self.find_best_split(&idx, &stats, node_id)
        } else {
            None
        };

        match best {
            Some(b) if b.score < parent_impurity - SPLIT_GAIN_MARGIN => {
                let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| {
                    self.samples.compressed_row(i as usize)[b.feat_index] < b.threshold
                });
                let left = self.build(left_idx, depth + 1);
                let right = self.build(right_idx, depth + 1);
                self.nodes[node_id] = Some(TreeNode::Split(SplitNode {
                    feat_index: b.feat_index,
                    threshold: b.threshold,
                    left,
                    right,
                }));
            }
            _ => {
                self.leaf_jobs.push((node_id, idx));
            }
        }
        node_id
    }

    /// Draws candidate dimensions and thresholds from the node's seeded
    /// generator and scans them with per-bucket target statistics.
    fn find_best_split(&self, idx: &[u32], stats: &NodeStats, node_id: usize) -> Option<BestSplit> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.tree_seed, node_id as u64));
        let d = self.samples.d_compressed;
        let dt = self.samples.d_target;
        let n_dims = self.params.feature_candidates_for(d);
        let nt = self.params.n_threshold_candidates;

        // Candidate dimensions without replacement.
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..n_dims {
            let j = rng.gen_range(i..d);
            pool.swap(i, j);
        }

        let mut best: Option<BestSplit> = None;
        let mut vals = vec![0.0f64; idx.len()];
        let mut thresholds = vec![0.0f64; nt];
        let mut bucket_count = vec![0usize; nt + 1];
        let mut bucket_sum = vec![0.0f64; (nt + 1) * dt];
        let mut bucket_sumsq = vec![0.0f64; (nt + 1) * dt];

        for &dim in pool.iter().take(n_dims) {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (v, &i) in vals.iter_mut().zip(idx) {
                *v = self.samples.compressed_row(i as usize)[dim];
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            // Thresholds are drawn even for constant dimensions so the
            // generator stream stays aligned across candidate dims.
            for t in thresholds.iter_mut() {
                *t = rng.gen_range(lo..=hi);
            }
            if !(hi > lo) {
                continue;
            }
            thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());

            bucket_count.fill(0);
            bucket_sum.fill(0.0);
            bucket_sumsq.fill(0.0);
            for (k, &i) in idx.iter().enumerate() {
                let v = vals[k];
                let b = thresholds.partition_point(|&t| t <= v);
                bucket_count[b] += 1;
                let sum = &mut bucket_sum[b * dt..(b + 1) * dt];
                let sumsq = &mut bucket_sumsq[b * dt..(b + 1) * dt];
                for (c, &tv) in self.samples.target_row(i as usize).iter().enumerate() {
                    sum[c] += tv;
                    sumsq[c] += tv * tv;
                }
            }

            // Prefix scan: threshold j sends buckets 0..=j left.
            let mut left_count = 0usize;
            let mut left_sum = vec![0.0f64; dt];
            let mut left_sumsq = vec![0.0f64; dt];
            for j in 0..nt {
                left_count += bucket_count[j];
                for c in 0..dt {
                    left_sum[c] += bucket_sum[j * dt + c];
                    left_sumsq[c] += bucket_sumsq[j * dt + c];
                }
                let right_count = stats.count - left_count;
                if left_count < self.params.min_leaf || right_count < self.params.min_leaf {
                    continue;
                }
                let mut impurity_n = 0.0;
                for c in 0..dt {
                    let ls = left_sum[c];
                    let lq = left_sumsq[c];
                    let rs = stats.sum[c] - ls;
                    let rq = stats.sumsq[c] - lq;
                    impurity_n += lq - ls * ls / left_count as f64;
                    impurity_n += rq - rs * rs / right_count as f64;
                }
                let score = impurity_n / stats.count as f64;
                if best.as_ref().map_or(true, |b| score < b.score) {
                    best = Some(BestSplit {
                        feat_index: dim,
                        threshold: thresholds[j],
                        score,
                    });
                }
            }
        }
        best
    }

    fn fit_leaves(&mut self) -> Result<()> {
        let jobs = std::mem::take(&mut self.leaf_jobs);
        let fitted: Vec<(usize, Result<LeafNode>)> = jobs
            .par_iter()
            .map(|(node_id, idx)| {
                let leaf = self
                    .fit_one_leaf(idx, *node_id)
                    .stage(&format!("tree {} leaf node {}", self.tree_label, node_id));
                (*node_id, leaf)
            })
            .collect();
        for (node_id, leaf) in fitted {
            self.nodes[node_id] = Some(TreeNode::Leaf(leaf?));
        }
        Ok(())
    }

    fn fit_one_leaf(&self, idx: &[u32], node_id: usize) -> Result<LeafNode> {
        let m = idx.len();
        let dt = self.samples.d_target;
        let d_in = match self.params.leaf_features {
            LeafFeatures::Original => self.samples.d_original,
            LeafFeatures::Compressed => self.samples.d_compressed,
        };
        let x = DMatrix::from_fn(m, d_in, |r, c| match self.params.leaf_features {
            LeafFeatures::Original => self.samples.original_row(idx[r] as usize)[c],
            LeafFeatures::Compressed => self.samples.compressed_row(idx[r] as usize)[c],
        });
        let y = DMatrix::from_fn(m, dt, |r, c| self.samples.target_row(idx[r] as usize)[c]);

        let fit = &self.params.leaf_fit;
        // Mixture weighting needs enough samples per component; small
        // leaves fall back to plain ridge.
        let regressor = if m < 4 * fit.gmm_k {
            fit_ridge(&x, &y, fit.lambda_base)?
        } else {
            fit_gwrr(
                &x,
                &y,
                fit.gmm_k,
                fit.lambda_base,
                fit.gwrr_cap,
                fit.gwrr_epsilon,
                derive_seed(self.tree_seed, node_id as u64 ^ 0x6EAF_0000_0000_0000),
                fit.gmm_max_iters,
            )?
        };

        let mut mean_target = vec![0.0f64; dt];
        for &i in idx {
            for (c, &v) in self.samples.target_row(i as usize).iter().enumerate() {
                mean_target[c] += v;
            }
        }
        for v in &mut mean_target {
            *v /= m as f64;
        }
        Ok(LeafNode {
            regressor,
            n_samples: m,
            mean_target,
        })
    }
}

/// Trains one tree on the given bag of sample indices.
pub fn train_tree(
    samples: &SampleSet,
    bag: Vec<u32>,
    params: &ForestParams,
    tree_seed: u64,
    tree_label: usize,
) -> Result<Tree> {
    samples.validate()?;
    if bag.len() < params.min_leaf {
        return Err(FarfError::InvalidParam(format!(
            "tree {}: bag of {} samples is below min_leaf {}",
            tree_label,
            bag.len(),
            params.min_leaf
        )));
    }
    let mut builder = TreeBuilder {
        samples,
        params,
        tree_seed,
        tree_label,
        nodes: Vec::new(),
        leaf_jobs: Vec::new(),
    };
    builder.build(bag, 0);
    builder.fit_leaves()?;
    let nodes = builder
        .nodes
        .into_iter()
        .map(|n| n.expect("all nodes filled"))
        .collect();
    Ok(Tree { nodes })
}

/// Trains the ensemble: each tree gets an independent bag drawn from its
/// derived seed. Trees run in parallel; results equal sequential runs.
pub fn train_forest(samples: &SampleSet, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    samples.validate()?;
    if samples.n == 0 {
        return Err(FarfError::EmptyDataset("no training samples".into()));
    }
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let bag = bag_indices(params.seed, t, samples.n, params);
            train_tree(samples, bag, params, derive_seed(params.seed, t as u64), t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        params: params.clone(),
        d_compressed: samples.d_compressed,
        d_leaf_input: match params.leaf_features {
            LeafFeatures::Original => samples.d_original,
            LeafFeatures::Compressed => samples.d_compressed,
        },
        d_target: samples.d_target,
        trees,
    })
}

/// Routes a compressed feature to its leaf: left when v[i] < threshold.
pub fn route<'t>(tree: &'t Tree, compressed: &[f64]) -> &'t LeafNode {
    let mut node = &tree.nodes[0];
    loop {
        match node {
            TreeNode::Leaf(leaf) => return leaf,
            TreeNode::Split(s) => {
                node = if compressed[s.feat_index] < s.threshold {
                    &tree.nodes[s.left]
                } else {
                    &tree.nodes[s.right]
                };
            }
        }
    }
}

/// Ensemble prediction for one patch: per tree, route by the compressed
/// feature and predict the residual from the leaf feature space; residuals
/// are averaged in tree order and added to the coarse patch.
pub fn infer_patch(
    model: &ForestModel,
    compressed: &[f64],
    original: &[f64],
    coarse_patch: &[f64],
) -> Vec<f64> {
    let mut acc = vec![0.0f64; model.d_target];
    let leaf_input = match model.params.leaf_features {
        LeafFeatures::Original => original,
        LeafFeatures::Compressed => compressed,
    };
    for tree in &model.trees {
        let leaf = route(tree, compressed);
        predict_add(&leaf.regressor, leaf_input, &mut acc);
    }
    let t = model.trees.len() as f64;
    for (a, &c) in acc.iter_mut().zip(coarse_patch) {
        *a = *a / t + c;
    }
    acc
}
