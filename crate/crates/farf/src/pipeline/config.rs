//! Super-resolution configuration and its canonical key-value text form.
//!
//! The text form is line-oriented `key = value` with a fixed key order, so
//! serialization is deterministic and snapshots embedded in model files
//! compare byte-for-byte.

use crate::error::{FarfError, Result};
use crate::features::FeatureConfig;
use crate::forest::{ForestParams, LeafFeatures, LeafFitParams};
use crate::ibp::IbpParams;
use crate::imgproc::DegradeSpec;
use crate::projection::ProjectionKind;

/// How the initial coarse estimate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseEstimator {
    Bicubic,
    Ibp,
}

/// Degradation used for training pairs and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegradationKind {
    /// Antialiased bicubic downscale.
    Bicubic,
    /// Separable Gaussian blur followed by subsampling.
    Gaussian { sigma: f64 },
}

/// Every training/inference hyperparameter; serialized alongside models.
#[derive(Debug, Clone, PartialEq)]
pub struct SRConfig {
    pub scale: u32,
    /// Feature / target patch edge on the upscaled grid.
    pub patch_size: usize,
    pub train_stride: usize,
    pub infer_stride: usize,
    pub use_magnitudes: bool,
    pub projection_kind: ProjectionKind,
    pub projection_dim: usize,
    pub leaf_features: LeafFeatures,
    pub coarse: CoarseEstimator,
    pub degradation: DegradationKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_threshold_candidates: usize,
    pub n_feature_candidates: usize,
    pub bag_fraction: f64,
    pub bag_with_replacement: bool,
    pub lambda_base: f64,
    pub gmm_k: usize,
    pub gwrr_cap: f64,
    pub gwrr_epsilon: f64,
    pub gmm_max_iters: usize,
    pub ibp_iterations: usize,
    pub ibp_step: f64,
    pub n_train_samples: usize,
    pub projection_fit_cap: usize,
    pub seed: u64,
}

impl SRConfig {
    pub fn defaults(scale: u32) -> Self {
        SRConfig {
            scale,
            patch_size: 6,
            train_stride: 3,
            infer_stride: 1,
            use_magnitudes: true,
            projection_kind: ProjectionKind::Pca,
            projection_dim: 30,
            leaf_features: LeafFeatures::Original,
            coarse: CoarseEstimator::Bicubic,
            degradation: DegradationKind::Bicubic,
            n_trees: 10,
            max_depth: 15,
            min_leaf: 64,
            n_threshold_candidates: 16,
            n_feature_candidates: 0,
            bag_fraction: 0.8,
            bag_with_replacement: true,
            lambda_base: 0.01,
            gmm_k: 3,
            gwrr_cap: 10.0,
            gwrr_epsilon: 1e-6,
            gmm_max_iters: 50,
            ibp_iterations: 20,
            ibp_step: 1.0,
            n_train_samples: 500_000,
            projection_fit_cap: 100_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(FarfError::InvalidParam(format!(
                "scale must be one of {{2,3,4}}, got {}",
                self.scale
            )));
        }
        if self.patch_size < 2 {
            return Err(FarfError::InvalidParam("patch_size must be >= 2".into()));
        }
        for (name, stride) in [("train_stride", self.train_stride), ("infer_stride", self.infer_stride)] {
            if stride == 0 || stride > self.patch_size {
                return Err(FarfError::InvalidParam(format!(
                    "{name} must be in 1..=patch_size, got {stride}"
                )));
            }
        }
        if self.projection_dim == 0 {
            return Err(FarfError::InvalidParam("projection_dim must be >= 1".into()));
        }
        if self.n_train_samples == 0 || self.projection_fit_cap == 0 {
            return Err(FarfError::InvalidParam(
                "sample caps must be >= 1".into(),
            ));
        }
        if let DegradationKind::Gaussian { sigma } = self.degradation {
            if !(sigma > 0.0) {
                return Err(FarfError::InvalidParam(format!(
                    "gaussian degradation sigma must be > 0, got {sigma}"
                )));
            }
        }
        self.forest_params().validate()?;
        self.ibp_params().validate()
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            patch_size: self.patch_size,
            use_magnitudes: self.use_magnitudes,
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            n_threshold_candidates: self.n_threshold_candidates,
            n_feature_candidates: self.n_feature_candidates,
            bag_fraction: self.bag_fraction,
            bag_with_replacement: self.bag_with_replacement,
            leaf_features: self.leaf_features,
            leaf_fit: LeafFitParams {
                lambda_base: self.lambda_base,
                gmm_k: self.gmm_k,
                gwrr_cap: self.gwrr_cap,
                gwrr_epsilon: self.gwrr_epsilon,
                gmm_max_iters: self.gmm_max_iters,
            },
            seed: self.seed,
        }
    }

    pub fn degrade_spec(&self) -> Result<DegradeSpec> {
        match self.degradation {
            DegradationKind::Bicubic => DegradeSpec::bicubic(self.scale),
            DegradationKind::Gaussian { sigma } => DegradeSpec::gaussian(self.scale, sigma),
        }
    }

    pub fn ibp_params(&self) -> IbpParams {
        IbpParams {
            iterations: self.ibp_iterations,
            ..IbpParams::for_scale(self.scale)
        }
        .with_step(self.ibp_step)
    }

    /// Canonical key-value text; fixed key order, `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("scale", self.scale.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("train_stride", self.train_stride.to_string());
        kv("infer_stride", self.infer_stride.to_string());
        kv("use_magnitudes", self.use_magnitudes.to_string());
        kv(
            "projection_kind",
            match self.projection_kind {
                ProjectionKind::Pca => "pca".into(),
                ProjectionKind::Lsh => "lsh".into(),
            },
        );
        kv("projection_dim", self.projection_dim.to_string());
        kv(
            "leaf_features",
            match self.leaf_features {
                LeafFeatures::Original => "original".into(),
                LeafFeatures::Compressed => "compressed".into(),
            },
        );
        kv(
            "coarse_estimator",
            match self.coarse {
                CoarseEstimator::Bicubic => "bicubic".into(),
                CoarseEstimator::Ibp => "ibp".into(),
            },
        );
        let (deg, sigma) = match self.degradation {
            DegradationKind::Bicubic => ("bicubic".to_string(), 0.0),
            DegradationKind::Gaussian { sigma } => ("gaussian".to_string(), sigma),
        };
        kv("degradation", deg);
        kv("degradation_sigma", format_f64(sigma));
        kv("n_trees", self.n_trees.to_string());
        kv("max_depth", self.max_depth.to_string());
        kv("min_leaf", self.min_leaf.to_string());
        kv("n_threshold_candidates", self.n_threshold_candidates.to_string());
        kv("n_feature_candidates", self.n_feature_candidates.to_string());
        kv("bag_fraction", format_f64(self.bag_fraction));
        kv("bag_with_replacement", self.bag_with_replacement.to_string());
        kv("lambda_base", format_f64(self.lambda_base));
        kv("gmm_k", self.gmm_k.to_string());
        kv("gwrr_cap", format_f64(self.gwrr_cap));
        kv("gwrr_epsilon", format_f64(self.gwrr_epsilon));
        kv("gmm_max_iters", self.gmm_max_iters.to_string());
        kv("ibp_iterations", self.ibp_iterations.to_string());
        kv("ibp_step", format_f64(self.ibp_step));
        kv("n_train_samples", self.n_train_samples.to_string());
        kv("projection_fit_cap", self.projection_fit_cap.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    /// Parses the canonical text form. Unknown keys are rejected; every
    /// key must appear at most once; missing keys keep the defaults for
    /// the given scale, so partial config files can override selectively.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut probe = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some((k, v)) = line.split_once('=') {
                probe.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let scale: u32 = match probe.get("scale") {
            Some(v) => v.parse().map_err(|_| {
                FarfError::InvalidParam(format!("config key scale: bad value {v}"))
            })?,
            None => 3,
        };
        let mut cfg = SRConfig::defaults(scale);
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Applies key-value overrides on top of the current configuration.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        let mut map = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                FarfError::InvalidParam(format!("config line {}: missing '='", lineno + 1))
            })?;
            let k = k.trim().to_string();
            let v = v.trim().to_string();
            if map.insert(k.clone(), v).is_some() {
                return Err(FarfError::InvalidParam(format!(
                    "config line {}: duplicate key {k}",
                    lineno + 1
                )));
            }
        }

        let cfg = self;
        macro_rules! set {
            ($field:ident, $key:literal) => {
                if let Some(v) = take_parse(&mut map, $key)? {
                    cfg.$field = v;
                }
            };
        }
        set!(scale, "scale");
        set!(patch_size, "patch_size");
        set!(train_stride, "train_stride");
        set!(infer_stride, "infer_stride");
        set!(use_magnitudes, "use_magnitudes");
        if let Some(v) = take(&mut map, "projection_kind") {
            cfg.projection_kind = match v.as_str() {
                "pca" => ProjectionKind::Pca,
                "lsh" => ProjectionKind::Lsh,
                other => {
                    return Err(FarfError::InvalidParam(format!(
                        "projection_kind must be pca|lsh, got {other}"
                    )))
                }
            };
        }
        set!(projection_dim, "projection_dim");
        if let Some(v) = take(&mut map, "leaf_features") {
            cfg.leaf_features = match v.as_str() {
                "original" => LeafFeatures::Original,
                "compressed" => LeafFeatures::Compressed,
                other => {
                    return Err(FarfError::InvalidParam(format!(
                        "leaf_features must be original|compressed, got {other}"
                    )))
                }
            };
        }
        if let Some(v) = take(&mut map, "coarse_estimator") {
            cfg.coarse = match v.as_str() {
                "bicubic" => CoarseEstimator::Bicubic,
                "ibp" => CoarseEstimator::Ibp,
                other => {
                    return Err(FarfError::InvalidParam(format!(
                        "coarse_estimator must be bicubic|ibp, got {other}"
                    )))
                }
            };
        }
        let degradation = take(&mut map, "degradation");
        let sigma: f64 = take_parse(&mut map, "degradation_sigma")?.unwrap_or(0.0);
        if let Some(v) = degradation {
            cfg.degradation = match v.as_str() {
                "bicubic" => DegradationKind::Bicubic,
                "gaussian" => DegradationKind::Gaussian { sigma },
                other => {
                    return Err(FarfError::InvalidParam(format!(
                        "degradation must be bicubic|gaussian, got {other}"
                    )))
                }
            };
        }
        set!(n_trees, "n_trees");
        set!(max_depth, "max_depth");
        set!(min_leaf, "min_leaf");
        set!(n_threshold_candidates, "n_threshold_candidates");
        set!(n_feature_candidates, "n_feature_candidates");
        set!(bag_fraction, "bag_fraction");
        set!(bag_with_replacement, "bag_with_replacement");
        set!(lambda_base, "lambda_base");
        set!(gmm_k, "gmm_k");
        set!(gwrr_cap, "gwrr_cap");
        set!(gwrr_epsilon, "gwrr_epsilon");
        set!(gmm_max_iters, "gmm_max_iters");
        set!(ibp_iterations, "ibp_iterations");
        set!(ibp_step, "ibp_step");
        set!(n_train_samples, "n_train_samples");
        set!(projection_fit_cap, "projection_fit_cap");
        set!(seed, "seed");

        if let Some(k) = map.keys().next() {
            return Err(FarfError::InvalidParam(format!("unknown config key {k}")));
        }
        cfg.validate()?;
        Ok(())
    }
}

impl IbpParams {
    fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

/// Shortest round-trip decimal form.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn take(map: &mut std::collections::BTreeMap<String, String>, key: &str) -> Option<String> {
    map.remove(key)
}

fn take_parse<T: std::str::FromStr>(
    map: &mut std::collections::BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| FarfError::InvalidParam(format!("config key {key}: bad value {v}"))),
    }
}

/// Named configuration presets matching the ablation vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// PCA routing, no magnitude channels, compressed-feature leaves,
    /// bicubic coarse estimate.
    Rf,
    /// RF plus the two gradient-magnitude channels.
    RfPlus,
    /// RF with original-feature leaves.
    RfSharp,
    /// Magnitude channels and original-feature leaves.
    Farf,
    /// FARF fine-tuned: random-hyperplane projection, back-projection
    /// initialization, 45 trees.
    FarfStar,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Rf,
        Preset::RfPlus,
        Preset::RfSharp,
        Preset::Farf,
        Preset::FarfStar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Rf => "RF",
            Preset::RfPlus => "RF+",
            Preset::RfSharp => "RF#",
            Preset::Farf => "FARF",
            Preset::FarfStar => "FARF*",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Applies the preset on top of the defaults for a scale.
    pub fn config(&self, scale: u32) -> SRConfig {
        let mut cfg = SRConfig::defaults(scale);
        match self {
            Preset::Rf => {
                cfg.use_magnitudes = false;
                cfg.leaf_features = LeafFeatures::Compressed;
            }
            Preset::RfPlus => {
                cfg.use_magnitudes = true;
                cfg.leaf_features = LeafFeatures::Compressed;
            }
            Preset::RfSharp => {
                cfg.use_magnitudes = false;
                cfg.leaf_features = LeafFeatures::Original;
            }
            Preset::Farf => {
                cfg.use_magnitudes = true;
                cfg.leaf_features = LeafFeatures::Original;
            }
            Preset::FarfStar => {
                cfg.use_magnitudes = true;
                cfg.leaf_features = LeafFeatures::Original;
                cfg.projection_kind = ProjectionKind::Lsh;
                cfg.coarse = CoarseEstimator::Ibp;
                cfg.n_trees = 45;
            }
        }
        cfg
    }
}
