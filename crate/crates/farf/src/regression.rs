//! Closed-form ridge regression and its mixture-weighted generalization
//! (GWRR) for the per-leaf projection matrices.
//!
//! `fit_ridge` solves P = D_h^T D_l (D_l^T D_l + lambda I)^-1 so that a
//! prediction is P * feature. GWRR assigns each sample its own ridge
//! weight derived from a Gaussian mixture fitted over the leaf samples:
//! samples with high cluster affinity are penalized less. The weighted
//! solve is realized in the primal as per-sample scaling of the normal
//! equations, which is algebraically identical to placing the weights on
//! the diagonal of the dual Gram system.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FarfError, Result};

/// Variance floor for GMM covariances.
const COV_FLOOR: f64 = 1e-8;
/// EM stops when the total log-likelihood gain drops below this.
const EM_TOL: f64 = 1e-6;

/// A fitted per-leaf linear regressor; prediction is `p * feature`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRegressor {
    /// d_out x d_in projection matrix.
    pub p: DMatrix<f64>,
    pub n_samples: usize,
    pub lambda_used: f64,
    pub weighted: bool,
}

impl LeafRegressor {
    pub fn d_in(&self) -> usize {
        self.p.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.p.nrows()
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    /// Mixing weights, sum 1.
    pub weights: Vec<f64>,
    /// K mean vectors.
    pub means: Vec<Vec<f64>>,
    /// K per-dimension variances, floored at 1e-8.
    pub covariances: Vec<Vec<f64>>,
    /// Total log-likelihood after each accepted EM iteration.
    pub ll_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Per-sample ridge weights (the diagonal of the weighted penalty).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(FarfError::InvalidParam(
                "ridge weights must be positive and finite".into(),
            ));
        }
        Ok(WeightVector(w))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FarfError::NonFinite(context.into()));
    }
    Ok(())
}

fn check_pair(d_l: &DMatrix<f64>, d_h: &DMatrix<f64>) -> Result<()> {
    if d_l.nrows() == 0 || d_l.nrows() != d_h.nrows() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("matching sample counts >= 1 (features {})", d_l.nrows()),
            got: format!("targets {}", d_h.nrows()),
        });
    }
    check_finite(d_l, "ridge features")?;
    check_finite(d_h, "ridge targets")
}

/// Closed-form ridge: P = D_h^T D_l (D_l^T D_l + lambda I)^-1, solved with
/// a Cholesky factorization of the normal matrix.
pub fn fit_ridge(d_l: &DMatrix<f64>, d_h: &DMatrix<f64>, lambda: f64) -> Result<LeafRegressor> {
    check_pair(d_l, d_h)?;
    if !(lambda >= 0.0) {
        return Err(FarfError::InvalidParam(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    let p = solve_scaled_normal_equations(d_l, d_h, None, lambda)?;
    Ok(LeafRegressor {
        p,
        n_samples: d_l.nrows(),
        lambda_used: lambda,
        weighted: false,
    })
}

/// Weighted ridge with explicit per-sample ridge weights `w` anchored at
/// `lambda_base`. Equals the dual form
/// P = D_h^T (D_l D_l^T + diag(w))^-1 D_l, realized in the primal by
/// scaling sample i with lambda_base / w_i. Uniform weights reproduce
/// `fit_ridge` exactly.
pub fn fit_weighted_ridge(
    d_l: &DMatrix<f64>,
    d_h: &DMatrix<f64>,
    weights: &WeightVector,
    lambda_base: f64,
) -> Result<LeafRegressor> {
    check_pair(d_l, d_h)?;
    if weights.len() != d_l.nrows() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("{} weights", d_l.nrows()),
            got: format!("{}", weights.len()),
        });
    }
    if !(lambda_base > 0.0) {
        return Err(FarfError::InvalidParam(format!(
            "weighted ridge needs lambda_base > 0, got {lambda_base}"
        )));
    }
    let scale: Vec<f64> = weights.values().iter().map(|&w| lambda_base / w).collect();
    let p = solve_scaled_normal_equations(d_l, d_h, Some(&scale), lambda_base)?;
    Ok(LeafRegressor {
        p,
        n_samples: d_l.nrows(),
        lambda_used: lambda_base,
        weighted: true,
    })
}

/// Builds A = D_l^T V D_l + lambda I and B = D_h^T V D_l with optional
/// per-sample scaling V, then solves P A = B.
fn solve_scaled_normal_equations(
    d_l: &DMatrix<f64>,
    d_h: &DMatrix<f64>,
    scale: Option<&[f64]>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let m = d_l.nrows();
    let d = d_l.ncols();
    if lambda == 0.0 && m < d {
        return Err(FarfError::SingularSystem {
            context: format!("underdetermined ridge ({m} samples, {d} dims)"),
            lambda,
        });
    }
    let scaled;
    let lhs = match scale {
        Some(v) => {
            let mut s = d_l.clone();
            for (i, &vi) in v.iter().enumerate() {
                if vi != 1.0 {
                    for c in 0..d {
                        s[(i, c)] *= vi;
                    }
                }
            }
            scaled = s;
            &scaled
        }
        None => d_l,
    };
    let mut a = DMatrix::<f64>::zeros(d, d);
    a.gemm_tr(1.0, d_l, lhs, 0.0);
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let mut b_t = DMatrix::<f64>::zeros(d, d_h.ncols());
    b_t.gemm_tr(1.0, lhs, d_h, 0.0);

    let chol = a.cholesky().ok_or(FarfError::SingularSystem {
        context: format!("normal matrix not positive definite ({m} samples, {d} dims)"),
        lambda,
    })?;
    let p_t = chol.solve(&b_t);
    Ok(p_t.transpose())
}

/// Log-density of x under a diagonal Gaussian, up to full constants.
fn log_gauss_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LOG_2PI: f64 = 1.8378770664093453;
    let mut acc = 0.0;
    for ((&xv, &mv), &vv) in x.iter().zip(mean).zip(var) {
        let d = xv - mv;
        acc += LOG_2PI + vv.ln() + d * d / vv;
    }
    -0.5 * acc
}

/// Posterior responsibilities and the total log-likelihood of `samples`
/// under the mixture. Each responsibility row sums to 1.
pub fn responsibilities(gmm: &GmmModel, samples: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let m = samples.nrows();
    let k = gmm.k();
    let mut resp = DMatrix::<f64>::zeros(m, k);
    let mut total_ll = 0.0;
    let mut x = vec![0.0f64; gmm.dim()];
    let mut logs = vec![0.0f64; k];
    for i in 0..m {
        for (c, xv) in x.iter_mut().enumerate() {
            *xv = samples[(i, c)];
        }
        for j in 0..k {
            logs[j] = gmm.weights[j].ln() + log_gauss_diag(&x, &gmm.means[j], &gmm.covariances[j]);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total_ll += lse;
        for j in 0..k {
            resp[(i, j)] = (logs[j] - lse).exp();
        }
    }
    (resp, total_ll)
}

/// Seeded k-means++ style selection of K initial means.
fn kmeans_pp_init(samples: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = samples.nrows();
    let d = samples.ncols();
    let row = |i: usize| -> Vec<f64> { (0..d).map(|c| samples[(i, c)]).collect() };
    let mut centers = vec![row(rng.gen_range(0..m))];
    let mut dist2 = vec![0.0f64; m];
    while centers.len() < k {
        let last = centers.last().unwrap();
        let mut total = 0.0;
        for i in 0..m {
            let mut d2 = 0.0;
            for c in 0..d {
                let diff = samples[(i, c)] - last[c];
                d2 += diff * diff;
            }
            if centers.len() == 1 || d2 < dist2[i] {
                dist2[i] = d2;
            }
            total += dist2[i];
        }
        let idx = if total > 0.0 {
            let draw: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                acc += d2;
                if draw < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        centers.push(row(idx));
    }
    centers
}

/// Fits a diagonal-covariance Gaussian mixture by EM with seeded
/// k-means++ initialization. The log-likelihood is non-decreasing across
/// accepted iterations; EM stops at `max_iters` or when the gain falls
/// below 1e-6. A component that loses all its mass is re-seeded from the
/// sample farthest from its nearest mean.
pub fn fit_gmm(samples: &DMatrix<f64>, k: usize, seed: u64, max_iters: usize) -> Result<GmmModel> {
    let m = samples.nrows();
    let d = samples.ncols();
    if k == 0 || m < k {
        return Err(FarfError::InvalidParam(format!(
            "gmm needs m >= k >= 1, got m={m}, k={k}"
        )));
    }
    check_finite(samples, "gmm samples")?;

    // Global per-dimension population variance, used for initialization and
    // component re-seeding.
    let mut global_mean = vec![0.0f64; d];
    for i in 0..m {
        for (c, g) in global_mean.iter_mut().enumerate() {
            *g += samples[(i, c)];
        }
    }
    for g in &mut global_mean {
        *g /= m as f64;
    }
    let mut global_var = vec![0.0f64; d];
    for i in 0..m {
        for (c, g) in global_var.iter_mut().enumerate() {
            let diff = samples[(i, c)] - global_mean[c];
            *g += diff * diff;
        }
    }
    for g in &mut global_var {
        *g = (*g / m as f64).max(COV_FLOOR);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gmm = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp_init(samples, k, &mut rng),
        covariances: vec![global_var.clone(); k],
        ll_trace: Vec::new(),
    };

    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..max_iters {
        let (resp, ll) = responsibilities(&gmm, samples);
        if iter > 0 && ll - prev_ll < EM_TOL {
            break;
        }
        gmm.ll_trace.push(ll);
        prev_ll = ll;

        // M-step.
        let mut empty = Vec::new();
        for j in 0..k {
            let nk: f64 = (0..m).map(|i| resp[(i, j)]).sum();
            if nk < 1e-9 {
                empty.push(j);
                continue;
            }
            let mut mean = vec![0.0f64; d];
            for i in 0..m {
                let r = resp[(i, j)];
                if r != 0.0 {
                    for (c, mv) in mean.iter_mut().enumerate() {
                        *mv += r * samples[(i, c)];
                    }
                }
            }
            for mv in &mut mean {
                *mv /= nk;
            }
            let mut var = vec![0.0f64; d];
            for i in 0..m {
                let r = resp[(i, j)];
                if r != 0.0 {
                    for (c, vv) in var.iter_mut().enumerate() {
                        let diff = samples[(i, c)] - mean[c];
                        *vv += r * diff * diff;
                    }
                }
            }
            for vv in &mut var {
                *vv = (*vv / nk).max(COV_FLOOR);
            }
            gmm.weights[j] = nk / m as f64;
            gmm.means[j] = mean;
            gmm.covariances[j] = var;
        }
        if !empty.is_empty() {
            // Re-seed each dead component from the sample farthest from its
            // nearest surviving mean.
            for &j in &empty {
                let mut far_i = 0;
                let mut far_d = -1.0;
                for i in 0..m {
                    let mut best = f64::INFINITY;
                    for mean in &gmm.means {
                        let mut d2 = 0.0;
                        for (c, &mc) in mean.iter().enumerate() {
                            let diff = samples[(i, c)] - mc;
                            d2 += diff * diff;
                        }
                        best = best.min(d2);
                    }
                    if best > far_d {
                        far_d = best;
                        far_i = i;
                    }
                }
                gmm.means[j] = (0..d).map(|c| samples[(far_i, c)]).collect();
                gmm.covariances[j] = global_var.clone();
                gmm.weights[j] = 1.0 / m as f64;
            }
            let total: f64 = gmm.weights.iter().sum();
            for w in &mut gmm.weights {
                *w /= total;
            }
        }
    }
    Ok(gmm)
}

/// Per-sample ridge weights from a fitted mixture: each sample's raw
/// affinity is (weight of its dominant component) / (epsilon + distance to
/// that component's mean); the ridge weight is lambda_base scaled by the
/// mean-affinity ratio, clamped to [1/cap, cap] so high-affinity samples
/// are penalized less and the weights stay anchored at lambda_base.
pub fn gwrr_weights(
    gmm: &GmmModel,
    samples: &DMatrix<f64>,
    lambda_base: f64,
    cap: f64,
    epsilon: f64,
) -> Result<WeightVector> {
    if samples.ncols() != gmm.dim() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("samples of dim {}", gmm.dim()),
            got: format!("dim {}", samples.ncols()),
        });
    }
    if !(cap >= 1.0) || !(lambda_base > 0.0) || !(epsilon > 0.0) {
        return Err(FarfError::InvalidParam(format!(
            "gwrr needs cap >= 1, lambda_base > 0, epsilon > 0; got {cap}, {lambda_base}, {epsilon}"
        )));
    }
    let m = samples.nrows();
    let (resp, _) = responsibilities(gmm, samples);
    let mut raw = Vec::with_capacity(m);
    for i in 0..m {
        let mut k_star = 0;
        for j in 1..gmm.k() {
            if resp[(i, j)] > resp[(i, k_star)] {
                k_star = j;
            }
        }
        let mut dist2 = 0.0;
        for (c, &mc) in gmm.means[k_star].iter().enumerate() {
            let diff = samples[(i, c)] - mc;
            dist2 += diff * diff;
        }
        raw.push(gmm.weights[k_star] / (epsilon + dist2.sqrt()));
    }
    let mean_raw = raw.iter().sum::<f64>() / m as f64;
    let w = raw
        .iter()
        .map(|&r| lambda_base * (mean_raw / r).clamp(1.0 / cap, cap))
        .collect();
    WeightVector::new(w)
}

/// GWRR: fits a mixture over the leaf samples, derives per-sample weights,
/// and solves the weighted ridge. With cap = 1 this degenerates to the
/// unweighted `fit_ridge` path bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn fit_gwrr(
    d_l: &DMatrix<f64>,
    d_h: &DMatrix<f64>,
    gmm_k: usize,
    lambda_base: f64,
    cap: f64,
    epsilon: f64,
    seed: u64,
    gmm_max_iters: usize,
) -> Result<LeafRegressor> {
    let gmm = fit_gmm(d_l, gmm_k, seed, gmm_max_iters)?;
    let weights = gwrr_weights(&gmm, d_l, lambda_base, cap, epsilon)?;
    fit_weighted_ridge(d_l, d_h, &weights, lambda_base)
}

/// Applies a leaf regressor: p * feature.
pub fn predict(reg: &LeafRegressor, feature: &[f64]) -> Result<Vec<f64>> {
    if feature.len() != reg.d_in() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("feature of dim {}", reg.d_in()),
            got: format!("dim {}", feature.len()),
        });
    }
    let mut out = vec![0.0f64; reg.d_out()];
    predict_into(reg, feature, &mut out);
    Ok(out)
}

/// Accumulating form used by forest inference: out += p * feature.
#[inline]
pub(crate) fn predict_add(reg: &LeafRegressor, feature: &[f64], out: &mut [f64]) {
    let d_out = reg.d_out();
    let m = reg.p.as_slice();
    for (c, &x) in feature.iter().enumerate() {
        if x != 0.0 {
            let col = &m[c * d_out..(c + 1) * d_out];
            for (o, &w) in out.iter_mut().zip(col) {
                *o += w * x;
            }
        }
    }
}

#[inline]
fn predict_into(reg: &LeafRegressor, feature: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    predict_add(reg, feature, out);
}
