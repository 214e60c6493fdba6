//! Unsupervised linear dimensionality reduction for the compressed routing
//! features: PCA fitted on a sample of original features, or data-free
//! random-hyperplane projection. Compressed features stay real-valued
//! (pre-binarization projections) so split nodes can threshold them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{FarfError, Result};

/// Borrowed row-major matrix view over contiguous samples.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub data: &'a [f64],
    pub n: usize,
    pub d: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(FarfError::DimensionMismatch {
                expected: format!("{n} x {d} = {} values", n * d),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Rows { data, n, d })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Pca,
    Lsh,
}

/// A fitted linear dimensionality reduction operator. Compression maps a
/// feature x to matrix * (x - mean).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub kind: ProjectionKind,
    /// d_out x d_in; PCA rows are orthonormal, LSH rows are unit-norm.
    pub matrix: DMatrix<f64>,
    /// Zero vector for LSH.
    pub mean: Vec<f64>,
    /// Generator seed (LSH only; zero for PCA).
    pub seed: u64,
    /// Number of trailing rows taken from the orthogonal complement when
    /// the sample covariance had rank < d_out.
    pub padded_rows: usize,
}

impl ProjectionModel {
    pub fn d_in(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Fits PCA on row-major samples. Rows of the result are the top-d_out
/// eigenvectors of the sample covariance ordered by descending eigenvalue;
/// the largest-magnitude entry of each row is made positive.
pub fn fit_pca(samples: Rows<'_>, d_out: usize) -> Result<ProjectionModel> {
    let (n, d) = (samples.n, samples.d);
    if d_out == 0 || d_out > d {
        return Err(FarfError::InvalidParam(format!(
            "pca d_out {d_out} must be in 1..={d}"
        )));
    }
    if n <= d_out {
        return Err(FarfError::InvalidParam(format!(
            "pca needs more samples ({n}) than components ({d_out})"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Covariance accumulated per fixed-size chunk, summed in chunk order so
    // the result is independent of the thread count.
    const CHUNK: usize = 2048;
    let chunk_grams: Vec<DMatrix<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut gram = DMatrix::<f64>::zeros(d, d);
            let mut centered = vec![0.0f64; d];
            for i in lo..hi {
                for (cv, (v, m)) in centered.iter_mut().zip(samples.row(i).iter().zip(&mean)) {
                    *cv = v - m;
                }
                for a in 0..d {
                    let ca = centered[a];
                    if ca != 0.0 {
                        let row = &mut gram.as_mut_slice()[a * d..(a + 1) * d];
                        for (b, &cb) in centered.iter().enumerate().skip(a) {
                            row[b] += ca * cb;
                        }
                    }
                }
            }
            gram
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for g in chunk_grams {
        cov += g;
    }
    // Mirror the upper triangle (accumulated columns b >= a in row-major
    // order above, i.e. cov[(b, a)] in nalgebra's column-major storage).
    for a in 0..d {
        for b in a..d {
            let v = cov[(b, a)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let max_ev = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = 1e-12f64.max(max_ev * 1e-10);
    let mut matrix = DMatrix::<f64>::zeros(d_out, d);
    let mut padded_rows = 0usize;
    for (r, &col) in order.iter().take(d_out).enumerate() {
        if eig.eigenvalues[col] <= rank_tol {
            padded_rows += 1;
        }
        let v = eig.eigenvectors.column(col);
        // Sign convention: make the largest-magnitude entry positive.
        let mut arg = 0;
        for i in 1..d {
            if v[i].abs() > v[arg].abs() {
                arg = i;
            }
        }
        let sign = if v[arg] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            matrix[(r, i)] = sign * v[i];
        }
    }

    Ok(ProjectionModel {
        kind: ProjectionKind::Pca,
        matrix,
        mean,
        seed: 0,
        padded_rows,
    })
}

/// Data-free random-hyperplane projection: rows drawn i.i.d. standard
/// normal from a seeded generator, then normalized to unit length.
pub fn fit_lsh(d_in: usize, d_out: usize, seed: u64) -> Result<ProjectionModel> {
    if d_in == 0 || d_out == 0 {
        return Err(FarfError::InvalidParam(format!(
            "lsh dims must be positive, got d_in {d_in}, d_out {d_out}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = DMatrix::<f64>::zeros(d_out, d_in);
    for r in 0..d_out {
        let mut norm_sq = 0.0;
        for c in 0..d_in {
            let v: f64 = rng.sample(StandardNormal);
            matrix[(r, c)] = v;
            norm_sq += v * v;
        }
        let norm = norm_sq.sqrt();
        for c in 0..d_in {
            matrix[(r, c)] /= norm;
        }
    }
    Ok(ProjectionModel {
        kind: ProjectionKind::Lsh,
        matrix,
        mean: vec![0.0; d_in],
        seed,
        padded_rows: 0,
    })
}

/// Compresses one feature vector: matrix * (feature - mean).
pub fn project(model: &ProjectionModel, feature: &[f64]) -> Result<Vec<f64>> {
    if feature.len() != model.d_in() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("feature of dim {}", model.d_in()),
            got: format!("dim {}", feature.len()),
        });
    }
    let mut out = vec![0.0f64; model.d_out()];
    project_into(model, feature, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn project_into(model: &ProjectionModel, feature: &[f64], out: &mut [f64]) {
    let d_in = model.d_in();
    let d_out = model.d_out();
    // Column-major traversal of the matrix keeps the inner loop contiguous.
    out.fill(0.0);
    let m = model.matrix.as_slice();
    for c in 0..d_in {
        let x = feature[c] - model.mean[c];
        if x != 0.0 {
            let col = &m[c * d_out..(c + 1) * d_out];
            for (o, &w) in out.iter_mut().zip(col) {
                *o += w * x;
            }
        }
    }
}

/// Compresses every row of a row-major sample block.
pub fn project_rows(model: &ProjectionModel, samples: Rows<'_>) -> Result<Vec<f64>> {
    if samples.d != model.d_in() {
        return Err(FarfError::DimensionMismatch {
            expected: format!("samples of dim {}", model.d_in()),
            got: format!("dim {}", samples.d),
        });
    }
    let d_out = model.d_out();
    let mut out = vec![0.0f64; samples.n * d_out];
    out.par_chunks_mut(d_out)
        .enumerate()
        .for_each(|(i, chunk)| project_into(model, samples.row(i), chunk));
    Ok(out)
}
