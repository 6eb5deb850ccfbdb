//! Orthogonalization index and PCA equalization.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::{welch_t_test, TTest};
use crate::decode::{DecoderSet, SolverParams};
use crate::error::{domain_err, Result};
use crate::linalg::{column_mean, psd_eigen};

/// `1 − |cos|` of every pair `i < j` of rows.
fn pair_terms(normals: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let n = normals.nrows();
    if n < 2 {
        return domain_err!("orthogonalization index needs at least two normals, got {n}");
    }
    let norms: Vec<f64> = normals.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(k) = norms.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return domain_err!("normal {k} has zero or non-finite norm");
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let c = normals.row(i).dot(&normals.row(j)) / (norms[i] * norms[j]);
            out.push(1.0 - c.abs().min(1.0));
        }
    }
    Ok(out)
}

/// Mean over the upper triangle of `1 − |cos(w_i, w_j)|`.
pub fn ortho_value(normals: ArrayView2<'_, f64>) -> Result<f64> {
    let t = pair_terms(normals)?;
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoIndex {
    pub value: f64,
    pub samples: Vec<f64>,
    pub space: String,
}

/// Index of raw normals; the bootstrap resamples pairs.
pub fn ortho_index<R: Rng + ?Sized>(normals: ArrayView2<'_, f64>, bootstrap_n: usize, rng: &mut R, space: &str) -> Result<OrthoIndex> {
    let terms = pair_terms(normals)?;
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    let samples = (0..bootstrap_n)
        .map(|_| (0..terms.len()).map(|_| terms[rng.random_range(0..terms.len())]).sum::<f64>() / terms.len() as f64)
        .collect();
    Ok(OrthoIndex { value, samples, space: space.to_string() })
}

/// Index of a fitted decoder family; each bootstrap sample refits the
/// family (at its chosen C values) on rows drawn with replacement.
pub fn ortho_index_refit<R: Rng + ?Sized>(
    set: &DecoderSet<f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    bootstrap_n: usize,
    solver: &SolverParams,
    rng: &mut R,
    space: &str,
) -> Result<OrthoIndex> {
    let value = ortho_value(set.normals().view())?;
    let n = labels.len();
    let mut samples = Vec::with_capacity(bootstrap_n);
    for _ in 0..bootstrap_n {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let xb = x.select(Axis(0), &rows);
        let yb: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        let refit = set.refit(xb.view(), &yb, solver)?;
        samples.push(ortho_value(refit.normals().view())?);
    }
    Ok(OrthoIndex { value, samples, space: space.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoComparison {
    pub test: TTest,
    pub mean_perceptual: f64,
    pub mean_encoding: f64,
    /// Sign of `mean(encoding) − mean(perceptual)`.
    pub direction: f64,
}

/// Welch t-test between perceptual and encoding bootstrap samples.
pub fn compare_ortho(perceptual: &[f64], encoding: &[f64]) -> Result<OrthoComparison> {
    if perceptual.len() < 5 || encoding.len() < 5 {
        return domain_err!("comparison needs at least 5 samples per space");
    }
    let test = welch_t_test(perceptual, encoding)?;
    let mp = perceptual.iter().sum::<f64>() / perceptual.len() as f64;
    let me = encoding.iter().sum::<f64>() / encoding.len() as f64;
    let d = me - mp;
    Ok(OrthoComparison {
        test,
        mean_perceptual: mp,
        mean_encoding: me,
        direction: if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        },
    })
}

/// Principal axes (columns, descending variance) and variances of `x`.
pub fn principal_axes(x: ArrayView2<'_, f64>) -> (ndarray::Array1<f64>, Array2<f64>) {
    let mean = column_mean(x);
    let c = &x - &mean.view().insert_axis(Axis(0));
    let cov = c.t().dot(&c) / (x.nrows().max(2) - 1) as f64;
    psd_eigen(cov.view())
}

fn project(x: ArrayView2<'_, f64>, dim: usize) -> Result<Array2<f64>> {
    let (vals, vecs) = principal_axes(x);
    if dim == 0 || dim > vals.len() {
        return domain_err!("PCA dimension {dim} outside 1..={}", vals.len());
    }
    let tol = vals[0].max(f64::MIN_POSITIVE) * 1e-10;
    let rank = vals.iter().filter(|&&v| v > tol).count();
    if dim > rank {
        return domain_err!("PCA dimension {dim} exceeds data rank {rank}");
    }
    let mean = column_mean(x);
    let c = &x - &mean.view().insert_axis(Axis(0));
    Ok(c.dot(&vecs.slice(s![.., ..dim])))
}

/// Center each space and project onto its own top `dim` principal axes.
pub fn pca_equalize(xa: ArrayView2<'_, f64>, xb: ArrayView2<'_, f64>, dim: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok((project(xa, dim)?, project(xb, dim)?))
}
