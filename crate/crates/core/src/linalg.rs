//! Small dense linear algebra: one-sided Jacobi SVD and helpers.
//!
//! Matrices here are at most a few hundred on a side, so a plain Jacobi
//! sweep is accurate and fast enough.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Scalar;

/// Thin singular value decomposition `a = u · diag(s) · vᵀ`.
///
/// For an `m × n` input with `m ≥ n`, `u` is `m × n` with orthonormal columns
/// (columns for zero singular values are completed to an orthonormal set),
/// `s` has length `n` sorted in descending order, `v` is `n × n` orthogonal.
/// Wide inputs are handled through the transpose, giving `u: m × m`,
/// `s: m`, `v: n × m`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Array2<T>,
    pub s: Array1<T>,
    pub v: Array2<T>,
}

/// Relative off-diagonal tolerance of the Jacobi sweeps.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 80;

pub fn svd<T: Scalar>(a: ArrayView2<'_, T>) -> Svd<T> {
    let (m, n) = a.dim();
    if m < n {
        let t = svd(a.t());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    // Rows of `wt` (columns of `a`) converge to u_j * s_j; rows of `vt` are
    // the right singular vectors.
    let mut wt = a.t().as_standard_layout().into_owned();
    let mut vt = Array2::<T>::eye(n);
    let tol = T::from_f64c(JACOBI_TOL).max(T::epsilon());

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = wt.row(p);
                    let cq = wt.row(q);
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::from_f64c(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let sn = c * t;
                rotate_rows(&mut wt, p, q, c, sn);
                rotate_rows(&mut vt, p, q, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = (0..n).map(|j| wt.row(j).dot(&wt.row(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let scale = norms.iter().fold(T::zero(), |acc, &x| acc.max(x));
    let cutoff = scale * T::epsilon() * T::from_usize_c(m.max(n)) * T::from_f64c(4.0);
    let mut u = Array2::<T>::zeros((m, n));
    let mut s_out = Array1::<T>::zeros(n);
    let mut v_out = Array2::<T>::zeros((n, n));
    let mut rank = 0;
    for (k, &j) in order.iter().enumerate() {
        v_out.column_mut(k).assign(&vt.row(j));
        if norms[j] > cutoff && norms[j] > T::zero() {
            s_out[k] = norms[j];
            let col = wt.row(j).mapv(|x| x / norms[j]);
            u.column_mut(k).assign(&col);
            rank = k + 1;
        }
    }
    let u = complete_columns(u.slice(s![.., ..rank]).to_owned(), n);
    Svd { u, s: s_out, v: v_out }
}

fn rotate_rows<T: Scalar>(a: &mut Array2<T>, p: usize, q: usize, c: T, s: T) {
    let (mut rp, mut rq) = a.multi_slice_mut((s![p, ..], s![q, ..]));
    ndarray::Zip::from(&mut rp).and(&mut rq).for_each(|x, y| {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    });
}

/// Extend a matrix with orthonormal columns to `k` orthonormal columns by
/// Gram–Schmidt against the standard basis.
pub fn complete_columns<T: Scalar>(q: Array2<T>, k: usize) -> Array2<T> {
    let (m, have) = q.dim();
    assert!(k <= m, "cannot complete {k} columns in dimension {m}");
    if have >= k {
        return q.slice(s![.., ..k]).to_owned();
    }
    let mut out = Array2::<T>::zeros((m, k));
    out.slice_mut(s![.., ..have]).assign(&q);
    let mut filled = have;
    let mut basis = 0;
    while filled < k && basis < m {
        let mut cand = Array1::<T>::zeros(m);
        cand[basis] = T::one();
        basis += 1;
        // Two passes of modified Gram–Schmidt for stability.
        for _ in 0..2 {
            for j in 0..filled {
                let col = out.column(j);
                let proj = col.dot(&cand);
                cand.scaled_add(-proj, &col);
            }
        }
        let nrm = cand.dot(&cand).sqrt();
        if nrm > T::from_f64c(1e-6) {
            out.column_mut(filled).assign(&cand.mapv(|x| x / nrm));
            filled += 1;
        }
    }
    out
}

/// Symmetric positive semi-definite eigendecomposition via SVD.
/// Returns eigenvalues (descending) and eigenvectors as columns.
pub fn psd_eigen<T: Scalar>(a: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let d = svd(a);
    (d.s, d.v)
}

pub fn frobenius<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

/// Column means of an `n × d` matrix.
pub fn column_mean<T: Scalar>(a: ArrayView2<'_, T>) -> Array1<T> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

/// ‖aᵀa − I‖_F, used to check orthogonality.
pub fn orthogonality_defect<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    let g = a.t().dot(&a);
    let eye = Array2::<T>::eye(g.nrows());
    frobenius((&g - &eye).view())
}
