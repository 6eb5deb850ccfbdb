//! L2-regularized hinge-loss linear classifier solved by dual coordinate
//! descent. The bias is learned through an augmented constant feature.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Value of the augmented bias feature.
    pub bias_scale: f64,
    /// Stop when the projected-gradient spread falls below this.
    pub tol: f64,
    pub max_epochs: usize,
    /// Seed of the coordinate visiting order.
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            bias_scale: 5.0,
            tol: 1e-2,
            max_epochs: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HingeFit<T> {
    pub w: Array1<T>,
    pub b: T,
    /// Dual variables, indexed like `rows`.
    pub alpha: Vec<T>,
}

/// Solve `min ½(‖w‖² + wb²) + Σ U_i max(0, 1 − y_i(w·x_i + wb·B))` over the
/// given `rows` of `x`. `upper[k]` is the box bound of `rows[k]`.
pub(crate) fn solve<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[i8],
    rows: &[usize],
    upper: &[T],
    params: &SolverParams,
    warm: Option<&[T]>,
) -> HingeFit<T> {
    let d = x.ncols();
    let bscale = T::from_f64c(params.bias_scale);
    let tol = T::from_f64c(params.tol);
    let mut w = Array1::<T>::zeros(d);
    let mut wb = T::zero();
    let mut alpha: Vec<T> = match warm {
        Some(a) => a.iter().zip(upper).map(|(&a, &u)| a.min(u)).collect(),
        None => vec![T::zero(); rows.len()],
    };
    let qdiag: Vec<T> = rows
        .iter()
        .map(|&r| {
            let xi = x.row(r);
            xi.dot(&xi) + bscale * bscale
        })
        .collect();
    for (k, &r) in rows.iter().enumerate() {
        if alpha[k] != T::zero() {
            let coef = alpha[k] * sign::<T>(y[r]);
            w.scaled_add(coef, &x.row(r));
            wb += coef * bscale;
        }
    }

    // Dual coordinate descent with shrinking: variables stuck at a bound
    // are dropped from the sweep and revisited once the rest converge.
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut active = n;
    let inf = T::infinity();
    let (mut pg_max_old, mut pg_min_old) = (inf, -inf);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.max_epochs {
        order[..active].shuffle(&mut rng);
        let mut pg_max = -inf;
        let mut pg_min = inf;
        let mut s = 0;
        while s < active {
            let k = order[s];
            let r = rows[k];
            let yi = sign::<T>(y[r]);
            let xi = x.row(r);
            let g = yi * (w.dot(&xi) + wb * bscale) - T::one();
            let u = upper[k];
            let pg = if alpha[k] == T::zero() {
                if g > pg_max_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.min(T::zero())
            } else if alpha[k] == u {
                if g < pg_min_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.max(T::zero())
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != T::zero() && qdiag[k] > T::zero() {
                let old = alpha[k];
                let new = (old - g / qdiag[k]).max(T::zero()).min(u);
                if new != old {
                    alpha[k] = new;
                    let delta = (new - old) * yi;
                    w.scaled_add(delta, &xi);
                    wb += delta * bscale;
                }
            }
            s += 1;
        }
        if pg_max - pg_min <= tol {
            if active == n {
                break;
            }
            active = n;
            pg_max_old = inf;
            pg_min_old = -inf;
            continue;
        }
        pg_max_old = if pg_max > T::zero() { pg_max } else { inf };
        pg_min_old = if pg_min < T::zero() { pg_min } else { -inf };
    }
    HingeFit {
        w,
        b: wb * bscale,
        alpha,
    }
}

#[inline]
fn sign<T: Scalar>(y: i8) -> T {
    if y > 0 {
        T::one()
    } else {
        -T::one()
    }
}

#[inline]
pub(crate) fn margin<T: Scalar>(w: &Array1<T>, b: T, x: ArrayView1<'_, T>) -> T {
    w.dot(&x) + b
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_points() {
        let x = array![[1.0f64, 0.0], [-1.0, 0.0]];
        let y = [1i8, -1];
        let fit = solve(x.view(), &y, &[0, 1], &[100.0, 100.0], &SolverParams { tol: 1e-8, ..Default::default() }, None);
        // Hard margin: w = (1, 0) up to bias regularization, which is zero here by symmetry.
        assert!((fit.w[0] - 1.0).abs() < 1e-6, "{:?}", fit.w);
        assert!(fit.b.abs() < 1e-6);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let x = array![[2.0, 1.0], [1.0, -1.0], [-1.0, 0.5], [-2.0, -1.0], [0.2, 0.1]];
        let y = [1i8, 1, -1, -1, -1];
        let rows = [0, 1, 2, 3, 4];
        let p = SolverParams { tol: 1e-10, max_epochs: 10_000, ..Default::default() };
        let cold = solve(x.view(), &y, &rows, &[1.0; 5], &p, None);
        let pre = solve(x.view(), &y, &rows, &[0.1; 5], &p, None);
        let warm = solve(x.view(), &y, &rows, &[1.0; 5], &p, Some(&pre.alpha));
        assert!((&cold.w - &warm.w).mapv(f64::abs).sum() < 1e-6);
    }
}
