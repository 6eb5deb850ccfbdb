use ndarray::{Array2, ArrayView2};

use crate::scalar::Scalar;
use crate::task::Response;

/// Mean negative log-softmax probability of the true class over all rows.
///
/// Returns the loss and its gradient with respect to the logits. Every step,
/// `NoAction` included, contributes.
pub fn cross_entropy<T: Scalar>(logits: ArrayView2<'_, T>, responses: &[Response]) -> (T, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(n, responses.len(), "one response per logit row");
    let inv_n = T::one() / T::from_usize_c(n.max(1));
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for (i, (row, resp)) in logits.rows().into_iter().zip(responses).enumerate() {
        let mx = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum: T = row.iter().map(|&z| (z - mx).exp()).sum();
        let lse = mx + sum.ln();
        let y = resp.class();
        total += lse - row[y];
        for (k, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let target = if k == y { T::one() } else { T::zero() };
            grad[[i, k]] = (p - target) * inv_n;
        }
    }
    (total * inv_n, grad)
}

pub fn softmax_row<T: Scalar>(z: &[T]) -> Vec<T> {
    let mx = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = z.iter().map(|&v| (v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln3() {
        let z = Array2::<f64>::zeros((6, 3));
        let (l, _) = cross_entropy(z.view(), &[Response::Match; 6]);
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_class() {
        let z = array![[1000.0f64, 0.0, 0.0], [0.0, 0.0, 1000.0]];
        let (l, _) = cross_entropy(z.view(), &[Response::Match, Response::NoAction]);
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn matches_direct_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Array2::from_shape_fn((12, 3), |_| rng.random_range(-5.0..5.0f64));
        let r: Vec<Response> = (0..12).map(|_| Response::ALL[rng.random_range(0..3)]).collect();
        let (l, g) = cross_entropy(z.view(), &r);
        let mut direct = 0.0;
        for i in 0..12 {
            let s: f64 = (0..3).map(|k| z[[i, k]].exp()).sum();
            direct += s.ln() - z[[i, r[i].class()]];
        }
        assert!((l - direct / 12.0).abs() < 1e-10);
        // Gradient rows sum to zero.
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
    }
}
