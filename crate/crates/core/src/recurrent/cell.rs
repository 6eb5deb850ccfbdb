//! Single-step recurrent updates and their adjoints.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::{Arch, HiddenState, Params};
use crate::error::{domain_err, Result};
use crate::scalar::Scalar;

/// Values saved by [`cell_step`] for [`cell_backward`].
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    pub h_prev: Array2<T>,
    pub c_prev: Option<Array2<T>>,
    /// Post-activation gates, `[batch × gates·hidden]`.
    pub gates: Array2<T>,
    /// GRU only: `r ⊙ h_prev`.
    pub rh: Option<Array2<T>>,
    /// LSTM only: `tanh(c)`.
    pub tanh_c: Option<Array2<T>>,
    pub h: Array2<T>,
}

fn tanh_inplace<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| v.tanh());
}

/// One recurrent update from embedding `x` and the previous state.
///
/// - vanilla: `h' = tanh(W x + U h + b)`
/// - GRU: `z, r = σ(..)`, `h̃ = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) h + z h̃`
/// - LSTM: `c' = f c + i g`, `h' = o tanh(c')`
pub fn cell_step<T: Scalar>(
    arch: Arch,
    p: &Params<T>,
    x: &Array2<T>,
    state: &HiddenState<T>,
) -> Result<(HiddenState<T>, CellCache<T>)> {
    let hsz = p.w_hh.ncols();
    let batch = x.nrows();
    if x.ncols() != hsz || state.h.dim() != (batch, hsz) {
        return domain_err!("cell input {:?} / state {:?} do not match hidden size {hsz}", x.dim(), state.h.dim());
    }
    let h_prev = &state.h;
    let mut pre = x.dot(&p.w_ih.t()) + &p.b_core;
    match arch {
        Arch::Vanilla => {
            general_mat_mul(T::one(), h_prev, &p.w_hh.t(), T::one(), &mut pre);
            tanh_inplace(&mut pre);
            let h = pre.clone();
            Ok((
                HiddenState { h: h.clone(), c: None },
                CellCache { h_prev: h_prev.clone(), c_prev: None, gates: pre, rh: None, tanh_c: None, h },
            ))
        }
        Arch::Gru => {
            {
                let mut zr = pre.slice_mut(s![.., ..2 * hsz]);
                general_mat_mul(T::one(), h_prev, &p.w_hh.slice(s![..2 * hsz, ..]).t(), T::one(), &mut zr);
                zr.mapv_inplace(|v| v.sigmoid());
            }
            let rh = &pre.slice(s![.., hsz..2 * hsz]) * h_prev;
            {
                let mut n = pre.slice_mut(s![.., 2 * hsz..]);
                general_mat_mul(T::one(), &rh, &p.w_hh.slice(s![2 * hsz.., ..]).t(), T::one(), &mut n);
                n.mapv_inplace(|v| v.tanh());
            }
            let z = pre.slice(s![.., ..hsz]);
            let n = pre.slice(s![.., 2 * hsz..]);
            let mut h = Array2::zeros((batch, hsz));
            ndarray::Zip::from(&mut h).and(&z).and(&n).and(h_prev).for_each(|o, &z, &n, &hp| {
                *o = (T::one() - z) * hp + z * n;
            });
            Ok((
                HiddenState { h: h.clone(), c: None },
                CellCache { h_prev: h_prev.clone(), c_prev: None, gates: pre, rh: Some(rh), tanh_c: None, h },
            ))
        }
        Arch::Lstm => {
            let Some(c_prev) = state.c.as_ref() else {
                return domain_err!("LSTM state without a cell vector");
            };
            general_mat_mul(T::one(), h_prev, &p.w_hh.t(), T::one(), &mut pre);
            for (k, mut block) in pre.axis_chunks_iter_mut(Axis(1), hsz).enumerate() {
                if k == 2 {
                    block.mapv_inplace(|v| v.tanh());
                } else {
                    block.mapv_inplace(|v| v.sigmoid());
                }
            }
            let i = pre.slice(s![.., ..hsz]);
            let f = pre.slice(s![.., hsz..2 * hsz]);
            let g = pre.slice(s![.., 2 * hsz..3 * hsz]);
            let o = pre.slice(s![.., 3 * hsz..]);
            let c = &f * c_prev + &(&i * &g);
            let tanh_c = c.mapv(|v| v.tanh());
            let h = &o * &tanh_c;
            Ok((
                HiddenState { h: h.clone(), c: Some(c) },
                CellCache {
                    h_prev: h_prev.clone(),
                    c_prev: Some(c_prev.clone()),
                    gates: pre,
                    rh: None,
                    tanh_c: Some(tanh_c),
                    h,
                },
            ))
        }
    }
}

/// Adjoint of [`cell_step`]. Accumulates core parameter gradients into
/// `grads` and returns `(dx, dh_prev, dc_prev)`.
pub fn cell_backward<T: Scalar>(
    arch: Arch,
    p: &Params<T>,
    x: &Array2<T>,
    cache: &CellCache<T>,
    dh: &Array2<T>,
    dc_next: Option<&Array2<T>>,
    grads: &mut Params<T>,
) -> (Array2<T>, Array2<T>, Option<Array2<T>>) {
    let hsz = p.w_hh.ncols();
    let one = T::one();
    let h_prev = &cache.h_prev;
    match arch {
        Arch::Vanilla => {
            let da = ndarray::Zip::from(dh).and(&cache.h).map_collect(|&d, &h| d * (one - h * h));
            general_mat_mul(one, &da.t(), x, one, &mut grads.w_ih);
            general_mat_mul(one, &da.t(), h_prev, one, &mut grads.w_hh);
            grads.b_core += &da.sum_axis(Axis(0));
            (da.dot(&p.w_ih), da.dot(&p.w_hh), None)
        }
        Arch::Gru => {
            let z = cache.gates.slice(s![.., ..hsz]);
            let r = cache.gates.slice(s![.., hsz..2 * hsz]);
            let n = cache.gates.slice(s![.., 2 * hsz..]);
            let rh = cache.rh.as_ref().expect("gru cache");
            let mut da = Array2::<T>::zeros(cache.gates.raw_dim());
            // Candidate pre-activation.
            {
                let mut dan = da.slice_mut(s![.., 2 * hsz..]);
                ndarray::Zip::from(&mut dan).and(dh).and(&z).and(&n).for_each(|o, &d, &z, &n| {
                    *o = d * z * (one - n * n);
                });
            }
            let dan = da.slice(s![.., 2 * hsz..]).to_owned();
            let u_n = p.w_hh.slice(s![2 * hsz.., ..]);
            general_mat_mul(one, &dan.t(), rh, one, &mut grads.w_hh.slice_mut(s![2 * hsz.., ..]));
            let drh = dan.dot(&u_n);
            let mut dh_prev = ndarray::Zip::from(dh).and(&z).map_collect(|&d, &z| d * (one - z));
            dh_prev += &(&drh * &r);
            {
                let mut daz = da.slice_mut(s![.., ..hsz]);
                ndarray::Zip::from(&mut daz).and(dh).and(&z).and(&n).and(h_prev).for_each(|o, &d, &z, &n, &hp| {
                    *o = d * (n - hp) * z * (one - z);
                });
            }
            {
                let mut dar = da.slice_mut(s![.., hsz..2 * hsz]);
                ndarray::Zip::from(&mut dar).and(&drh).and(h_prev).and(&r).for_each(|o, &d, &hp, &r| {
                    *o = d * hp * r * (one - r);
                });
            }
            let dazr = da.slice(s![.., ..2 * hsz]);
            general_mat_mul(one, &dazr.t(), h_prev, one, &mut grads.w_hh.slice_mut(s![..2 * hsz, ..]));
            general_mat_mul(one, &dazr, &p.w_hh.slice(s![..2 * hsz, ..]), one, &mut dh_prev);
            general_mat_mul(one, &da.t(), x, one, &mut grads.w_ih);
            grads.b_core += &da.sum_axis(Axis(0));
            (da.dot(&p.w_ih), dh_prev, None)
        }
        Arch::Lstm => {
            let i = cache.gates.slice(s![.., ..hsz]);
            let f = cache.gates.slice(s![.., hsz..2 * hsz]);
            let g = cache.gates.slice(s![.., 2 * hsz..3 * hsz]);
            let o = cache.gates.slice(s![.., 3 * hsz..]);
            let tc = cache.tanh_c.as_ref().expect("lstm cache");
            let c_prev = cache.c_prev.as_ref().expect("lstm cache");
            let mut dc = ndarray::Zip::from(dh).and(&o).and(tc).map_collect(|&d, &o, &t| d * o * (one - t * t));
            if let Some(dn) = dc_next {
                dc += dn;
            }
            let mut da = Array2::<T>::zeros(cache.gates.raw_dim());
            ndarray::Zip::from(da.slice_mut(s![.., ..hsz])).and(&dc).and(&g).and(&i).for_each(|o, &d, &g, &i| {
                *o = d * g * i * (one - i);
            });
            ndarray::Zip::from(da.slice_mut(s![.., hsz..2 * hsz])).and(&dc).and(c_prev).and(&f).for_each(
                |o, &d, &cp, &f| {
                    *o = d * cp * f * (one - f);
                },
            );
            ndarray::Zip::from(da.slice_mut(s![.., 2 * hsz..3 * hsz])).and(&dc).and(&i).and(&g).for_each(
                |o, &d, &i, &g| {
                    *o = d * i * (one - g * g);
                },
            );
            ndarray::Zip::from(da.slice_mut(s![.., 3 * hsz..])).and(dh).and(tc).and(&o).for_each(|out, &d, &t, &o| {
                *out = d * t * o * (one - o);
            });
            let dc_prev = &dc * &f;
            general_mat_mul(one, &da.t(), x, one, &mut grads.w_ih);
            general_mat_mul(one, &da.t(), h_prev, one, &mut grads.w_hh);
            grads.b_core += &da.sum_axis(Axis(0));
            (da.dot(&p.w_ih), da.dot(&p.w_hh), Some(dc_prev))
        }
    }
}
