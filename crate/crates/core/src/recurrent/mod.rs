//! Trainable cognitive stage: linear reduction of perceptual vectors, task
//! conditioned embedding with layer normalization, a vanilla/GRU/LSTM core
//! and a 3-way readout, with exact backpropagation through time.

mod cell;
mod checkpoint;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::scalar::Scalar;

pub use cell::{cell_backward, cell_step, CellCache};
pub use checkpoint::Checkpoint;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-6;
/// Readout classes: match, non-match, no action.
pub const N_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Vanilla,
    Gru,
    Lstm,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Vanilla, Arch::Gru, Arch::Lstm];

    /// Number of stacked gate blocks in the recurrent matrices.
    pub fn gates(self) -> usize {
        match self {
            Arch::Vanilla => 1,
            Arch::Gru => 3,
            Arch::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Vanilla => "vanilla",
            Arch::Gru => "gru",
            Arch::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "rnn" => Ok(Arch::Vanilla),
            "gru" => Ok(Arch::Gru),
            "lstm" => Ok(Arch::Lstm),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// All trainable tensors. Gradients use the same type.
///
/// Gate blocks are stacked row-wise: GRU `[z; r; n]`, LSTM `[i; f; g; o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub reduce_w: Array2<T>,
    pub reduce_b: Array1<T>,
    pub embed_w: Array2<T>,
    pub embed_b: Array1<T>,
    pub ln_gain: Array1<T>,
    pub ln_shift: Array1<T>,
    pub w_ih: Array2<T>,
    pub w_hh: Array2<T>,
    pub b_core: Array1<T>,
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(other: &Params<T>) -> Self {
        Self {
            reduce_w: Array2::zeros(other.reduce_w.raw_dim()),
            reduce_b: Array1::zeros(other.reduce_b.raw_dim()),
            embed_w: Array2::zeros(other.embed_w.raw_dim()),
            embed_b: Array1::zeros(other.embed_b.raw_dim()),
            ln_gain: Array1::zeros(other.ln_gain.raw_dim()),
            ln_shift: Array1::zeros(other.ln_shift.raw_dim()),
            w_ih: Array2::zeros(other.w_ih.raw_dim()),
            w_hh: Array2::zeros(other.w_hh.raw_dim()),
            b_core: Array1::zeros(other.b_core.raw_dim()),
            head_w: Array2::zeros(other.head_w.raw_dim()),
            head_b: Array1::zeros(other.head_b.raw_dim()),
        }
    }

    pub const NAMES: [&'static str; 11] = [
        "reduce_w", "reduce_b", "embed_w", "embed_b", "ln_gain", "ln_shift", "w_ih", "w_hh", "b_core", "head_w",
        "head_b",
    ];

    pub fn slices(&self) -> Vec<&[T]> {
        vec![
            self.reduce_w.as_slice().expect("contiguous"),
            self.reduce_b.as_slice().expect("contiguous"),
            self.embed_w.as_slice().expect("contiguous"),
            self.embed_b.as_slice().expect("contiguous"),
            self.ln_gain.as_slice().expect("contiguous"),
            self.ln_shift.as_slice().expect("contiguous"),
            self.w_ih.as_slice().expect("contiguous"),
            self.w_hh.as_slice().expect("contiguous"),
            self.b_core.as_slice().expect("contiguous"),
            self.head_w.as_slice().expect("contiguous"),
            self.head_b.as_slice().expect("contiguous"),
        ]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.reduce_w.as_slice_mut().expect("contiguous"),
            self.reduce_b.as_slice_mut().expect("contiguous"),
            self.embed_w.as_slice_mut().expect("contiguous"),
            self.embed_b.as_slice_mut().expect("contiguous"),
            self.ln_gain.as_slice_mut().expect("contiguous"),
            self.ln_shift.as_slice_mut().expect("contiguous"),
            self.w_ih.as_slice_mut().expect("contiguous"),
            self.w_hh.as_slice_mut().expect("contiguous"),
            self.b_core.as_slice_mut().expect("contiguous"),
            self.head_w.as_slice_mut().expect("contiguous"),
            self.head_b.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().map(|x| x.to_f64c())).collect()
    }

    pub fn scale(&mut self, k: T) {
        for s in self.slices_mut() {
            for x in s {
                *x *= k;
            }
        }
    }
}

/// Embedding, recurrent core and readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel<T> {
    pub arch: Arch,
    pub hidden: usize,
    pub out_dim: usize,
    pub task_bits: usize,
    pub params: Params<T>,
}

/// Recurrent state; `c` is present for LSTM only.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub h: Array2<T>,
    pub c: Option<Array2<T>>,
}

impl<T: Scalar> HiddenState<T> {
    pub fn zeros(arch: Arch, batch: usize, hidden: usize) -> Self {
        Self {
            h: Array2::zeros((batch, hidden)),
            c: (arch == Arch::Lstm).then(|| Array2::zeros((batch, hidden))),
        }
    }
}

/// Batched model input: one `[batch × out_dim]` perceptual matrix per step
/// and a `[batch × task_bits]` task matrix.
#[derive(Debug, Clone)]
pub struct SeqInput<T> {
    pub perceptual: Vec<Array2<T>>,
    pub task: Array2<T>,
}

impl<T: Scalar> SeqInput<T> {
    pub fn batch(&self) -> usize {
        self.task.nrows()
    }

    pub fn steps(&self) -> usize {
        self.perceptual.len()
    }
}

/// Per-step activations for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub t: usize,
    pub input_embedding: Array1<T>,
    pub h: Array1<T>,
    pub c: Option<Array1<T>>,
    pub logits: Array1<T>,
}

struct StepCache<T> {
    cat: Array2<T>,
    xhat: Array2<T>,
    rstd: Array1<T>,
    x: Array2<T>,
    cell: CellCache<T>,
}

/// Batched forward pass with everything backward needs.
pub struct ForwardPass<T> {
    /// `[batch × 3]` per step.
    pub logits: Vec<Array2<T>>,
    /// Post-update states per step.
    pub h: Vec<Array2<T>>,
    pub c: Vec<Option<Array2<T>>>,
    /// Layer-normalized embeddings per step (after gain/shift).
    pub embeddings: Vec<Array2<T>>,
    caches: Vec<StepCache<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Normalized embeddings before gain/shift.
    pub fn normalized(&self, t: usize) -> &Array2<T> {
        &self.caches[t].xhat
    }

    /// Records of trial `b` in the batch.
    pub fn records(&self, b: usize) -> Vec<StepRecord<T>> {
        (0..self.logits.len())
            .map(|t| StepRecord {
                t,
                input_embedding: self.embeddings[t].row(b).to_owned(),
                h: self.h[t].row(b).to_owned(),
                c: self.c[t].as_ref().map(|c| c.row(b).to_owned()),
                logits: self.logits[t].row(b).to_owned(),
            })
            .collect()
    }
}

fn kaiming<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<T> {
    let std = (2.0 / cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| T::from_f64c(std * rng.sample::<f64, _>(StandardNormal)))
}

/// Closed-form trainable parameter count.
pub fn parameter_count(arch: Arch, hidden: usize, out_dim: usize, task_bits: usize) -> usize {
    let g = arch.gates();
    let h = hidden;
    (h * out_dim + h) + (h * (h + task_bits) + h) + 2 * h + (2 * g * h * h + g * h) + (N_ACTIONS * h + N_ACTIONS)
}

impl<T: Scalar> RecurrentModel<T> {
    /// Fan-in scaled normal weights (variance `2 / fan_in`), zero biases,
    /// unit layer-norm gain and zero shift.
    pub fn init(arch: Arch, hidden: usize, out_dim: usize, task_bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if hidden < 8 {
            return domain_err!("hidden size must be at least 8, got {hidden}");
        }
        if out_dim == 0 || task_bits == 0 {
            return domain_err!("out_dim and task_bits must be positive");
        }
        let g = arch.gates();
        let params = Params {
            reduce_w: kaiming(hidden, out_dim, rng),
            reduce_b: Array1::zeros(hidden),
            embed_w: kaiming(hidden, hidden + task_bits, rng),
            embed_b: Array1::zeros(hidden),
            ln_gain: Array1::ones(hidden),
            ln_shift: Array1::zeros(hidden),
            w_ih: kaiming(g * hidden, hidden, rng),
            w_hh: kaiming(g * hidden, hidden, rng),
            b_core: Array1::zeros(g * hidden),
            head_w: kaiming(N_ACTIONS, hidden, rng),
            head_b: Array1::zeros(N_ACTIONS),
        };
        Ok(Self {
            arch,
            hidden,
            out_dim,
            task_bits,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> RecurrentModel<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::from_f64c(x.to_f64c()));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::from_f64c(x.to_f64c()));
        let p = &self.params;
        RecurrentModel {
            arch: self.arch,
            hidden: self.hidden,
            out_dim: self.out_dim,
            task_bits: self.task_bits,
            params: Params {
                reduce_w: c2(&p.reduce_w),
                reduce_b: c1(&p.reduce_b),
                embed_w: c2(&p.embed_w),
                embed_b: c1(&p.embed_b),
                ln_gain: c1(&p.ln_gain),
                ln_shift: c1(&p.ln_shift),
                w_ih: c2(&p.w_ih),
                w_hh: c2(&p.w_hh),
                b_core: c1(&p.b_core),
                head_w: c2(&p.head_w),
                head_b: c1(&p.head_b),
            },
        }
    }

    /// SHA-256 over parameter values.
    pub fn content_hash(&self) -> String {
        crate::artifact::hash_floats(&self.params.flatten())
    }

    fn check_input(&self, input: &SeqInput<T>) -> Result<()> {
        let b = input.batch();
        if input.task.ncols() != self.task_bits {
            return domain_err!("task matrix has {} columns, model expects {}", input.task.ncols(), self.task_bits);
        }
        if input.perceptual.is_empty() {
            return domain_err!("empty input sequence");
        }
        for (t, p) in input.perceptual.iter().enumerate() {
            if p.dim() != (b, self.out_dim) {
                return domain_err!("step {t} perceptual input is {:?}, expected ({b}, {})", p.dim(), self.out_dim);
            }
        }
        Ok(())
    }

    /// Reduce, concatenate the task vector, affine map and layer-normalize.
    fn embed_step(&self, perceptual: &Array2<T>, task: &Array2<T>) -> (Array2<T>, Array2<T>, Array1<T>, Array2<T>) {
        let p = &self.params;
        let reduced = perceptual.dot(&p.reduce_w.t()) + &p.reduce_b;
        let cat = concatenate![Axis(1), reduced, task.view()];
        let u = cat.dot(&p.embed_w.t()) + &p.embed_b;
        let (xhat, rstd) = layer_norm(&u);
        let x = &xhat * &p.ln_gain + &p.ln_shift;
        (cat, xhat, rstd, x)
    }

    /// Forward over all steps from a zero state.
    pub fn forward(&self, input: &SeqInput<T>) -> Result<ForwardPass<T>> {
        self.forward_with(input, |_, _| {})
    }

    /// Forward pass with a hook that may edit the state after each step
    /// (used by the perturbation analysis). The hook sees the post-update
    /// state of step `t` before it feeds step `t + 1`.
    pub fn forward_with(&self, input: &SeqInput<T>, mut hook: impl FnMut(usize, &mut HiddenState<T>)) -> Result<ForwardPass<T>> {
        self.check_input(input)?;
        let b = input.batch();
        let mut state = HiddenState::zeros(self.arch, b, self.hidden);
        let steps = input.steps();
        let mut out = ForwardPass {
            logits: Vec::with_capacity(steps),
            h: Vec::with_capacity(steps),
            c: Vec::with_capacity(steps),
            embeddings: Vec::with_capacity(steps),
            caches: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            let (cat, xhat, rstd, x) = self.embed_step(&input.perceptual[t], &input.task);
            let (next, cell) = cell_step(self.arch, &self.params, &x, &state)?;
            state = next;
            hook(t, &mut state);
            let logits = state.h.dot(&self.params.head_w.t()) + &self.params.head_b;
            out.logits.push(logits);
            out.h.push(state.h.clone());
            out.c.push(state.c.clone());
            out.embeddings.push(x.clone());
            out.caches.push(StepCache { cat, xhat, rstd, x, cell });
        }
        Ok(out)
    }

    /// Exact gradients of a loss whose logit gradients are `dlogits`
    /// (one `[batch × 3]` matrix per step).
    pub fn backward(&self, pass: &ForwardPass<T>, input: &SeqInput<T>, dlogits: &[Array2<T>]) -> Result<Params<T>> {
        let steps = pass.logits.len();
        if dlogits.len() != steps {
            return domain_err!("{} logit gradients for {steps} steps", dlogits.len());
        }
        let p = &self.params;
        let mut g = Params::zeros_like(p);
        let b = input.batch();
        let h = self.hidden;
        let mut dh_next = Array2::<T>::zeros((b, h));
        let mut dc_next = (self.arch == Arch::Lstm).then(|| Array2::<T>::zeros((b, h)));
        for t in (0..steps).rev() {
            let dl = &dlogits[t];
            let cache = &pass.caches[t];
            general_mat_mul(T::one(), &dl.t(), &pass.h[t], T::one(), &mut g.head_w);
            g.head_b += &dl.sum_axis(Axis(0));
            let mut dh = dl.dot(&p.head_w);
            dh += &dh_next;

            let (dx, dh_prev, dc_prev) = cell_backward(self.arch, p, &cache.x, &cache.cell, &dh, dc_next.as_ref(), &mut g);
            dh_next = dh_prev;
            dc_next = dc_prev;

            // Layer norm.
            g.ln_gain += &(&dx * &cache.xhat).sum_axis(Axis(0));
            g.ln_shift += &dx.sum_axis(Axis(0));
            let dxhat = &dx * &p.ln_gain;
            let du = layer_norm_backward(&cache.xhat, &cache.rstd, &dxhat);

            general_mat_mul(T::one(), &du.t(), &cache.cat, T::one(), &mut g.embed_w);
            g.embed_b += &du.sum_axis(Axis(0));
            let dreduced = du.dot(&p.embed_w.slice(s![.., ..h]));
            general_mat_mul(T::one(), &dreduced.t(), &input.perceptual[t], T::one(), &mut g.reduce_w);
            g.reduce_b += &dreduced.sum_axis(Axis(0));
        }
        Ok(g)
    }
}

/// Row-wise normalization; returns `x̂` and `1/σ` per row.
pub fn layer_norm<T: Scalar>(u: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let n = T::from_usize_c(u.ncols());
    let eps = T::from_f64c(LN_EPS);
    let mut xhat = u.clone();
    let mut rstd = Array1::zeros(u.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / n;
        *r = T::one() / (var + eps).sqrt();
        let k = *r;
        row.mapv_inplace(|v| v * k);
    }
    (xhat, rstd)
}

fn layer_norm_backward<T: Scalar>(xhat: &Array2<T>, rstd: &Array1<T>, dxhat: &Array2<T>) -> Array2<T> {
    let n = T::from_usize_c(xhat.ncols());
    let mut du = Array2::zeros(xhat.raw_dim());
    for i in 0..xhat.nrows() {
        let xr = xhat.row(i);
        let dr = dxhat.row(i);
        let mean_d = dr.sum() / n;
        let mean_dx = dr.dot(&xr) / n;
        let r = rstd[i];
        for j in 0..xhat.ncols() {
            du[[i, j]] = r * (dr[j] - mean_d - xr[j] * mean_dx);
        }
    }
    du
}


impl SeqInput<f32> {
    /// Assemble a batch from cached perceptual vectors and task vectors.
    pub fn from_trials(
        trials: &[crate::task::Trial],
        cache: &crate::stimulus::EmbeddingCache,
        suite: &crate::task::TaskSuite,
    ) -> Result<Self> {
        let b = trials.len();
        if b == 0 {
            return domain_err!("empty batch");
        }
        let steps = trials[0].len();
        let out_dim = cache.out_dim();
        let bits = suite.index_bits();
        let mut perceptual = vec![Array2::<f32>::zeros((b, out_dim)); steps];
        let mut task = Array2::<f32>::zeros((b, bits));
        for (i, trial) in trials.iter().enumerate() {
            if trial.len() != steps {
                return domain_err!("trials of unequal length in one batch");
            }
            let v = suite.index_vector(&trial.task)?;
            for (j, &bit) in v.as_slice().iter().enumerate() {
                task[[i, j]] = f32::from(bit);
            }
            for (t, spec) in trial.stimuli.iter().enumerate() {
                perceptual[t].row_mut(i).assign(cache.get(spec)?);
            }
        }
        Ok(Self { perceptual, task })
    }
}
