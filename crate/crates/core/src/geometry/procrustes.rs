//! Orthogonal Procrustes alignment of decoder families and rotation swaps.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::decode::{fit_set, multiclass_accuracy, CvConfig, DecoderSet, Hyperplane};
use crate::error::{domain_err, Result};
use crate::linalg::{column_mean, frobenius, svd};
use crate::task::{Feature, TaskSpec};
use crate::trace::{ActivationBank, SpaceKind, SpaceQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesAlignment {
    pub r: Array2<f64>,
    pub s: f64,
    pub source_centroid: Array1<f64>,
    pub source_norm: f64,
    pub target_centroid: Array1<f64>,
    pub target_norm: f64,
    /// Either standardized set has fewer than two nonzero singular values.
    pub rank_deficient: bool,
}

fn standardize(w: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>, f64) {
    let c = column_mean(w);
    let centered = &w - &c.view().insert_axis(Axis(0));
    let n = frobenius(centered.view());
    let scaled = if n > 0.0 { centered / n } else { centered };
    (scaled, c, n)
}

/// Align `w_source` onto `w_target` (rows are decoder normals).
pub fn procrustes_align(w_source: ArrayView2<'_, f64>, w_target: ArrayView2<'_, f64>) -> Result<ProcrustesAlignment> {
    if w_source.dim() != w_target.dim() {
        return domain_err!("source {:?} and target {:?} shapes differ", w_source.dim(), w_target.dim());
    }
    if w_source.nrows() < 2 {
        return domain_err!("Procrustes alignment needs at least two vectors");
    }
    let (a, ca, na) = standardize(w_source);
    let (b, cb, nb) = standardize(w_target);
    let m = a.t().dot(&b);
    let d = svd(m.view());
    let r = d.u.dot(&d.v.t());
    let s = d.s.sum();
    let rank = |x: &Array2<f64>| {
        let sv = svd(x.view()).s;
        sv.iter().filter(|&&v| v > 1e-10).count()
    };
    let rank_deficient = na == 0.0 || nb == 0.0 || rank(&a) < 2 || rank(&b) < 2;
    Ok(ProcrustesAlignment {
        r,
        s,
        source_centroid: ca,
        source_norm: na,
        target_centroid: cb,
        target_norm: nb,
        rank_deficient,
    })
}

impl ProcrustesAlignment {
    /// `((w' R) s) S + B` with `w'` standardized by the source statistics.
    pub fn reconstruct(&self, w_source: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if w_source.ncols() != self.r.nrows() {
            return domain_err!("normals have dimension {}, alignment {}", w_source.ncols(), self.r.nrows());
        }
        let centered = &w_source - &self.source_centroid.view().insert_axis(Axis(0));
        let a = if self.source_norm > 0.0 { centered / self.source_norm } else { centered };
        let rec = a.dot(&self.r) * (self.s * self.target_norm);
        Ok(rec + &self.target_centroid.view().insert_axis(Axis(0)))
    }

    /// `‖w'_source R s − w'_target‖_F` in standardized coordinates.
    pub fn residual(&self, w_source: ArrayView2<'_, f64>, w_target: ArrayView2<'_, f64>) -> f64 {
        let (a, _, _) = standardize(w_source);
        let (b, _, _) = standardize(w_target);
        frobenius((a.dot(&self.r) * self.s - b).view())
    }

    /// Same statistics and scale with another rotation.
    pub fn with_rotation(&self, r: &Array2<f64>) -> Self {
        Self { r: r.clone(), ..self.clone() }
    }
}

/// Where reconstructed decoders take their bias from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSource {
    #[default]
    Source,
    Target,
}

/// Multi-class accuracy of the source family rotated by `alignment`,
/// evaluated on `(x, labels)` from the target condition.
///
/// Alignment and evaluation happen in standardized coordinates: normals are
/// the families' standardized weights and `x` is z-scored with the target
/// family's statistics, so biases are comparable across conditions.
pub fn reconstruct_decoders(
    alignment: &ProcrustesAlignment,
    source: &DecoderSet<f64>,
    target: &DecoderSet<f64>,
    bias: BiasSource,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64> {
    let w = alignment.reconstruct(source.standardized_normals().view())?;
    if w.ncols() != x.ncols() {
        return domain_err!("reconstructed dimension {} differs from slice dimension {}", w.ncols(), x.ncols());
    }
    let Some(first) = target.decoders.first() else {
        return domain_err!("empty target family");
    };
    let z = first.standardizer.apply(x);
    let biases: Vec<f64> = match bias {
        BiasSource::Source => source.decoders.iter().map(|d| d.b).collect(),
        BiasSource::Target => target.decoders.iter().map(|d| d.b).collect(),
    };
    let rec: Vec<Hyperplane<f64>> = w.rows().into_iter().zip(biases).map(|(r, b)| Hyperplane { w: r.to_owned(), b }).collect();
    Ok(multiclass_accuracy(&rec, z.view(), labels))
}

fn space(i: usize, j: usize) -> SpaceKind {
    if i == j {
        SpaceKind::Encoding(i)
    } else {
        SpaceKind::Memory { stimulus: i, t: j }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRow {
    /// Source condition `(stimulus i, time j)`; the target is `(i, j + 1)`.
    pub stimulus: usize,
    pub time: usize,
    /// Accuracy of the target condition's own decoders on the slice the
    /// reconstructions are scored on.
    pub fitted: f64,
    /// Cross-validated accuracy of the same decoders.
    pub fitted_cv: f64,
    pub baseline: f64,
    pub time_shift: Option<f64>,
    pub stimulus_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub feature: Feature,
    pub task: TaskSpec,
    pub shift: usize,
    pub rows: Vec<SwapRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SwapReport {
    pub fn mean_fitted(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.fitted))
    }

    pub fn mean_baseline(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.baseline))
    }

    /// Means over rows where both swaps exist: `(baseline, time, stimulus)`.
    pub fn paired_means(&self) -> Option<(f64, f64, f64)> {
        let rows: Vec<&SwapRow> = self.rows.iter().filter(|r| r.time_shift.is_some() && r.stimulus_shift.is_some()).collect();
        Some((
            mean(rows.iter().map(|r| r.baseline))?,
            mean(rows.iter().map(|r| r.time_shift.unwrap_or(0.0)))?,
            mean(rows.iter().map(|r| r.stimulus_shift.unwrap_or(0.0)))?,
        ))
    }
}

/// Alignments `(i, j) → (i, j + 1)` for `i ≤ j` and `j + 1 ≤ min(i + n, T − 1)`,
/// then each one's accuracy with its own rotation, the time-shifted
/// rotation `R_(i, j+1)` and the stimulus-shifted rotation `R_(i+k, j+k)`.
/// Only the rotation is swapped; scale and statistics stay the condition's own.
pub fn swap_test(
    bank: &ActivationBank,
    feature: Feature,
    task: TaskSpec,
    shift: usize,
    bias: BiasSource,
    cfg: &CvConfig,
) -> Result<SwapReport> {
    let steps = bank.steps();
    let limit = |i: usize| (i + task.n_back).min(steps - 1);
    let mut sets: BTreeMap<(usize, usize), DecoderSet<f64>> = BTreeMap::new();
    let mut slices: BTreeMap<(usize, usize), (Array2<f64>, Vec<usize>)> = BTreeMap::new();
    for i in 0..steps {
        for j in i..=limit(i) {
            let q = SpaceQuery::new(space(i, j), feature).for_task(task);
            sets.insert((i, j), fit_set(bank, &q, cfg)?);
            slices.insert((i, j), bank.slice::<f64>(&q)?);
        }
    }
    let mut aligns: BTreeMap<(usize, usize), ProcrustesAlignment> = BTreeMap::new();
    for i in 0..steps {
        for j in i..limit(i) {
            let a = procrustes_align(sets[&(i, j)].standardized_normals().view(), sets[&(i, j + 1)].standardized_normals().view())?;
            aligns.insert((i, j), a);
        }
    }
    let mut rows = Vec::new();
    for (&(i, j), own) in &aligns {
        let source = &sets[&(i, j)];
        let target = &sets[&(i, j + 1)];
        let (x, y) = &slices[&(i, j + 1)];
        let eval = |a: &ProcrustesAlignment| reconstruct_decoders(a, source, target, bias, x.view(), y);
        let baseline = eval(own)?;
        let time_shift = aligns.get(&(i, j + 1)).map(|o| eval(&own.with_rotation(&o.r))).transpose()?;
        let stimulus_shift = if shift == 0 {
            Some(baseline)
        } else {
            aligns.get(&(i + shift, j + shift)).map(|o| eval(&own.with_rotation(&o.r))).transpose()?
        };
        rows.push(SwapRow {
            stimulus: i,
            time: j,
            fitted: target.accuracy(x.view(), y),
            fitted_cv: target.cv_accuracy,
            baseline,
            time_shift,
            stimulus_shift,
        });
    }
    if rows.is_empty() {
        return domain_err!("no alignments available for {task}");
    }
    Ok(SwapReport { feature, task, shift, rows })
}
