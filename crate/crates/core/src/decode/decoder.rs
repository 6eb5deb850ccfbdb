use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::svm::{self, SolverParams};
use crate::error::{domain_err, Result};
use crate::scalar::Scalar;
use crate::task::{Feature, TaskSpec};
use crate::trace::SpaceQuery;

/// Regularization grid searched by cross-validation.
pub const C_GRID: [f64; 4] = [0.001, 0.01, 1.0, 10.0];

/// Floor on cross-validated accuracy used to filter decoders downstream.
pub const CV_FLOOR: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub solver: SolverParams,
    /// Minimum samples per class for a binary decoder.
    pub min_per_class: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            grid: C_GRID.to_vec(),
            solver: SolverParams::default(),
            min_per_class: 20,
        }
    }
}

/// Per-dimension z-score transform estimated on the fit slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: ArrayView2<'_, T>) -> Self {
        let n = T::from_usize_c(x.nrows().max(1));
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let mut scale = Array1::<T>::zeros(x.ncols());
        for row in x.rows() {
            for ((s, &v), &m) in scale.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        let tiny = T::from_f64c(1e-8);
        scale.mapv_inplace(|s| {
            let sd = (s / n).sqrt();
            if sd > tiny {
                sd
            } else {
                T::one()
            }
        });
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn apply(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.to_owned();
        z -= &self.mean.view().insert_axis(Axis(0));
        z /= &self.scale.view().insert_axis(Axis(0));
        z
    }
}

/// Decision hyperplane `d = x·w + b` in the raw coordinates of a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane<T> {
    pub w: Array1<T>,
    pub b: T,
}

impl<T: Scalar> Hyperplane<T> {
    pub fn decision(&self, x: ArrayView1<'_, T>) -> T {
        self.w.dot(&x) + self.b
    }

    pub fn decisions(&self, x: ArrayView2<'_, T>) -> Array1<T> {
        x.dot(&self.w) + self.b
    }

    /// Binary accuracy; a point is in the positive class iff `d ≥ 0`.
    pub fn accuracy(&self, x: ArrayView2<'_, T>, positive: &[bool]) -> f64 {
        let d = self.decisions(x);
        let hits = d
            .iter()
            .zip(positive)
            .filter(|(&d, &p)| (d >= T::zero()) == p)
            .count();
        hits as f64 / positive.len().max(1) as f64
    }
}

/// Where a decoder was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DecoderMeta {
    pub feature: Option<Feature>,
    pub space: Option<SpaceQuery>,
    pub task: Option<TaskSpec>,
}

/// One-vs-rest linear decoder for one attribute value.
///
/// `w` and `b` live in standardized coordinates; [`LinearDecoder::hyperplane`]
/// folds the standardizer into a raw-space hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder<T> {
    pub w: Array1<T>,
    pub b: T,
    pub standardizer: Standardizer<T>,
    pub value: usize,
    pub c: f64,
    pub cv_accuracy: f64,
    pub meta: DecoderMeta,
}

impl<T: Scalar> LinearDecoder<T> {
    pub fn hyperplane(&self) -> Hyperplane<T> {
        let w = &self.w / &self.standardizer.scale;
        let b = self.b - w.dot(&self.standardizer.mean);
        Hyperplane { w, b }
    }

    pub fn decision(&self, x: ArrayView1<'_, T>) -> T {
        let z = (&x - &self.standardizer.mean) / &self.standardizer.scale;
        self.w.dot(&z) + self.b
    }

    pub fn accuracy(&self, x: ArrayView2<'_, T>, positive: &[bool]) -> f64 {
        self.hyperplane().accuracy(x, positive)
    }
}

/// Stratified, deterministic fold assignment.
pub(crate) fn stratified_folds(labels: &[usize], folds: usize) -> Vec<usize> {
    let mut assign = vec![0; labels.len()];
    let n_values = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut seen = vec![0usize; n_values];
    // Offsetting each class start spreads small classes over all folds.
    let mut start = 0usize;
    for v in 0..n_values {
        let class_start = start;
        for (i, &l) in labels.iter().enumerate() {
            if l == v {
                assign[i] = (class_start + seen[v]) % folds;
                seen[v] += 1;
            }
        }
        start += seen[v];
    }
    assign
}

struct BinaryCv<T> {
    decoder: LinearDecoder<T>,
    /// Held-out margins at the winning C, one per sample.
    heldout: Vec<T>,
}

fn class_bounds<T: Scalar>(y: &[i8], rows: &[usize], c: f64) -> Vec<T> {
    let n = rows.len() as f64;
    let n_pos = rows.iter().filter(|&&r| y[r] > 0).count() as f64;
    let n_neg = n - n_pos;
    let w_pos = n / (2.0 * n_pos.max(1.0));
    let w_neg = n / (2.0 * n_neg.max(1.0));
    rows.iter()
        .map(|&r| T::from_f64c(c * if y[r] > 0 { w_pos } else { w_neg }))
        .collect()
}

/// Grid-searched, cross-validated fit on already standardized data.
fn fit_binary_cv<T: Scalar>(
    z: ArrayView2<'_, T>,
    y: &[i8],
    fold_of: &[usize],
    cfg: &CvConfig,
    standardizer: &Standardizer<T>,
    value: usize,
) -> BinaryCv<T> {
    let n = y.len();
    let mut grid: Vec<f64> = cfg.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // heldout[c][i]
    let mut heldout = vec![vec![T::zero(); n]; grid.len()];
    let mut fold_acc = vec![0.0f64; grid.len()];
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let mut warm: Option<Vec<T>> = None;
        for (ci, &c) in grid.iter().enumerate() {
            let bounds = class_bounds::<T>(y, &train, c);
            let fit = svm::solve(z, y, &train, &bounds, &cfg.solver, warm.as_deref());
            let mut hits = 0;
            for &i in &test {
                let m = svm::margin(&fit.w, fit.b, z.row(i));
                heldout[ci][i] = m;
                if (m >= T::zero()) == (y[i] > 0) {
                    hits += 1;
                }
            }
            fold_acc[ci] += hits as f64 / test.len() as f64;
            warm = Some(fit.alpha);
        }
    }
    let used_folds = (0..cfg.folds).filter(|f| fold_of.contains(f)).count().max(1) as f64;
    // Ties go to the larger C (grid is ascending).
    let mut best = 0;
    for ci in 0..grid.len() {
        if fold_acc[ci] >= fold_acc[best] - 1e-12 {
            best = ci;
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let bounds = class_bounds::<T>(y, &all, grid[best]);
    let fit = svm::solve(z, y, &all, &bounds, &cfg.solver, None);
    BinaryCv {
        decoder: LinearDecoder {
            w: fit.w,
            b: fit.b,
            standardizer: standardizer.clone(),
            value,
            c: grid[best],
            cv_accuracy: fold_acc[best] / used_folds,
            meta: DecoderMeta::default(),
        },
        heldout: std::mem::take(&mut heldout[best]),
    }
}

fn check_binary(positive: &[bool], min_per_class: usize) -> Result<()> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return domain_err!("decoder needs both classes (got {n_pos} positive, {n_neg} negative)");
    }
    if n_pos < min_per_class || n_neg < min_per_class {
        return domain_err!("decoder needs at least {min_per_class} samples per class (got {n_pos}/{n_neg})");
    }
    Ok(())
}

/// Fit one binary decoder with standardization and grid-searched CV.
pub fn fit_decoder<T: Scalar>(x: ArrayView2<'_, T>, positive: &[bool], cfg: &CvConfig) -> Result<LinearDecoder<T>> {
    if x.nrows() != positive.len() {
        return domain_err!("{} rows but {} labels", x.nrows(), positive.len());
    }
    check_binary(positive, cfg.min_per_class)?;
    let standardizer = Standardizer::fit(x);
    let z = standardizer.apply(x);
    let labels: Vec<usize> = positive.iter().map(|&p| p as usize).collect();
    let y: Vec<i8> = positive.iter().map(|&p| if p { 1 } else { -1 }).collect();
    let folds = stratified_folds(&labels, cfg.folds);
    Ok(fit_binary_cv(z.view(), &y, &folds, cfg, &standardizer, 1).decoder)
}

/// One decoder per attribute value, all fitted on the same slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSet<T> {
    pub decoders: Vec<LinearDecoder<T>>,
    pub meta: DecoderMeta,
    /// Cross-validated accuracy of the margin-argmax multi-class readout.
    pub cv_accuracy: f64,
}

impl<T: Scalar> DecoderSet<T> {
    /// Fit the one-vs-rest family for labels in `0..n_values`.
    pub fn fit(x: ArrayView2<'_, T>, labels: &[usize], n_values: usize, cfg: &CvConfig) -> Result<Self> {
        if x.nrows() != labels.len() {
            return domain_err!("{} rows but {} labels", x.nrows(), labels.len());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_values) {
            return domain_err!("label {bad} outside 0..{n_values}");
        }
        for v in 0..n_values {
            let pos: Vec<bool> = labels.iter().map(|&l| l == v).collect();
            check_binary(&pos, cfg.min_per_class.min(cfg.folds))?;
        }
        let standardizer = Standardizer::fit(x);
        let z = standardizer.apply(x);
        let folds = stratified_folds(labels, cfg.folds);
        let mut decoders = Vec::with_capacity(n_values);
        let mut heldout = Vec::with_capacity(n_values);
        for v in 0..n_values {
            let y: Vec<i8> = labels.iter().map(|&l| if l == v { 1 } else { -1 }).collect();
            let fit = fit_binary_cv(z.view(), &y, &folds, cfg, &standardizer, v);
            decoders.push(fit.decoder);
            heldout.push(fit.heldout);
        }
        let hits = (0..labels.len())
            .filter(|&i| argmax((0..n_values).map(|v| heldout[v][i])) == labels[i])
            .count();
        Ok(Self {
            decoders,
            meta: DecoderMeta::default(),
            cv_accuracy: hits as f64 / labels.len().max(1) as f64,
        })
    }

    /// Refit every decoder at its already chosen C without cross-validation
    /// (bootstrap resamples). `cv_accuracy` fields are copied from `self`.
    pub fn refit(&self, x: ArrayView2<'_, T>, labels: &[usize], solver: &SolverParams) -> Result<Self> {
        let n_values = self.decoders.len();
        if x.nrows() != labels.len() {
            return domain_err!("{} rows but {} labels", x.nrows(), labels.len());
        }
        let standardizer = Standardizer::fit(x);
        let z = standardizer.apply(x);
        let all: Vec<usize> = (0..labels.len()).collect();
        let mut decoders = Vec::with_capacity(n_values);
        for d in &self.decoders {
            let pos: Vec<bool> = labels.iter().map(|&l| l == d.value).collect();
            check_binary(&pos, 1)?;
            let y: Vec<i8> = pos.iter().map(|&p| if p { 1 } else { -1 }).collect();
            let bounds = class_bounds::<T>(&y, &all, d.c);
            let fit = svm::solve(z.view(), &y, &all, &bounds, solver, None);
            decoders.push(LinearDecoder {
                w: fit.w,
                b: fit.b,
                standardizer: standardizer.clone(),
                value: d.value,
                c: d.c,
                cv_accuracy: d.cv_accuracy,
                meta: self.meta.clone(),
            });
        }
        Ok(Self { decoders, meta: self.meta.clone(), cv_accuracy: self.cv_accuracy })
    }

    pub fn with_meta(mut self, meta: DecoderMeta) -> Self {
        for d in &mut self.decoders {
            d.meta = meta.clone();
        }
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.decoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decoders.is_empty()
    }

    pub fn hyperplanes(&self) -> Vec<Hyperplane<T>> {
        self.decoders.iter().map(|d| d.hyperplane()).collect()
    }

    /// Raw-space normals stacked as rows (`values × dim`).
    pub fn normals(&self) -> Array2<T> {
        stack_normals(&self.hyperplanes())
    }

    /// Normals in the fit's standardized coordinates.
    pub fn standardized_normals(&self) -> Array2<T> {
        let planes: Vec<Hyperplane<T>> = self.decoders.iter().map(|d| Hyperplane { w: d.w.clone(), b: d.b }).collect();
        stack_normals(&planes)
    }

    pub fn predict(&self, x: ArrayView2<'_, T>) -> Vec<usize> {
        predict_argmax(&self.hyperplanes(), x)
    }

    pub fn accuracy(&self, x: ArrayView2<'_, T>, labels: &[usize]) -> f64 {
        multiclass_accuracy(&self.hyperplanes(), x, labels)
    }
}

pub fn stack_normals<T: Scalar>(planes: &[Hyperplane<T>]) -> Array2<T> {
    let d = planes.first().map_or(0, |p| p.w.len());
    let mut out = Array2::zeros((planes.len(), d));
    for (mut row, p) in out.rows_mut().into_iter().zip(planes) {
        row.assign(&p.w);
    }
    out
}

fn argmax<T: Scalar>(it: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in it.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Margin-argmax labels of a one-vs-rest family.
pub fn predict_argmax<T: Scalar>(planes: &[Hyperplane<T>], x: ArrayView2<'_, T>) -> Vec<usize> {
    let margins: Vec<Array1<T>> = planes.iter().map(|p| p.decisions(x)).collect();
    (0..x.nrows())
        .map(|i| argmax(margins.iter().map(|m| m[i])))
        .collect()
}

pub fn multiclass_accuracy<T: Scalar>(planes: &[Hyperplane<T>], x: ArrayView2<'_, T>, labels: &[usize]) -> f64 {
    let pred = predict_argmax(planes, x);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![false; n];
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { sep } else { -sep };
            x[[i, 0]] = c + rng.sample::<f64, _>(StandardNormal);
            x[[i, 1]] = rng.sample::<f64, _>(StandardNormal);
            y[i] = pos;
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let (x, y) = blobs(200, 8.0, 1);
        let d = fit_decoder(x.view(), &y, &CvConfig::default()).unwrap();
        assert_eq!(d.cv_accuracy, 1.0);
        assert_eq!(d.accuracy(x.view(), &y), 1.0);
    }

    #[test]
    fn xor_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![false; n];
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y[i] = (a > 0.0) ^ (b > 0.0);
        }
        let d = fit_decoder(x.view(), &y, &CvConfig::default()).unwrap();
        assert!((d.cv_accuracy - 0.5).abs() <= 0.1, "{}", d.cv_accuracy);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::<f64>::zeros((50, 2));
        assert!(fit_decoder(x.view(), &vec![true; 50], &CvConfig::default()).is_err());
    }

    #[test]
    fn raw_hyperplane_matches_standardized_rule() {
        let (x, y) = blobs(100, 1.0, 4);
        let x = x.mapv(|v| 3.0 * v + 7.0);
        let d = fit_decoder(x.view(), &y, &CvConfig::default()).unwrap();
        let h = d.hyperplane();
        for row in x.rows() {
            assert!((d.decision(row) - h.decision(row)).abs() < 1e-10);
        }
    }

    #[test]
    fn set_multiclass_on_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centers = [[4.0, 0.0], [0.0, 4.0], [-4.0, 0.0], [0.0, -4.0]];
        let n = 400;
        let mut x = Array2::zeros((n, 2));
        let mut labels = vec![0; n];
        for i in 0..n {
            let v = i % 4;
            labels[i] = v;
            x[[i, 0]] = centers[v][0] + 0.5 * rng.sample::<f64, _>(StandardNormal);
            x[[i, 1]] = centers[v][1] + 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        let set = DecoderSet::fit(x.view(), &labels, 4, &CvConfig::default()).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.cv_accuracy > 0.99);
        assert!(set.accuracy(x.view(), &labels) > 0.99);
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let f = stratified_folds(&labels, 10);
        for fold in 0..10 {
            for v in 0..4 {
                let c = (0..100).filter(|&i| f[i] == fold && labels[i] == v).count();
                assert!((2..=3).contains(&c));
            }
        }
    }
}
