//! Decoding analyses over activation banks.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CvConfig, DecoderMeta, DecoderSet};
use crate::error::{domain_err, Result};
use crate::task::{Feature, TaskSpec};
use crate::trace::{ActivationBank, SpaceKind, SpaceQuery};

/// Fit the one-vs-rest decoder family for `query` on `bank`.
pub fn fit_set(bank: &ActivationBank, query: &SpaceQuery, cfg: &CvConfig) -> Result<DecoderSet<f64>> {
    let (x, y) = bank.slice::<f64>(query)?;
    let n_values = query.feature.cardinality(&bank.canvas);
    let set = DecoderSet::fit(x.view(), &y, n_values, cfg)?;
    Ok(set.with_meta(DecoderMeta {
        feature: Some(query.feature),
        space: Some(*query),
        task: query.task,
    }))
}

/// Multi-class accuracy of `set` on the rows selected by `query`.
pub fn evaluate_set(set: &DecoderSet<f64>, bank: &ActivationBank, query: &SpaceQuery) -> Result<f64> {
    let (x, y) = bank.slice::<f64>(query)?;
    if x.ncols() != set.decoders[0].w.len() {
        return domain_err!("decoders expect dimension {}, slice has {}", set.decoders[0].w.len(), x.ncols());
    }
    Ok(set.accuracy(x.view(), &y))
}

/// Accuracy matrix over conditions; the diagonal holds cross-validated
/// accuracies of decoders fitted on that condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Array2<f64>,
}

impl GeneralizationMatrix {
    /// Mean of the diagonal.
    pub fn within(&self) -> f64 {
        let n = self.values.nrows().min(self.values.ncols());
        (0..n).map(|i| self.values[[i, i]]).sum::<f64>() / n.max(1) as f64
    }

    /// Mean of the off-diagonal entries.
    pub fn cross(&self) -> f64 {
        let mut s = 0.0;
        let mut k = 0;
        for ((i, j), &v) in self.values.indexed_iter() {
            if i != j {
                s += v;
                k += 1;
            }
        }
        s / k.max(1) as f64
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["fit\\test".to_string()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let cols: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                vals.push(v.parse::<f64>().map_err(|e| crate::Error::Config(format!("bad matrix value `{v}`: {e}")))?);
            }
        }
        let values = Array2::from_shape_vec((rows.len(), cols.len()), vals)
            .map_err(|_| crate::Error::integrity(path, "ragged matrix"))?;
        Ok(Self { rows, cols, values })
    }
}

/// Per-feature multi-class accuracy at one space, with task relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRow {
    pub diet: String,
    pub feature: Feature,
    pub relevant: bool,
    pub accuracy: f64,
}

/// Cross-validated decodability of every feature from `E_t` for each bank.
/// A feature is task-relevant if some trial in the bank is a task on it.
pub fn task_relevance_table(banks: &[(String, &ActivationBank)], timestep: usize, cfg: &CvConfig) -> Result<Vec<RelevanceRow>> {
    let mut out = Vec::new();
    for (diet, bank) in banks {
        let tasks = bank.tasks();
        for f in Feature::ALL {
            let set = fit_set(bank, &SpaceQuery::new(SpaceKind::Encoding(timestep), f), cfg)?;
            out.push(RelevanceRow {
                diet: diet.clone(),
                feature: f,
                relevant: tasks.iter().any(|t| t.feature == f),
                accuracy: set.cv_accuracy,
            });
        }
    }
    Ok(out)
}

/// Fit on each task's rows of `kind` and test on every other task's rows.
pub fn cross_task_matrix(
    bank: &ActivationBank,
    tasks: &[TaskSpec],
    feature: Feature,
    kind: SpaceKind,
    cfg: &CvConfig,
) -> Result<GeneralizationMatrix> {
    let n = tasks.len();
    if n == 0 {
        return domain_err!("cross-task matrix needs tasks");
    }
    let slices = tasks
        .iter()
        .map(|&t| bank.slice::<f64>(&SpaceQuery::new(kind, feature).for_task(t)))
        .collect::<Result<Vec<_>>>()?;
    let n_values = feature.cardinality(&bank.canvas);
    let mut values = Array2::zeros((n, n));
    for a in 0..n {
        let q = SpaceQuery::new(kind, feature).for_task(tasks[a]);
        let set = DecoderSet::fit(slices[a].0.view(), &slices[a].1, n_values, cfg)?.with_meta(DecoderMeta {
            feature: Some(feature),
            space: Some(q),
            task: Some(tasks[a]),
        });
        for b in 0..n {
            values[[a, b]] = if a == b { set.cv_accuracy } else { set.accuracy(slices[b].0.view(), &slices[b].1) };
        }
    }
    let names: Vec<String> = tasks.iter().map(TaskSpec::name).collect();
    Ok(GeneralizationMatrix { rows: names.clone(), cols: names, values })
}

/// Validation minus generalization per fitting task: for task `a`, the mean
/// over decoded features of `M_f(a, a) − mean_{b ≠ a} M_f(a, b)`.
pub fn cross_task_gap(tasks: &[TaskSpec], per_feature: &[GeneralizationMatrix]) -> Result<Vec<f64>> {
    if per_feature.is_empty() {
        return domain_err!("no matrices");
    }
    let mut out = Vec::with_capacity(tasks.len());
    for (a, ta) in tasks.iter().enumerate() {
        let others: Vec<usize> = (0..tasks.len()).filter(|&b| b != a).collect();
        if others.is_empty() {
            return domain_err!("task {} has no other task to compare with", ta.name());
        }
        let mut g = 0.0;
        for m in per_feature {
            let cross = others.iter().map(|&b| m.values[[a, b]]).sum::<f64>() / others.len() as f64;
            g += m.values[[a, a]] - cross;
        }
        out.push(g / per_feature.len() as f64);
    }
    Ok(out)
}

/// Generalization of `E_i` decoders to later steps of the same trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTime {
    pub feature: Feature,
    pub task: Option<TaskSpec>,
    pub source: usize,
    pub validation: f64,
    /// `(t, accuracy, executive)` for `t ≥ source`.
    pub targets: Vec<(usize, f64, bool)>,
}

impl CrossTime {
    fn mean_where(&self, exec: bool) -> Option<f64> {
        let v: Vec<f64> = self.targets.iter().filter(|(t, _, e)| *t > self.source && *e == exec).map(|x| x.1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn executive_mean(&self) -> Option<f64> {
        self.mean_where(true)
    }

    pub fn non_executive_mean(&self) -> Option<f64> {
        self.mean_where(false)
    }
}

/// Fit on `E_source` and evaluate on `M_(source, t)` for every later `t`.
/// The recall step of stimulus `source` is `source + n_back` when the bank
/// rows are restricted to one task.
pub fn cross_time_matrix(
    bank: &ActivationBank,
    feature: Feature,
    source: usize,
    task: Option<TaskSpec>,
    cfg: &CvConfig,
) -> Result<CrossTime> {
    let mut q = SpaceQuery::new(SpaceKind::Encoding(source), feature);
    q.task = task;
    let set = fit_set(bank, &q, cfg)?;
    let mut targets = vec![(source, set.cv_accuracy, false)];
    for t in source + 1..bank.steps() {
        let mut mq = SpaceQuery::new(SpaceKind::Memory { stimulus: source, t }, feature);
        mq.task = task;
        let acc = evaluate_set(&set, bank, &mq)?;
        let exec = task.is_some_and(|tk| t == source + tk.n_back);
        targets.push((t, acc, exec));
    }
    Ok(CrossTime { feature, task, source, validation: set.cv_accuracy, targets })
}

/// Within-`E_i` validation accuracies and the `E_i → E_j` generalization
/// matrix (diagonal equals validation).
pub fn cross_stimulus_encoding(
    bank: &ActivationBank,
    feature: Feature,
    task: Option<TaskSpec>,
    cfg: &CvConfig,
) -> Result<GeneralizationMatrix> {
    let steps = bank.steps();
    if steps < 2 {
        return domain_err!("cross-stimulus analysis needs at least two steps");
    }
    let mut values = Array2::zeros((steps, steps));
    for i in 0..steps {
        let mut q = SpaceQuery::new(SpaceKind::Encoding(i), feature);
        q.task = task;
        let set = fit_set(bank, &q, cfg)?;
        for j in 0..steps {
            values[[i, j]] = if i == j {
                set.cv_accuracy
            } else {
                let mut qj = SpaceQuery::new(SpaceKind::Encoding(j), feature);
                qj.task = task;
                evaluate_set(&set, bank, &qj)?
            };
        }
    }
    let names: Vec<String> = (0..steps).map(|i| format!("E{i}")).collect();
    Ok(GeneralizationMatrix { rows: names.clone(), cols: names, values })
}
