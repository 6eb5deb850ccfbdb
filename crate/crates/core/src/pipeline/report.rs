//! CSV tables, SVG plots and a JSON summary for a set of analyzed models.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::analysis::ModelAnalysis;
use super::svg;
use crate::error::{Error, Result};
use crate::optimize::EvalReport;
use crate::stimulus::GateReport;

/// Files written by [`emit_report`]; paths are relative to the bundle root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportBundle {
    #[serde(skip)]
    pub root: PathBuf,
    pub tables: Vec<String>,
    pub plots: Vec<String>,
    /// Analyses with no input, listed rather than fabricated.
    pub absent: Vec<String>,
    pub summary: String,
}

struct Writer {
    root: PathBuf,
    bundle: ReportBundle,
}

impl Writer {
    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.root.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.bundle.tables.push(name.to_string());
        Ok(())
    }

    fn plot(&mut self, name: &str, body: String) -> Result<()> {
        fs::write(self.root.join(name), body)?;
        self.bundle.plots.push(name.to_string());
        Ok(())
    }

    fn absent(&mut self, what: &str) {
        self.bundle.absent.push(what.to_string());
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn gate_section(w: &mut Writer, gate: &GateReport) -> Result<()> {
    let vals = [gate.category, gate.identity, gate.location];
    let names = ["category", "identity", "location"];
    let rows: Vec<Vec<String>> = names.iter().zip(vals).map(|(n, v)| vec![n.to_string(), f(v), f(gate.threshold)]).collect();
    w.table("gate.csv", &["attribute", "accuracy", "threshold"], &rows)?;
    let groups: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let values: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
    w.plot("gate.svg", svg::bars("Perceptual decodability", &groups, &["accuracy".into()], &values, 1.0))
}

fn accuracy_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let mut rows = Vec::new();
    let mut splits: Vec<String> = Vec::new();
    for (_, e, _) in models {
        for s in &e.splits {
            if !splits.contains(&s.split.name().to_string()) {
                splits.push(s.split.name().to_string());
            }
        }
    }
    if splits.is_empty() {
        w.absent("accuracy");
        return Ok(());
    }
    let mut values = Vec::new();
    for (name, e, _) in models {
        let mut row_vals = Vec::new();
        for sname in &splits {
            let s = e.splits.iter().find(|s| s.split.name() == sname);
            let acc = s.map(|s| s.accuracy).unwrap_or(f64::NAN);
            row_vals.push(acc);
            if let Some(s) = s {
                rows.push(vec![name.clone(), sname.clone(), "all".into(), f(s.accuracy), f(s.executive_accuracy)]);
                for t in &s.per_task {
                    rows.push(vec![name.clone(), sname.clone(), t.task.clone(), f(t.accuracy), f(t.executive_accuracy)]);
                }
            }
        }
        values.push(row_vals);
    }
    w.table("accuracy.csv", &["model", "split", "task", "accuracy", "executive_accuracy"], &rows)?;
    let groups: Vec<String> = models.iter().map(|m| m.0.clone()).collect();
    w.plot("accuracy.svg", svg::bars("Step accuracy by split", &groups, &splits, &values, 1.0))
}

fn relevance_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let rows: Vec<Vec<String>> = models
        .iter()
        .flat_map(|(name, _, a)| {
            a.relevance.iter().map(move |r| vec![name.clone(), r.diet.clone(), r.feature.short().into(), r.relevant.to_string(), f(r.accuracy)])
        })
        .collect();
    if rows.is_empty() {
        w.absent("relevance");
        return Ok(());
    }
    w.table("relevance.csv", &["model", "diet", "feature", "relevant", "accuracy"], &rows)?;
    let groups: Vec<String> = models.iter().filter(|m| !m.2.relevance.is_empty()).map(|m| m.0.clone()).collect();
    let series: Vec<String> = ["C", "I", "L"].iter().map(|s| s.to_string()).collect();
    let values: Vec<Vec<f64>> = models
        .iter()
        .filter(|m| !m.2.relevance.is_empty())
        .map(|m| series.iter().map(|s| m.2.relevance.iter().find(|r| r.feature.short() == s).map(|r| r.accuracy).unwrap_or(f64::NAN)).collect())
        .collect();
    w.plot("relevance.svg", svg::bars("Feature decoding at encoding", &groups, &series, &values, 1.0))
}

fn matrix_rows(model: &str, kind: &str, feature: &str, m: &crate::decode::GeneralizationMatrix) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (i, r) in m.rows.iter().enumerate() {
        for (j, c) in m.cols.iter().enumerate() {
            rows.push(vec![model.into(), kind.into(), feature.into(), r.clone(), c.clone(), f(m.values[[i, j]])]);
        }
    }
    rows
}

fn matrix_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let mut rows = Vec::new();
    for (name, _, a) in models {
        for (kind, mats) in [("cross_task", &a.cross_task), ("cross_stimulus", &a.cross_stimulus)] {
            for fm in mats {
                let feat = fm.feature.short();
                rows.extend(matrix_rows(name, kind, feat, &fm.matrix));
                w.plot(
                    &format!("{kind}-{name}-{feat}.svg"),
                    svg::heatmap(&format!("{kind} {name} {feat}"), &fm.matrix.rows, &fm.matrix.cols, &fm.matrix.values),
                )?;
            }
        }
    }
    if rows.is_empty() {
        w.absent("generalization matrices");
    } else {
        w.table("generalization.csv", &["model", "kind", "feature", "train", "test", "accuracy"], &rows)?;
    }
    let gaps: Vec<Vec<String>> = models
        .iter()
        .flat_map(|(name, _, a)| a.cross_task_gap.iter().map(move |g| vec![name.clone(), g.task.clone(), f(g.gap)]))
        .collect();
    if gaps.is_empty() {
        w.absent("cross-task gap");
        return Ok(());
    }
    w.table("cross_task_gap.csv", &["model", "task", "gap"], &gaps)?;
    let with: Vec<&(String, EvalReport, ModelAnalysis)> = models.iter().filter(|m| !m.2.cross_task_gap.is_empty()).collect();
    let tasks: Vec<String> = with[0].2.cross_task_gap.iter().map(|g| g.task.clone()).collect();
    let series: Vec<String> = with.iter().map(|m| m.0.clone()).collect();
    let values: Vec<Vec<f64>> = tasks
        .iter()
        .map(|t| with.iter().map(|m| m.2.cross_task_gap.iter().find(|g| &g.task == t).map(|g| g.gap).unwrap_or(f64::NAN)).collect())
        .collect();
    let y_max = values.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.1, f64::max);
    w.plot("cross_task_gap.svg", svg::bars("Validation minus generalization", &tasks, &series, &values, y_max))
}

fn cross_time_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let mut rows = Vec::new();
    for (name, _, a) in models {
        for ct in &a.cross_time {
            let task = ct.task.map(|t| t.name()).unwrap_or_else(|| "all".into());
            let feat = ct.feature.short();
            rows.push(vec![name.clone(), task.clone(), feat.into(), ct.source.to_string(), ct.source.to_string(), f(ct.validation), "validation".into()]);
            for &(t, acc, exec) in &ct.targets {
                rows.push(vec![name.clone(), task.clone(), feat.into(), ct.source.to_string(), t.to_string(), f(acc), if exec { "executive" } else { "memory" }.into()]);
            }
        }
        // One plot per (model, task, feature) with a curve per source step.
        let mut keys: Vec<(String, &str)> = a.cross_time.iter().map(|c| (c.task.map(|t| t.name()).unwrap_or_else(|| "all".into()), c.feature.short())).collect();
        keys.dedup();
        for (task, feat) in keys {
            let curves: Vec<&crate::decode::CrossTime> = a
                .cross_time
                .iter()
                .filter(|c| c.feature.short() == feat && c.task.map(|t| t.name()).unwrap_or_else(|| "all".into()) == task)
                .collect();
            let Some(last) = curves.iter().flat_map(|c| c.targets.iter().map(|t| t.0)).max() else { continue };
            let x: Vec<f64> = (0..=last).map(|t| t as f64).collect();
            let mut series = Vec::new();
            let mut marks = Vec::new();
            for c in &curves {
                let ys: Vec<f64> = (0..=last)
                    .map(|t| if t == c.source { c.validation } else { c.targets.iter().find(|p| p.0 == t).map(|p| p.1).unwrap_or(f64::NAN) })
                    .collect();
                series.push((format!("source {}", c.source), ys));
                for p in c.targets.iter().filter(|p| p.2) {
                    if !marks.contains(&(p.0 as f64)) {
                        marks.push(p.0 as f64);
                    }
                }
            }
            w.plot(
                &format!("cross_time-{name}-{task}-{feat}.svg"),
                svg::lines(&format!("{name} {task} {feat}: decoders over time"), &x, &series, (0.0, 1.0), &marks),
            )?;
        }
    }
    if rows.is_empty() {
        w.absent("cross-time");
        return Ok(());
    }
    w.table("cross_time.csv", &["model", "task", "feature", "source", "target", "accuracy", "kind"], &rows)
}

fn ortho_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let with: Vec<_> = models.iter().filter_map(|m| m.2.ortho.as_ref().map(|o| (&m.0, o))).collect();
    if with.is_empty() {
        w.absent("orthogonalization");
        return Ok(());
    }
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut pca_values = Vec::new();
    for (name, o) in &with {
        let (t, p) = o.comparison.as_ref().map(|c| (Some(c.test.t), Some(c.test.p))).unwrap_or((None, None));
        rows.push(vec![(*name).clone(), "raw".into(), f(o.perceptual.value), f(o.encoding.value), opt(t), opt(p)]);
        values.push(vec![o.perceptual.value, o.encoding.value]);
        if let (Some(a), Some(b)) = (&o.pca_perceptual, &o.pca_encoding) {
            let (t, p) = o.pca_comparison.as_ref().map(|c| (Some(c.test.t), Some(c.test.p))).unwrap_or((None, None));
            rows.push(vec![(*name).clone(), "pca".into(), f(a.value), f(b.value), opt(t), opt(p)]);
            pca_values.push(vec![a.value, b.value]);
        }
    }
    w.table("ortho.csv", &["model", "variant", "perceptual", "encoding", "t", "p"], &rows)?;
    let mut samples = Vec::new();
    for (name, o) in &with {
        for idx in [Some(&o.perceptual), Some(&o.encoding), o.pca_perceptual.as_ref(), o.pca_encoding.as_ref()].into_iter().flatten() {
            for (k, s) in idx.samples.iter().enumerate() {
                samples.push(vec![(*name).clone(), idx.space.clone(), k.to_string(), f(*s)]);
            }
        }
    }
    w.table("ortho_samples.csv", &["model", "space", "sample", "value"], &samples)?;
    let groups: Vec<String> = with.iter().map(|m| m.0.clone()).collect();
    let series = vec!["perceptual".to_string(), "encoding".to_string()];
    w.plot("ortho.svg", svg::bars("Orthogonalization index", &groups, &series, &values, 1.0))?;
    if pca_values.len() == with.len() {
        w.plot("ortho_pca.svg", svg::bars("Orthogonalization index, PCA equalized", &groups, &series, &pca_values, 1.0))?;
    }
    Ok(())
}

fn swap_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    let mut values = Vec::new();
    for (name, _, a) in models {
        for s in &a.swaps {
            for r in &s.rows {
                rows.push(vec![
                    name.clone(),
                    s.task.name(),
                    r.stimulus.to_string(),
                    r.time.to_string(),
                    f(r.fitted),
                    f(r.fitted_cv),
                    f(r.baseline),
                    opt(r.time_shift),
                    opt(r.stimulus_shift),
                ]);
            }
            let fitted = s.mean_fitted().unwrap_or(f64::NAN);
            let base = s.mean_baseline().unwrap_or(f64::NAN);
            let (ts, ss) = s.paired_means().map(|(_, t, st)| (t, st)).unwrap_or((f64::NAN, f64::NAN));
            groups.push(format!("{name} {}", s.task.name()));
            values.push(vec![fitted, base, ts, ss]);
        }
    }
    if rows.is_empty() {
        w.absent("swap test");
        return Ok(());
    }
    w.table("swap.csv", &["model", "task", "stimulus", "time", "fitted", "fitted_cv", "baseline", "time_shift", "stimulus_shift"], &rows)?;
    let summary: Vec<Vec<String>> = groups.iter().zip(&values).map(|(g, v)| std::iter::once(g.clone()).chain(v.iter().map(|&x| f(x))).collect()).collect();
    w.table("swap_summary.csv", &["group", "fitted", "baseline", "time_shift", "stimulus_shift"], &summary)?;
    let series: Vec<String> = ["fitted", "baseline", "time shift", "stimulus shift"].iter().map(|s| s.to_string()).collect();
    w.plot("swap.svg", svg::bars("Reconstructed decoder accuracy", &groups, &series, &values, 1.0))
}

fn causal_section(w: &mut Writer, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<()> {
    let mut rows = Vec::new();
    for (name, _, a) in models {
        let Some(c) = &a.causal else { continue };
        for (k, m) in c.magnitudes.iter().enumerate() {
            let p = c.probabilities[k];
            let s = c.spread[k];
            rows.push(vec![name.clone(), f(*m), f(p[0]), f(p[1]), f(p[2]), f(s[0]), f(s[1]), f(s[2])]);
        }
        let series = vec![
            ("match".to_string(), c.probabilities.iter().map(|p| p[0]).collect()),
            ("non_match".to_string(), c.probabilities.iter().map(|p| p[1]).collect()),
            ("no_action".to_string(), c.probabilities.iter().map(|p| p[2]).collect()),
        ];
        w.plot(&format!("causal-{name}.svg"), svg::lines(&format!("{name}: perturbation along decoder normal"), &c.magnitudes, &series, (0.0, 1.0), &[0.0]))?;
    }
    if rows.is_empty() {
        w.absent("causal perturbation");
        return Ok(());
    }
    w.table("causal.csv", &["model", "magnitude", "match", "non_match", "no_action", "sd_match", "sd_non_match", "sd_no_action"], &rows)
}

/// Write the full bundle under `root`. An empty model list yields a summary
/// that says so and no tables.
pub fn emit_report(root: &Path, gate: &GateReport, models: &[(String, EvalReport, ModelAnalysis)]) -> Result<ReportBundle> {
    fs::create_dir_all(root)?;
    let mut w = Writer { root: root.to_path_buf(), bundle: ReportBundle { root: root.to_path_buf(), ..Default::default() } };
    gate_section(&mut w, gate)?;
    if models.is_empty() {
        w.bundle.summary = "no data".into();
        for a in ["accuracy", "relevance", "generalization matrices", "cross-task gap", "cross-time", "orthogonalization", "swap test", "causal perturbation"] {
            w.absent(a);
        }
    } else {
        accuracy_section(&mut w, models)?;
        relevance_section(&mut w, models)?;
        matrix_section(&mut w, models)?;
        cross_time_section(&mut w, models)?;
        ortho_section(&mut w, models)?;
        swap_section(&mut w, models)?;
        causal_section(&mut w, models)?;
        for (name, _, a) in models {
            for sk in &a.skipped {
                w.bundle.absent.push(format!("{name}: {sk}"));
            }
        }
        w.bundle.summary = format!("{} models, {} tables, {} plots", models.len(), w.bundle.tables.len(), w.bundle.plots.len());
    }
    let bundle = w.bundle;
    fs::write(root.join("summary.json"), serde_json::to_vec_pretty(&bundle)?)?;
    verify_report(&bundle)?;
    Ok(bundle)
}

/// Parse-back check: every number printed in a plot must appear, at the
/// printed precision, in some table of the bundle.
pub fn verify_report(bundle: &ReportBundle) -> Result<()> {
    let mut printed = std::collections::HashSet::new();
    for t in &bundle.tables {
        let mut r = csv::Reader::from_path(bundle.root.join(t))?;
        for rec in r.records() {
            for field in rec?.iter() {
                if let Ok(v) = field.parse::<f64>() {
                    printed.insert(format!("{v:.3}"));
                }
            }
        }
    }
    for p in &bundle.plots {
        let path = bundle.root.join(p);
        let body = fs::read_to_string(&path)?;
        for v in svg::parse_values(&body) {
            if !printed.contains(&format!("{v:.3}")) {
                return Err(Error::integrity(path, format!("plotted value {v:.3} has no table entry")));
            }
        }
    }
    Ok(())
}
