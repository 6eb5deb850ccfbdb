//! The analysis battery run on one recorded model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{
    cross_stimulus_encoding, cross_task_gap, cross_task_matrix, cross_time_matrix, fit_set, task_relevance_table, CrossTime,
    CvConfig, DecoderSet, GeneralizationMatrix, RelevanceRow,
};
use crate::error::{Error, Result};
use crate::geometry::{
    causal_perturb, compare_ortho, magnitude_grid, ortho_index_refit, pca_equalize, swap_test, BiasSource, OrthoComparison,
    OrthoIndex, PerturbationCurve, SwapReport,
};
use crate::recurrent::RecurrentModel;
use crate::stimulus::EmbeddingCache;
use crate::task::{Feature, Response, TaskSpec, TaskSuite};
use crate::trace::{ActivationBank, SpaceKind, SpaceQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub cv: CvConfig,
    pub relevance: bool,
    pub cross_task: bool,
    pub cross_time: bool,
    pub cross_stimulus: bool,
    pub ortho: bool,
    pub swap: bool,
    pub causal: bool,
    pub bootstrap: usize,
    /// Common dimension for the PCA-equalized comparison; 0 disables it.
    pub pca_dim: usize,
    pub swap_shift: usize,
    pub bias: BiasSource,
    pub causal_points: usize,
    /// Largest magnitude in units of the mean state norm at step 0.
    pub causal_extent: f64,
    pub causal_feature: Feature,
    pub causal_value: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cv: CvConfig::default(),
            relevance: true,
            cross_task: true,
            cross_time: true,
            cross_stimulus: true,
            ortho: true,
            swap: true,
            causal: true,
            bootstrap: 10,
            pca_dim: 32,
            swap_shift: 1,
            bias: BiasSource::Source,
            causal_points: 13,
            causal_extent: 3.0,
            causal_feature: Feature::Location,
            causal_value: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature: Feature,
    pub matrix: GeneralizationMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGap {
    pub task: String,
    pub gap: f64,
}

/// Perceptual vs encoding orthogonalization; values and bootstrap samples
/// average the per-feature indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoResult {
    pub perceptual: OrthoIndex,
    pub encoding: OrthoIndex,
    pub comparison: Option<OrthoComparison>,
    pub pca_perceptual: Option<OrthoIndex>,
    pub pca_encoding: Option<OrthoIndex>,
    pub pca_comparison: Option<OrthoComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelAnalysis {
    pub model: String,
    pub relevance: Vec<RelevanceRow>,
    pub cross_task: Vec<FeatureMatrix>,
    pub cross_task_gap: Vec<TaskGap>,
    pub cross_time: Vec<CrossTime>,
    pub cross_stimulus: Vec<FeatureMatrix>,
    pub ortho: Option<OrthoResult>,
    pub swaps: Vec<SwapReport>,
    pub causal: Option<PerturbationCurve>,
    /// Conditions left out because the bank is too small for them.
    pub skipped: Vec<String>,
}

/// Domain errors (too few samples for a condition) skip the condition and
/// note it; anything else aborts.
fn soft<T>(r: Result<T>, what: String, skipped: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Domain(msg)) => {
            skipped.push(format!("{what}: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn mean_index(parts: &[OrthoIndex], space: &str) -> OrthoIndex {
    let k = parts.len() as f64;
    let n = parts.iter().map(|p| p.samples.len()).min().unwrap_or(0);
    OrthoIndex {
        value: parts.iter().map(|p| p.value).sum::<f64>() / k,
        samples: (0..n).map(|b| parts.iter().map(|p| p.samples[b]).sum::<f64>() / k).collect(),
        space: space.to_string(),
    }
}

fn ortho_of(x: &ndarray::Array2<f64>, y: &[usize], n_values: usize, cfg: &AnalysisConfig, rng: &mut ChaCha8Rng, space: &str) -> Result<OrthoIndex> {
    let set = DecoderSet::fit(x.view(), y, n_values, &cfg.cv)?;
    ortho_index_refit(&set, x.view(), y, cfg.bootstrap, &cfg.cv.solver, rng, space)
}

fn ortho_battery(bank: &ActivationBank, cfg: &AnalysisConfig, rng: &mut ChaCha8Rng) -> Result<OrthoResult> {
    let (mut per, mut enc, mut pper, mut penc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for f in Feature::ALL {
        let n_values = f.cardinality(&bank.canvas);
        let (xp, yp) = bank.slice::<f64>(&SpaceQuery::new(SpaceKind::PerceptualAt(0), f))?;
        let (xe, ye) = bank.slice::<f64>(&SpaceQuery::new(SpaceKind::Encoding(0), f))?;
        per.push(ortho_of(&xp, &yp, n_values, cfg, rng, "perceptual")?);
        enc.push(ortho_of(&xe, &ye, n_values, cfg, rng, "encoding")?);
        if cfg.pca_dim > 0 {
            let (pp, pe) = pca_equalize(xp.view(), xe.view(), cfg.pca_dim)?;
            pper.push(ortho_of(&pp, &yp, n_values, cfg, rng, "perceptual_pca")?);
            penc.push(ortho_of(&pe, &ye, n_values, cfg, rng, "encoding_pca")?);
        }
    }
    let perceptual = mean_index(&per, "perceptual");
    let encoding = mean_index(&enc, "encoding");
    let comparison = compare_ortho(&perceptual.samples, &encoding.samples).ok();
    let (pca_perceptual, pca_encoding, pca_comparison) = if cfg.pca_dim > 0 {
        let a = mean_index(&pper, "perceptual_pca");
        let b = mean_index(&penc, "encoding_pca");
        let c = compare_ortho(&a.samples, &b.samples).ok();
        (Some(a), Some(b), c)
    } else {
        (None, None, None)
    };
    Ok(OrthoResult { perceptual, encoding, comparison, pca_perceptual, pca_encoding, pca_comparison })
}

fn causal_battery(
    model: &RecurrentModel<f32>,
    cache: &EmbeddingCache,
    suite: &TaskSuite,
    bank: &ActivationBank,
    cfg: &AnalysisConfig,
) -> Result<Option<PerturbationCurve>> {
    let task = TaskSpec::new(cfg.causal_feature, 1);
    let matched: Vec<usize> = (0..bank.n_trials())
        .filter(|&k| bank.trials[k].task == task && bank.trials[k].responses[1] == Response::Match)
        .collect();
    if matched.is_empty() {
        return Ok(None);
    }
    let sub = bank.subset(&matched);
    let set = fit_set(&sub, &SpaceQuery::new(SpaceKind::Encoding(0), cfg.causal_feature), &cfg.cv)?;
    let Some(dec) = set.decoders.iter().find(|d| d.value == cfg.causal_value) else {
        return Ok(None);
    };
    let trials: Vec<_> = sub
        .trials
        .iter()
        .filter(|t| cfg.causal_feature.label(&t.stimuli[0], &bank.canvas) == cfg.causal_value)
        .cloned()
        .collect();
    let scale = sub.mean_state_norm(0);
    let mags: Vec<f64> = magnitude_grid(cfg.causal_points, cfg.causal_extent).iter().map(|m| m * scale).collect();
    causal_perturb(model, cache, suite, &dec.hyperplane(), &trials, &mags).map(Some)
}

/// Run every enabled analysis on `bank`.
pub fn analyze(
    name: &str,
    model: &RecurrentModel<f32>,
    cache: &EmbeddingCache,
    suite: &TaskSuite,
    bank: &ActivationBank,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<ModelAnalysis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = bank.tasks();
    let mut out = ModelAnalysis { model: name.to_string(), ..Default::default() };
    if cfg.relevance {
        out.relevance = task_relevance_table(&[(name.to_string(), bank)], 0, &cfg.cv)?;
    }
    let distinct_features = {
        let mut f: Vec<Feature> = tasks.iter().map(|t| t.feature).collect();
        f.sort();
        f.dedup();
        f.len()
    };
    if cfg.cross_task && distinct_features > 1 {
        for f in Feature::ALL {
            let r = cross_task_matrix(bank, &tasks, f, SpaceKind::Encoding(0), &cfg.cv);
            if let Some(m) = soft(r, format!("cross-task {}", f.short()), &mut out.skipped)? {
                out.cross_task.push(FeatureMatrix { feature: f, matrix: m });
            }
        }
    }
    if out.cross_task.len() == Feature::ALL.len() {
        let mats: Vec<GeneralizationMatrix> = out.cross_task.iter().map(|m| m.matrix.clone()).collect();
        out.cross_task_gap = cross_task_gap(&tasks, &mats)?
            .into_iter()
            .zip(&tasks)
            .map(|(gap, t)| TaskGap { task: t.name(), gap })
            .collect();
    }
    if cfg.cross_time {
        for &task in &tasks {
            for f in Feature::ALL {
                for i in 0..bank.steps() - 1 {
                    let r = cross_time_matrix(bank, f, i, Some(task), &cfg.cv);
                    if let Some(ct) = soft(r, format!("cross-time {task} {} from {i}", f.short()), &mut out.skipped)? {
                        out.cross_time.push(ct);
                    }
                }
            }
        }
    }
    if cfg.cross_stimulus {
        for f in Feature::ALL {
            let r = cross_stimulus_encoding(bank, f, None, &cfg.cv);
            if let Some(m) = soft(r, format!("cross-stimulus {}", f.short()), &mut out.skipped)? {
                out.cross_stimulus.push(FeatureMatrix { feature: f, matrix: m });
            }
        }
    }
    if cfg.ortho {
        out.ortho = soft(ortho_battery(bank, cfg, &mut rng), "ortho".into(), &mut out.skipped)?;
    }
    if cfg.swap {
        for &task in tasks.iter().filter(|t| t.n_back >= 2) {
            let r = swap_test(bank, task.feature, task, cfg.swap_shift, cfg.bias, &cfg.cv);
            if let Some(sw) = soft(r, format!("swap {task}"), &mut out.skipped)? {
                out.swaps.push(sw);
            }
        }
    }
    if cfg.causal {
        out.causal = soft(causal_battery(model, cache, suite, bank, cfg), "causal".into(), &mut out.skipped)?.flatten();
    }
    Ok(out)
}
