//! Causal perturbation along a decoder normal.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::decode::Hyperplane;
use crate::error::{domain_err, Result};
use crate::optimize::softmax_row;
use crate::recurrent::{RecurrentModel, SeqInput};
use crate::stimulus::EmbeddingCache;
use crate::task::{Trial, TaskSuite};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub magnitudes: Vec<f64>,
    /// Mean `(match, non_match, no_action)` probabilities per magnitude.
    pub probabilities: Vec<[f64; 3]>,
    /// Across-trial standard deviations of the same.
    pub spread: Vec<[f64; 3]>,
}

/// `n` points spread evenly over `[−max, max]`.
pub fn magnitude_grid(n: usize, max: f64) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n).map(|k| -max + 2.0 * max * k as f64 / (n - 1) as f64).collect()
}

/// Shift the state after the first stimulus by `−m · ŵ` (positive `m` moves
/// positive-class states toward and across the hyperplane), feed the second
/// stimulus and average the step-1 softmax.
pub fn causal_perturb(
    model: &RecurrentModel<f32>,
    cache: &EmbeddingCache,
    suite: &TaskSuite,
    plane: &Hyperplane<f64>,
    trials: &[Trial],
    magnitudes: &[f64],
) -> Result<PerturbationCurve> {
    if trials.is_empty() {
        return domain_err!("causal test needs trials");
    }
    if let Some(t) = trials.iter().find(|t| t.task.n_back != 1) {
        return domain_err!("causal test is defined for 1-back tasks, got {}", t.task);
    }
    if plane.w.len() != model.hidden {
        return domain_err!("decoder dimension {} differs from hidden size {}", plane.w.len(), model.hidden);
    }
    let norm = plane.w.dot(&plane.w).sqrt();
    if !(norm > 0.0) {
        return domain_err!("decoder normal is zero");
    }
    let unit: Array1<f32> = plane.w.mapv(|v| (v / norm) as f32);
    let short: Vec<Trial> = trials
        .iter()
        .map(|t| Trial::from_stimuli(t.stimuli[..2].to_vec(), t.task))
        .collect();
    let input = SeqInput::from_trials(&short, cache, suite)?;
    let mut probabilities = Vec::with_capacity(magnitudes.len());
    let mut spread = Vec::with_capacity(magnitudes.len());
    for &m in magnitudes {
        let delta = unit.mapv(|v| v * (-m as f32));
        let pass = model.forward_with(&input, |t, s| {
            if t == 0 && m != 0.0 {
                s.h += &delta;
            }
        })?;
        let rows: Vec<Vec<f32>> = pass.logits[1].rows().into_iter().map(|r| softmax_row(&r.to_vec())).collect();
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        for r in &rows {
            for k in 0..3 {
                mean[k] += f64::from(r[k]) / n;
            }
        }
        let mut sd = [0.0; 3];
        for r in &rows {
            for k in 0..3 {
                sd[k] += (f64::from(r[k]) - mean[k]).powi(2) / n;
            }
        }
        probabilities.push(mean);
        spread.push(sd.map(f64::sqrt));
    }
    Ok(PerturbationCurve { magnitudes: magnitudes.to_vec(), probabilities, spread })
}
