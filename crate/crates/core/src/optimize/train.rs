//! Training loop over a task diet and split-wise evaluation.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, cross_entropy, lr_schedule, AdamWConfig, OptimizerState};
use crate::error::{domain_err, Error, Result};
use crate::recurrent::{parameter_count, Arch, Checkpoint, RecurrentModel, SeqInput};
use crate::stimulus::{EmbeddingCache, Split};
use crate::task::{generate_trial, Diet, MatchBalance, Response, TaskSpec, TaskSuite, Trial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub hidden: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub milestones: Vec<u64>,
    pub decay_gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop once the mean batch accuracy over `window` iterations reaches this.
    pub early_stop: Option<f64>,
    pub window: usize,
    /// Keep a snapshot every this many iterations (restored on divergence).
    pub checkpoint_every: u64,
    pub balance: MatchBalance,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gru,
            hidden: 128,
            lr0: 1e-3,
            batch_size: 64,
            max_iters: 20_000,
            milestones: vec![8_000, 14_000],
            decay_gamma: 0.1,
            weight_decay: 0.01,
            seed: 0,
            early_stop: Some(0.95),
            window: 100,
            checkpoint_every: 500,
            balance: MatchBalance::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.batch_size == 0 || self.window == 0 || self.max_iters == 0 {
            return Err(Error::Config("batch_size, window and max_iters must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(0.0..=1.0).contains(&self.decay_gamma) {
            return Err(Error::Config("lr0 must be positive and decay_gamma in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Training trajectory and final state.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RecurrentModel<f32>,
    pub optimizer: OptimizerState<f32>,
    pub iterations: u64,
    pub loss_curve: Vec<f32>,
    pub accuracy_curve: Vec<f32>,
    pub stopped_early: bool,
    /// Iteration with a non-finite loss or update; the model is then the
    /// last snapshot taken before it.
    pub diverged_at: Option<u64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64, meta: serde_json::Value) -> Checkpoint<f32> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            seed,
            iteration: self.iterations,
            meta,
        }
    }
}

/// Independent per-iteration batch stream, so a resumed run sees the same
/// batches as an uninterrupted one.
fn batch_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter + 1);
    rng
}

pub fn sample_trials<R: Rng + ?Sized>(
    diet: &Diet,
    n: usize,
    cache: &EmbeddingCache,
    split: Split,
    balance: MatchBalance,
    rng: &mut R,
) -> Vec<Trial> {
    (0..n)
        .map(|_| {
            let task = diet.sample_task(rng);
            generate_trial(task, rng, cache.canvas(), split, balance)
        })
        .collect()
}

fn argmax3(row: ndarray::ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Loss and logit gradients for a batch; the loss is the mean over steps of
/// the per-step mean cross-entropy.
fn batch_loss(logits: &[Array2<f32>], trials: &[Trial]) -> (f32, Vec<Array2<f32>>, usize) {
    let steps = logits.len() as f32;
    let mut total = 0.0;
    let mut correct = 0;
    let mut grads = Vec::with_capacity(logits.len());
    for (t, l) in logits.iter().enumerate() {
        let resp: Vec<Response> = trials.iter().map(|tr| tr.responses[t]).collect();
        let (v, mut g) = cross_entropy(l.view(), &resp);
        total += v;
        g.mapv_inplace(|x| x / steps);
        grads.push(g);
        correct += l.rows().into_iter().zip(&resp).filter(|(r, y)| argmax3(*r) == y.class()).count();
    }
    (total / steps, grads, correct)
}

/// Train a fresh model from `cfg.seed`.
pub fn train(diet: &Diet, cache: &mut EmbeddingCache, suite: &TaskSuite, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !cache.frontend().frozen {
        return domain_err!("frontend must be frozen before training");
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = RecurrentModel::<f32>::init(cfg.arch, cfg.hidden, cache.out_dim(), suite.index_bits(), &mut init_rng)?;
    let opt = OptimizerState::for_params(&model.params.slices());
    resume(model, opt, 0, diet, cache, suite, cfg)
}

/// Continue training from `start_iter` with the given optimizer state.
pub fn resume(
    mut model: RecurrentModel<f32>,
    mut opt: OptimizerState<f32>,
    start_iter: u64,
    diet: &Diet,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let adam = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let mut loss_curve = Vec::new();
    let mut accuracy_curve = Vec::new();
    let mut window: VecDeque<f32> = VecDeque::with_capacity(cfg.window);
    let mut snapshot = (model.clone(), opt.clone());
    let mut snapshot_iter = start_iter;
    let mut iter = start_iter;
    let mut stopped_early = false;
    while iter < cfg.max_iters {
        let mut rng = batch_rng(cfg.seed, iter);
        let trials = sample_trials(diet, cfg.batch_size, cache, Split::Train, cfg.balance, &mut rng);
        for t in &trials {
            cache.ensure_all(t.stimuli.iter())?;
        }
        let input = SeqInput::from_trials(&trials, cache, suite)?;
        let pass = model.forward(&input)?;
        let (loss, dlogits, correct) = batch_loss(&pass.logits, &trials);
        let grads = model.backward(&pass, &input, &dlogits)?;
        let lr = lr_schedule(iter, cfg.lr0, cfg.decay_gamma, &cfg.milestones);
        let stepped = loss.is_finite() && {
            let g = grads.slices();
            let mut p = model.params.slices_mut();
            adamw_step(&mut p, &g, &mut opt, lr, &adam).is_ok()
        };
        if !stepped {
            // Roll back to the last snapshot and report where it came from.
            let (m, o) = snapshot;
            return Ok(TrainOutcome {
                model: m,
                iterations: snapshot_iter,
                optimizer: o,
                loss_curve,
                accuracy_curve,
                stopped_early: false,
                diverged_at: Some(iter),
            });
        }
        let acc = correct as f32 / (trials.len() * input.steps()) as f32;
        loss_curve.push(loss);
        accuracy_curve.push(acc);
        if window.len() == cfg.window {
            window.pop_front();
        }
        window.push_back(acc);
        iter += 1;
        if iter % cfg.checkpoint_every.max(1) == 0 {
            snapshot = (model.clone(), opt.clone());
            snapshot_iter = iter;
        }
        if let Some(target) = cfg.early_stop {
            if window.len() == cfg.window && window.iter().sum::<f32>() / cfg.window as f32 >= target as f32 {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        iterations: iter,
        loss_curve,
        accuracy_curve,
        stopped_early,
        diverged_at: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    /// Step-level accuracy over all steps.
    pub accuracy: f64,
    /// Accuracy on executive (match/non-match) steps only.
    pub executive_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub split: Split,
    pub accuracy: f64,
    pub executive_accuracy: f64,
    pub per_task: Vec<TaskAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub splits: Vec<SplitEval>,
    pub loss_curve: Vec<f32>,
}

impl EvalReport {
    pub fn accuracy(&self, split: Split) -> Option<f64> {
        self.splits.iter().find(|s| s.split == split).map(|s| s.accuracy)
    }
}

/// Step-level accuracy of `model` on `n_per_task` fresh trials of each task.
pub fn evaluate<R: Rng + ?Sized>(
    model: &RecurrentModel<f32>,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    tasks: &[TaskSpec],
    split: Split,
    n_per_task: usize,
    rng: &mut R,
) -> Result<SplitEval> {
    if tasks.is_empty() || n_per_task == 0 {
        return domain_err!("evaluation needs tasks and trials");
    }
    let canvas = cache.canvas().clone();
    let mut per_task = Vec::new();
    let (mut all_c, mut all_n, mut ex_c, mut ex_n) = (0usize, 0usize, 0usize, 0usize);
    for &task in tasks {
        let trials: Vec<Trial> = (0..n_per_task)
            .map(|_| generate_trial(task, rng, &canvas, split, MatchBalance::default()))
            .collect();
        for t in &trials {
            cache.ensure_all(t.stimuli.iter())?;
        }
        let (mut c, mut n, mut ec, mut en) = (0usize, 0usize, 0usize, 0usize);
        for chunk in trials.chunks(256) {
            let input = SeqInput::from_trials(chunk, cache, suite)?;
            let pass = model.forward(&input)?;
            for (t, l) in pass.logits.iter().enumerate() {
                for (row, tr) in l.rows().into_iter().zip(chunk) {
                    let ok = argmax3(row) == tr.responses[t].class();
                    c += ok as usize;
                    n += 1;
                    if task.is_executive(t) {
                        ec += ok as usize;
                        en += 1;
                    }
                }
            }
        }
        per_task.push(TaskAccuracy {
            task: task.name(),
            accuracy: c as f64 / n as f64,
            executive_accuracy: ec as f64 / en.max(1) as f64,
        });
        all_c += c;
        all_n += n;
        ex_c += ec;
        ex_n += en;
    }
    Ok(SplitEval {
        split,
        accuracy: all_c as f64 / all_n as f64,
        executive_accuracy: ex_c as f64 / ex_n.max(1) as f64,
        per_task,
    })
}

/// Evaluate on all three splits.
pub fn evaluate_all(
    model: &RecurrentModel<f32>,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    tasks: &[TaskSpec],
    n_per_task: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = Split::ALL
        .iter()
        .map(|&s| evaluate(model, cache, suite, tasks, s, n_per_task, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { splits, loss_curve: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: Arch,
    pub hidden: usize,
    pub parameters: usize,
    pub iterations: u64,
    pub train: f64,
    pub novel_angle: f64,
    pub novel_identity: f64,
}

/// Train every (arch, hidden) pair on `diet` and evaluate on all splits.
pub fn size_sweep(
    archs: &[Arch],
    sizes: &[usize],
    diet: &Diet,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    base: &TrainConfig,
    n_eval: usize,
) -> Result<Vec<SweepRow>> {
    if sizes.len() < 2 {
        return Err(Error::Config("size sweep needs at least two hidden sizes".into()));
    }
    let mut rows = Vec::new();
    for &arch in archs {
        for &hidden in sizes {
            let cfg = TrainConfig { arch, hidden, ..base.clone() };
            let out = train(diet, cache, suite, &cfg)?;
            let rep = evaluate_all(&out.model, cache, suite, &diet.tasks, n_eval, cfg.seed.wrapping_add(1))?;
            rows.push(SweepRow {
                arch,
                hidden,
                parameters: parameter_count(arch, hidden, cache.out_dim(), suite.index_bits()),
                iterations: out.iterations,
                train: rep.accuracy(Split::Train).unwrap_or(0.0),
                novel_angle: rep.accuracy(Split::NovelAngle).unwrap_or(0.0),
                novel_identity: rep.accuracy(Split::NovelIdentity).unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}
