//! Activation recording and the labeled spaces analyses consume.

use std::path::Path;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{domain_err, Error, Result};
use crate::recurrent::{Arch, RecurrentModel, SeqInput};
use crate::scalar::Scalar;
use crate::stimulus::{Background, CanvasConfig, EmbeddingCache, Split, StimulusSpec};
use crate::task::{generate_trial, Feature, MatchBalance, TaskSpec, TaskSuite, Trial};

const MAGIC: &[u8; 8] = b"WMBANK01";
const RECORD_BATCH: usize = 256;

/// Which recorded rows form the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Perceptual vectors of every (trial, step), labeled by the stimulus shown.
    Perceptual,
    /// Perceptual vectors of stimulus `i` only, one row per trial.
    PerceptualAt(usize),
    /// `E_i`: state after stimulus `i`, labeled by stimulus `i`.
    Encoding(usize),
    /// `M_(i, t)`: state at step `t > i`, labeled by stimulus `i`.
    Memory { stimulus: usize, t: usize },
    /// State at step `t` labeled by the stimulus shown at `t`.
    Timestep(usize),
}

impl SpaceKind {
    /// Stimulus whose attributes label the rows, and the recorded step.
    pub fn stimulus_and_step(&self) -> Option<(usize, usize)> {
        match *self {
            SpaceKind::Perceptual | SpaceKind::PerceptualAt(_) => None,
            SpaceKind::Encoding(i) | SpaceKind::Timestep(i) => Some((i, i)),
            SpaceKind::Memory { stimulus, t } => Some((stimulus, t)),
        }
    }

    /// `encoding:0`, `memory:0:2`, `timestep:3`, `perceptual`.
    pub fn tag(&self) -> String {
        match *self {
            SpaceKind::Perceptual => "perceptual".into(),
            SpaceKind::PerceptualAt(i) => format!("perceptual:{i}"),
            SpaceKind::Encoding(i) => format!("encoding:{i}"),
            SpaceKind::Memory { stimulus, t } => format!("memory:{stimulus}:{t}"),
            SpaceKind::Timestep(t) => format!("timestep:{t}"),
        }
    }
}

impl std::str::FromStr for SpaceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| Error::Config(format!("bad space index in `{s}`")));
        match parts.as_slice() {
            ["perceptual"] => Ok(SpaceKind::Perceptual),
            ["perceptual", i] => Ok(SpaceKind::PerceptualAt(num(i)?)),
            ["encoding", i] => Ok(SpaceKind::Encoding(num(i)?)),
            ["timestep", t] => Ok(SpaceKind::Timestep(num(t)?)),
            ["memory", i, t] => Ok(SpaceKind::Memory { stimulus: num(i)?, t: num(t)? }),
            _ => Err(Error::Config(format!("unknown space `{s}`"))),
        }
    }
}

/// LSTM state selector; other cores only have `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSel {
    #[default]
    H,
    C,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceQuery {
    pub kind: SpaceKind,
    pub feature: Feature,
    /// Restrict rows to trials of this task.
    pub task: Option<TaskSpec>,
    #[serde(default)]
    pub state: StateSel,
}

impl SpaceQuery {
    pub fn new(kind: SpaceKind, feature: Feature) -> Self {
        Self { kind, feature, task: None, state: StateSel::H }
    }

    pub fn for_task(mut self, task: TaskSpec) -> Self {
        self.task = Some(task);
        self
    }
}

/// Recorded perceptual vectors and post-update states on a trial set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBank {
    pub arch: Arch,
    pub split: Split,
    pub canvas: CanvasConfig,
    pub trials: Vec<Trial>,
    /// `[n_trials·T × out_dim]`, row `trial·T + t`.
    pub perceptual: Array2<f32>,
    /// `[n_trials × T × hidden]`; entry `t` is the state after stimulus `t`.
    pub hidden: Array3<f32>,
    pub cell: Option<Array3<f32>>,
    pub model_hash: String,
    pub frontend_hash: String,
}

impl ActivationBank {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn steps(&self) -> usize {
        self.hidden.dim().1
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden.dim().2
    }

    /// Distinct tasks present, in order of first appearance.
    pub fn tasks(&self) -> Vec<TaskSpec> {
        let mut out: Vec<TaskSpec> = Vec::new();
        for t in &self.trials {
            if !out.contains(&t.task) {
                out.push(t.task);
            }
        }
        out
    }

    /// Attribute label of stimulus `i` in every trial.
    pub fn labels(&self, feature: Feature, i: usize) -> Vec<usize> {
        self.trials.iter().map(|t| feature.label(&t.stimuli[i], &self.canvas)).collect()
    }

    /// Feature matrix and labels for a query; one row per selected trial
    /// except for the perceptual space, which has one row per (trial, step).
    pub fn slice<T: Scalar>(&self, q: &SpaceQuery) -> Result<(Array2<T>, Vec<usize>)> {
        let steps = self.steps();
        let rows: Vec<usize> = (0..self.n_trials())
            .filter(|&k| q.task.is_none_or(|task| self.trials[k].task == task))
            .collect();
        if rows.is_empty() {
            return domain_err!("no trials match task filter {:?}", q.task);
        }
        let conv = |v: f32| T::from_f64c(f64::from(v));
        if let SpaceKind::PerceptualAt(i) = q.kind {
            if i >= steps {
                return domain_err!("stimulus {i} outside a {steps}-step bank");
            }
            let idx: Vec<usize> = rows.iter().map(|&k| k * steps + i).collect();
            let x = self.perceptual.select(Axis(0), &idx).mapv(conv);
            let y = rows.iter().map(|&k| q.feature.label(&self.trials[k].stimuli[i], &self.canvas)).collect();
            return Ok((x, y));
        }
        match q.kind.stimulus_and_step() {
            None => {
                let mut x = Array2::zeros((rows.len() * steps, self.perceptual.ncols()));
                let mut y = Vec::with_capacity(rows.len() * steps);
                for (r, &k) in rows.iter().enumerate() {
                    for t in 0..steps {
                        x.row_mut(r * steps + t).assign(&self.perceptual.row(k * steps + t).mapv(conv));
                        y.push(q.feature.label(&self.trials[k].stimuli[t], &self.canvas));
                    }
                }
                Ok((x, y))
            }
            Some((i, t)) => {
                if let SpaceKind::Memory { .. } = q.kind {
                    if t <= i {
                        return domain_err!("memory space needs t > i, got i = {i}, t = {t}");
                    }
                }
                if t >= steps {
                    return domain_err!("step {t} outside a {steps}-step bank");
                }
                let source = match (q.state, &self.cell) {
                    (StateSel::H, _) => self.hidden.slice(s![.., t, ..]).to_owned(),
                    (StateSel::C, Some(c)) => c.slice(s![.., t, ..]).to_owned(),
                    (StateSel::Both, Some(c)) => {
                        concatenate![Axis(1), self.hidden.slice(s![.., t, ..]), c.slice(s![.., t, ..])]
                    }
                    (_, None) => return domain_err!("cell state requested from a {:?} bank", self.arch),
                };
                let x = source.select(Axis(0), &rows).mapv(conv);
                let y = rows.iter().map(|&k| q.feature.label(&self.trials[k].stimuli[i], &self.canvas)).collect();
                Ok((x, y))
            }
        }
    }

    /// Bank restricted to the given trials, in the given order.
    pub fn subset(&self, idx: &[usize]) -> ActivationBank {
        let steps = self.steps();
        let prow: Vec<usize> = idx.iter().flat_map(|&k| (0..steps).map(move |t| k * steps + t)).collect();
        ActivationBank {
            arch: self.arch,
            split: self.split,
            canvas: self.canvas.clone(),
            trials: idx.iter().map(|&k| self.trials[k].clone()).collect(),
            perceptual: self.perceptual.select(Axis(0), &prow),
            hidden: self.hidden.select(Axis(0), idx),
            cell: self.cell.as_ref().map(|c| c.select(Axis(0), idx)),
            model_hash: self.model_hash.clone(),
            frontend_hash: self.frontend_hash.clone(),
        }
    }

    /// Mean Euclidean norm of the hidden states at step `t`.
    pub fn mean_state_norm(&self, t: usize) -> f64 {
        let m = self.hidden.slice(s![.., t, ..]);
        let total: f64 = m.rows().into_iter().map(|r| r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()).sum();
        total / m.nrows().max(1) as f64
    }
}

/// Sample `n_trials` trials (tasks drawn uniformly from `tasks`) and record
/// the model on them. Forward passes only; the model is not modified.
#[allow(clippy::too_many_arguments)]
pub fn record<R: Rng + ?Sized>(
    model: &RecurrentModel<f32>,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    tasks: &[TaskSpec],
    split: Split,
    n_trials: usize,
    balance: MatchBalance,
    rng: &mut R,
) -> Result<ActivationBank> {
    if tasks.is_empty() || n_trials == 0 {
        return domain_err!("record needs at least one task and one trial");
    }
    let canvas = cache.canvas().clone();
    let trials: Vec<Trial> = (0..n_trials)
        .map(|_| {
            let task = tasks[rng.random_range(0..tasks.len())];
            generate_trial(task, rng, &canvas, split, balance)
        })
        .collect();
    record_trials(model, cache, suite, trials, split)
}

/// Record a fixed trial list.
pub fn record_trials(
    model: &RecurrentModel<f32>,
    cache: &mut EmbeddingCache,
    suite: &TaskSuite,
    trials: Vec<Trial>,
    split: Split,
) -> Result<ActivationBank> {
    for t in &trials {
        cache.ensure_all(t.stimuli.iter())?;
    }
    let n = trials.len();
    let steps = trials[0].len();
    let hsz = model.hidden;
    let mut perceptual = Array2::zeros((n * steps, cache.out_dim()));
    let mut hidden = Array3::zeros((n, steps, hsz));
    let mut cell = (model.arch == Arch::Lstm).then(|| Array3::zeros((n, steps, hsz)));
    for start in (0..n).step_by(RECORD_BATCH) {
        let end = (start + RECORD_BATCH).min(n);
        let input = SeqInput::from_trials(&trials[start..end], cache, suite)?;
        let pass = model.forward(&input)?;
        for t in 0..steps {
            for (r, k) in (start..end).enumerate() {
                perceptual.row_mut(k * steps + t).assign(&input.perceptual[t].row(r));
            }
            hidden.slice_mut(s![start..end, t, ..]).assign(&pass.h[t]);
            if let (Some(c), Some(pc)) = (cell.as_mut(), pass.c[t].as_ref()) {
                c.slice_mut(s![start..end, t, ..]).assign(pc);
            }
        }
    }
    Ok(ActivationBank {
        arch: model.arch,
        split,
        canvas: cache.canvas().clone(),
        trials,
        perceptual,
        hidden,
        cell,
        model_hash: model.content_hash(),
        frontend_hash: cache.frontend().content_hash(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    arch: Arch,
    split: Split,
    canvas: CanvasConfig,
    n_trials: usize,
    steps: usize,
    out_dim: usize,
    hidden: usize,
    has_cell: bool,
    model_hash: String,
    frontend_hash: String,
    /// trial, index, task, n_back, category, identity, location, angle, background_seed
    attributes_csv: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttrRow {
    trial: usize,
    index: usize,
    feature: Feature,
    n_back: usize,
    category: usize,
    identity: usize,
    location: usize,
    angle: u16,
    background_seed: Option<u64>,
}

fn attributes_csv(trials: &[Trial]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (k, t) in trials.iter().enumerate() {
        for (i, s) in t.stimuli.iter().enumerate() {
            w.serialize(AttrRow {
                trial: k,
                index: i,
                feature: t.task.feature,
                n_back: t.task.n_back,
                category: s.category,
                identity: s.identity,
                location: s.location,
                angle: s.view_angle,
                background_seed: s.background.seed(),
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn parse_attributes(path: &Path, text: &str, n: usize, steps: usize) -> Result<Vec<Trial>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<AttrRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.len() != n * steps {
        return Err(Error::integrity(path, "attribute table size does not match shapes"));
    }
    let mut trials = Vec::with_capacity(n);
    for (k, chunk) in rows.chunks(steps).enumerate() {
        if chunk.iter().enumerate().any(|(i, r)| r.trial != k || r.index != i) {
            return Err(Error::integrity(path, "attribute table out of order"));
        }
        let task = TaskSpec::new(chunk[0].feature, chunk[0].n_back);
        let stimuli = chunk
            .iter()
            .map(|r| StimulusSpec {
                category: r.category,
                identity: r.identity,
                location: r.location,
                view_angle: r.angle,
                background: r.background_seed.map_or(Background::Blank, Background::Texture),
            })
            .collect();
        trials.push(Trial::from_stimuli(stimuli, task));
    }
    Ok(trials)
}

/// Write a bank (f32 payload, embedded attribute table, SHA-256 trailer).
pub fn persist(bank: &ActivationBank, path: &Path) -> Result<()> {
    let header = BankHeader {
        arch: bank.arch,
        split: bank.split,
        canvas: bank.canvas.clone(),
        n_trials: bank.n_trials(),
        steps: bank.steps(),
        out_dim: bank.perceptual.ncols(),
        hidden: bank.hidden_size(),
        has_cell: bank.cell.is_some(),
        model_hash: bank.model_hash.clone(),
        frontend_hash: bank.frontend_hash.clone(),
        attributes_csv: attributes_csv(&bank.trials)?,
    };
    let mut payload: Vec<f32> = Vec::with_capacity(bank.perceptual.len() + bank.hidden.len() * 2);
    payload.extend(bank.perceptual.iter());
    payload.extend(bank.hidden.iter());
    if let Some(c) = &bank.cell {
        payload.extend(c.iter());
    }
    artifact::write(path, MAGIC, &header, &payload)
}

pub fn load(path: &Path) -> Result<ActivationBank> {
    let (h, payload): (BankHeader, Vec<f32>) = artifact::read(path, MAGIC)?;
    let np = h.n_trials * h.steps * h.out_dim;
    let nh = h.n_trials * h.steps * h.hidden;
    let expected = np + nh * if h.has_cell { 2 } else { 1 };
    if payload.len() != expected {
        return Err(Error::integrity(path, format!("payload has {} values, expected {expected}", payload.len())));
    }
    let trials = parse_attributes(path, &h.attributes_csv, h.n_trials, h.steps)?;
    let perceptual = Array2::from_shape_vec((h.n_trials * h.steps, h.out_dim), payload[..np].to_vec()).expect("shape");
    let shape = (h.n_trials, h.steps, h.hidden);
    let hidden = Array3::from_shape_vec(shape, payload[np..np + nh].to_vec()).expect("shape");
    let cell = h.has_cell.then(|| Array3::from_shape_vec(shape, payload[np + nh..].to_vec()).expect("shape"));
    Ok(ActivationBank {
        arch: h.arch,
        split: h.split,
        canvas: h.canvas,
        trials,
        perceptual,
        hidden,
        cell,
        model_hash: h.model_hash,
        frontend_hash: h.frontend_hash,
    })
}
