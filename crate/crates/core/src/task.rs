//! N-back trials, ground-truth responses, task index vectors and diets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::stimulus::{sample_split, CanvasConfig, Split, StimulusSpec};

/// Sequence length used for training and validation.
pub const SEQ_LEN: usize = 6;

/// Object property a task compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Location,
    Identity,
    Category,
}

impl Feature {
    /// Fixed encoding order (L, I, C).
    pub const ALL: [Feature; 3] = [Feature::Location, Feature::Identity, Feature::Category];

    pub fn index(self) -> usize {
        match self {
            Feature::Location => 0,
            Feature::Identity => 1,
            Feature::Category => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Feature::Location => "L",
            Feature::Identity => "I",
            Feature::Category => "C",
        }
    }

    /// Whether two stimuli share this property. Identity means the same
    /// object, so category must agree as well.
    pub fn same(self, a: &StimulusSpec, b: &StimulusSpec) -> bool {
        match self {
            Feature::Location => a.location == b.location,
            Feature::Category => a.category == b.category,
            Feature::Identity => a.category == b.category && a.identity == b.identity,
        }
    }

    /// Dense decoding label. Identity labels cover trained identities only
    /// (`category * n_id + identity`); held-out identities map past the end.
    pub fn label(self, s: &StimulusSpec, canvas: &CanvasConfig) -> usize {
        match self {
            Feature::Location => s.location,
            Feature::Category => s.category,
            Feature::Identity if s.identity < canvas.n_id => s.category * canvas.n_id + s.identity,
            Feature::Identity => canvas.n_identities() + s.category,
        }
    }

    /// Number of dense label values for trained stimuli.
    pub fn cardinality(self, canvas: &CanvasConfig) -> usize {
        match self {
            Feature::Location => crate::stimulus::N_LOCATIONS,
            Feature::Category => canvas.n_cat,
            Feature::Identity => canvas.n_identities(),
        }
    }

    /// Copy this property from `src` into `dst`.
    fn copy(self, src: &StimulusSpec, dst: &mut StimulusSpec) {
        match self {
            Feature::Location => dst.location = src.location,
            Feature::Category => dst.category = src.category,
            Feature::Identity => {
                dst.category = src.category;
                dst.identity = src.identity;
            }
        }
    }
}

impl std::str::FromStr for Feature {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l" | "location" => Ok(Feature::Location),
            "i" | "identity" => Ok(Feature::Identity),
            "c" | "category" => Ok(Feature::Category),
            other => domain_err!("unknown feature `{other}`"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub feature: Feature,
    pub n_back: usize,
}

impl TaskSpec {
    pub fn new(feature: Feature, n_back: usize) -> Self {
        Self { feature, n_back }
    }

    /// Step `t` requires a match/non-match decision.
    pub fn is_executive(&self, t: usize) -> bool {
        t >= self.n_back
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.feature.short(), self.n_back)
    }
}

impl std::fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-back {:?}", self.n_back, self.feature)
    }
}

/// Ground-truth response; the discriminant is the readout class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    Match = 0,
    NonMatch = 1,
    NoAction = 2,
}

impl Response {
    pub const ALL: [Response; 3] = [Response::Match, Response::NonMatch, Response::NoAction];

    pub fn class(self) -> usize {
        self as usize
    }
}

/// Range of `n_back` values the task suite uses. `max_n = 3` gives the nine
/// standard tasks and a 6-bit index vector; `max_n = 4` widens both halves
/// of the index vector to 4 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSuite {
    pub max_n: usize,
}

impl Default for TaskSuite {
    fn default() -> Self {
        Self { max_n: 3 }
    }
}

impl TaskSuite {
    pub fn half_width(&self) -> usize {
        self.max_n.max(Feature::ALL.len())
    }

    pub fn index_bits(&self) -> usize {
        2 * self.half_width()
    }

    pub fn tasks(&self) -> Vec<TaskSpec> {
        let mut out = Vec::new();
        for n in 1..=self.max_n {
            for f in Feature::ALL {
                out.push(TaskSpec::new(f, n));
            }
        }
        out
    }

    pub fn check(&self, task: &TaskSpec) -> Result<()> {
        if task.n_back == 0 || task.n_back > self.max_n || task.n_back >= SEQ_LEN {
            return domain_err!("n_back {} outside 1..={}", task.n_back, self.max_n);
        }
        Ok(())
    }

    /// One-hot feature in the first half, one-hot `n_back` in the second.
    pub fn index_vector(&self, task: &TaskSpec) -> Result<TaskIndexVector> {
        self.check(task)?;
        let half = self.half_width();
        let mut bits = vec![0u8; 2 * half];
        bits[task.feature.index()] = 1;
        bits[half + task.n_back - 1] = 1;
        Ok(TaskIndexVector(bits))
    }
}

/// Binary task identity vector fed alongside each perceptual input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskIndexVector(pub Vec<u8>);

impl TaskIndexVector {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Task index vector for the standard nine-task suite.
pub fn task_index_vector(task: &TaskSpec) -> Result<TaskIndexVector> {
    TaskSuite::default().index_vector(task)
}

/// Response at step `t` of a stimulus sequence.
pub fn label_step(stimuli: &[StimulusSpec], t: usize, task: &TaskSpec) -> Response {
    if t < task.n_back {
        Response::NoAction
    } else if task.feature.same(&stimuli[t], &stimuli[t - task.n_back]) {
        Response::Match
    } else {
        Response::NonMatch
    }
}

/// A stimulus sequence with its task and per-step ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub stimuli: Vec<StimulusSpec>,
    pub task: TaskSpec,
    pub responses: Vec<Response>,
}

impl Trial {
    pub fn from_stimuli(stimuli: Vec<StimulusSpec>, task: TaskSpec) -> Self {
        let responses = (0..stimuli.len()).map(|t| label_step(&stimuli, t, &task)).collect();
        Self {
            stimuli,
            task,
            responses,
        }
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn images(&self, canvas: &CanvasConfig) -> Result<Vec<crate::stimulus::Image>> {
        self.stimuli
            .iter()
            .map(|s| crate::stimulus::render_stimulus(s, canvas))
            .collect()
    }
}

/// Match balancing on executive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatchBalance {
    /// Stimuli drawn independently; matches occur at their natural rate.
    Natural,
    /// Each executive step is a match with this probability.
    Target(f64),
}

impl Default for MatchBalance {
    fn default() -> Self {
        MatchBalance::Target(0.5)
    }
}

/// Generate one trial of length [`SEQ_LEN`].
///
/// Attributes are sampled independently; under [`MatchBalance::Target`]
/// each executive step is then forced to match or not match by rewriting
/// the task-relevant attribute of the current stimulus. Steps are visited in
/// order, so every rewrite only touches a stimulus whose comparison partner
/// is already final.
pub fn generate_trial<R: Rng + ?Sized>(
    task: TaskSpec,
    rng: &mut R,
    canvas: &CanvasConfig,
    split: Split,
    balance: MatchBalance,
) -> Trial {
    let mut stimuli: Vec<StimulusSpec> = (0..SEQ_LEN).map(|_| sample_split(rng, canvas, split)).collect();
    if let MatchBalance::Target(p) = balance {
        for t in task.n_back..SEQ_LEN {
            let prev = stimuli[t - task.n_back];
            let want_match = rng.random_bool(p.clamp(0.0, 1.0));
            if want_match {
                task.feature.copy(&prev, &mut stimuli[t]);
            } else {
                while task.feature.same(&prev, &stimuli[t]) {
                    let fresh = sample_split(rng, canvas, split);
                    task.feature.copy(&fresh, &mut stimuli[t]);
                }
            }
        }
    }
    Trial::from_stimuli(stimuli, task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DietMode {
    Stsf,
    Stmf,
    Mtmf,
}

impl std::str::FromStr for DietMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stsf" => Ok(DietMode::Stsf),
            "stmf" => Ok(DietMode::Stmf),
            "mtmf" => Ok(DietMode::Mtmf),
            other => domain_err!("unknown diet `{other}`"),
        }
    }
}

/// Set of tasks a model is trained on; batches draw tasks uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diet {
    pub mode: DietMode,
    pub tasks: Vec<TaskSpec>,
}

impl Diet {
    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> TaskSpec {
        self.tasks[rng.random_range(0..self.tasks.len())]
    }

    pub fn name(&self) -> String {
        match self.mode {
            DietMode::Mtmf => "mtmf".into(),
            DietMode::Stmf => format!("stmf-n{}", self.tasks[0].n_back),
            DietMode::Stsf => format!("stsf-{}", self.tasks[0].name()),
        }
    }
}

pub fn make_diet(
    mode: DietMode,
    base_n: Option<usize>,
    base_feature: Option<Feature>,
    suite: &TaskSuite,
) -> Result<Diet> {
    let tasks = match mode {
        DietMode::Mtmf => suite.tasks(),
        DietMode::Stmf => {
            let Some(n) = base_n else {
                return domain_err!("STMF diet needs n_back");
            };
            Feature::ALL.iter().map(|&f| TaskSpec::new(f, n)).collect()
        }
        DietMode::Stsf => {
            let (Some(n), Some(f)) = (base_n, base_feature) else {
                return domain_err!("STSF diet needs n_back and feature");
            };
            vec![TaskSpec::new(f, n)]
        }
    };
    for t in &tasks {
        suite.check(t)?;
    }
    Ok(Diet { mode, tasks })
}
