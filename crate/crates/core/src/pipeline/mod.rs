//! End-to-end experiment orchestration: configuration, stage caching,
//! manifests and report emission.

mod analysis;
mod report;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::content_hash;
use crate::decode::{fit_set, save_decoders};
use crate::error::{Error, Result};
use crate::optimize::{evaluate_all, train, EvalReport, TrainConfig};
use crate::recurrent::{Arch, Checkpoint, RecurrentModel};
use crate::stimulus::{
    decodability_gate, pretrain_frontend, pretraining_specs, CanvasConfig, EmbeddingCache, FrontendConfig, GateReport,
    PerceptualFrontend, Split,
};
use crate::task::{make_diet, Diet, DietMode, Feature, MatchBalance, TaskSuite};
use crate::trace::{self, ActivationBank, SpaceKind, SpaceQuery};

pub use analysis::{analyze, AnalysisConfig, FeatureMatrix, ModelAnalysis, OrthoResult, TaskGap};
pub use report::{emit_report, verify_report, ReportBundle};

/// One model to train and analyze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub diet: DietMode,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub n_back: Option<usize>,
    #[serde(default)]
    pub feature: Option<Feature>,
    /// Per-model iteration budget, overriding `[train] max_iters`.
    #[serde(default)]
    pub max_iters: Option<u64>,
    /// Train for the whole budget with early stopping disabled.
    #[serde(default)]
    pub fixed_budget: bool,
}

impl ModelSpec {
    pub fn diet(&self, suite: &TaskSuite) -> Result<Diet> {
        make_diet(self.diet, self.n_back, self.feature, suite).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordConfig {
    /// Trials per task in the diet.
    pub n_per_task: usize,
    pub split: Split,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self { n_per_task: 256, split: Split::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_per_task: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_per_task: 200 }
    }
}

/// Whole-run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub canvas: CanvasConfig,
    pub frontend: FrontendConfig,
    pub suite: TaskSuite,
    pub train: TrainConfig,
    pub models: Vec<ModelSpec>,
    pub record: RecordConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Reject anything that would fail later, before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.canvas.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        for m in &self.models {
            m.diet(&self.suite)?;
            if m.max_iters == Some(0) {
                return Err(Error::Config("per-model max_iters must be positive".into()));
            }
            if m.hidden.unwrap_or(self.train.hidden) < 8 {
                return Err(Error::Config("hidden size must be at least 8".into()));
            }
        }
        if self.record.n_per_task == 0 || self.eval.n_per_task == 0 {
            return Err(Error::Config("record and eval trial counts must be positive".into()));
        }
        Ok(())
    }

    /// Frontend configuration with the run seed applied.
    pub fn frontend_config(&self) -> FrontendConfig {
        FrontendConfig { seed: self.seed, ..self.frontend.clone() }
    }

    pub fn train_config(&self, m: &ModelSpec) -> TrainConfig {
        let max_iters = m.max_iters.unwrap_or(self.train.max_iters);
        TrainConfig {
            milestones: self.train.milestones.iter().copied().filter(|&s| s < max_iters).collect(),
            arch: m.arch,
            hidden: m.hidden.unwrap_or(self.train.hidden),
            seed: self.seed,
            max_iters,
            early_stop: if m.fixed_budget { None } else { self.train.early_stop },
            ..self.train.clone()
        }
    }
}

/// Bumped whenever analysis code changes its outputs, so cached analyses
/// from older builds are recomputed.
const ANALYSIS_REVISION: u32 = 4;

/// Stage key: SHA-256 over the JSON of the stage inputs.
pub fn stage_key<S: Serialize>(stage: &str, inputs: &S) -> String {
    let body = serde_json::to_vec(&(stage, inputs)).expect("serializable stage inputs");
    content_hash(&body)[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub path: String,
    pub content_hash: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    /// Hash of everything except timestamps and cache flags.
    pub fn content_hash(&self) -> String {
        let stages: Vec<(&str, &str, &str)> =
            self.stages.iter().map(|s| (s.stage.as_str(), s.key.as_str(), s.content_hash.as_str())).collect();
        let body = serde_json::to_vec(&(&self.tool_version, &self.config, self.seed, stages)).expect("serializable");
        content_hash(&body)
    }
}

/// Per-model results of a run.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub name: String,
    pub spec: ModelSpec,
    pub eval: EvalReport,
    pub iterations: u64,
    pub analysis: ModelAnalysis,
    pub checkpoint: PathBuf,
    pub bank: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub gate: GateReport,
    pub models: Vec<ModelRun>,
    pub report: ReportBundle,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub quiet: bool,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&fs::read(path)?))
}

fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, serde_json::to_vec_pretty(v)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::integrity(path, e.to_string()))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) | Error::Integrity { .. } | Error::Stage { .. } => e,
        other => Error::Stage { stage: name.to_string(), source: Box::new(other) },
    })
}

pub fn model_name(spec: &ModelSpec, diet: &Diet, hidden: usize) -> String {
    format!("{}-{}-h{hidden}", spec.arch.name(), diet.name())
}

#[derive(Serialize, Deserialize)]
struct FrontendStage {
    gate: GateReport,
}

#[derive(Serialize, Deserialize)]
struct TrainStage {
    eval: EvalReport,
    iterations: u64,
    stopped_early: bool,
}

struct Log(bool);

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Pretrain (or load) the frontend for this configuration and run the gate.
pub fn frontend_stage(cfg: &PipelineConfig, dir: &Path) -> Result<(PerceptualFrontend<f32>, GateReport, StageRecord)> {
    let fcfg = cfg.frontend_config();
    let key = stage_key("frontend", &(&cfg.canvas, &fcfg));
    let path = dir.join(format!("frontend-{key}.bin"));
    let meta = dir.join(format!("frontend-{key}.json"));
    let cached = path.exists() && meta.exists();
    let (front, gate) = if cached {
        let st: FrontendStage = read_json(&meta)?;
        (PerceptualFrontend::<f32>::load(&path)?, st.gate)
    } else {
        let specs = pretraining_specs(&cfg.canvas, &fcfg);
        let front = stage("frontend", pretrain_frontend(&specs, &cfg.canvas, &fcfg))?;
        let gate = stage(
            "frontend",
            decodability_gate(&front, &specs, &cfg.canvas, fcfg.gate_folds, fcfg.gate_threshold),
        )?;
        front.save(&path)?;
        write_json(&meta, &FrontendStage { gate: gate.clone() })?;
        (front, gate)
    };
    if !gate.passed() {
        return Err(Error::Stage {
            stage: "frontend".into(),
            source: Box::new(Error::Training(format!("decodability gate failed: {gate:?}"))),
        });
    }
    let rec = StageRecord { stage: "frontend".into(), key, content_hash: file_hash(&path)?, path: path.display().to_string(), cached };
    Ok((front, gate, rec))
}

/// Execute every stage, reusing artifacts whose keys already exist.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let log = Log(opts.quiet);
    let started = now();
    let dir = opts.out.join("artifacts");
    fs::create_dir_all(&dir)?;
    let mut stages = Vec::new();

    let (front, gate, rec) = frontend_stage(cfg, &dir)?;
    log.say(format!("frontend {} gate C={:.4} I={:.4} L={:.4}", rec.key, gate.category, gate.identity, gate.location));
    let front_key = rec.key.clone();
    stages.push(rec);
    let mut cache = stage("embed", EmbeddingCache::new(front, &cfg.canvas))?;

    let mut models = Vec::new();
    for spec in &cfg.models {
        let diet = spec.diet(&cfg.suite)?;
        let tcfg = cfg.train_config(spec);
        let name = model_name(spec, &diet, tcfg.hidden);

        let tkey = stage_key("train", &(&front_key, &diet, &tcfg, &cfg.suite, &cfg.eval));
        let ckpt_path = dir.join(format!("model-{tkey}.ckpt"));
        let tmeta = dir.join(format!("model-{tkey}.json"));
        let cached = ckpt_path.exists() && tmeta.exists();
        let (model, tstage) = if cached {
            let ck = Checkpoint::<f32>::load(&ckpt_path)?;
            (ck.model, read_json::<TrainStage>(&tmeta)?)
        } else {
            log.say(format!("train {name}"));
            let out = stage("train", train(&diet, &mut cache, &cfg.suite, &tcfg))?;
            if let Some(it) = out.diverged_at {
                let ck = out.checkpoint(tcfg.seed, serde_json::json!({ "diet": diet, "diverged_at": it }));
                ck.save(&ckpt_path.with_extension("diverged.ckpt"))?;
                return Err(Error::Stage {
                    stage: "train".into(),
                    source: Box::new(Error::Training(format!("{name} diverged at iteration {it}; last good snapshot saved"))),
                });
            }
            let eval = stage(
                "evaluate",
                evaluate_all(&out.model, &mut cache, &cfg.suite, &diet.tasks, cfg.eval.n_per_task, tcfg.seed.wrapping_add(1)),
            )?;
            let eval = EvalReport { loss_curve: out.loss_curve.clone(), ..eval };
            out.checkpoint(tcfg.seed, serde_json::json!({ "diet": diet, "train": tcfg })).save(&ckpt_path)?;
            let st = TrainStage { eval, iterations: out.iterations, stopped_early: out.stopped_early };
            write_json(&tmeta, &st)?;
            (out.model, st)
        };
        log.say(format!(
            "{name}: {} iterations, train {:.3}, novel angle {:.3}, novel identity {:.3}",
            tstage.iterations,
            tstage.eval.accuracy(Split::Train).unwrap_or(f64::NAN),
            tstage.eval.accuracy(Split::NovelAngle).unwrap_or(f64::NAN),
            tstage.eval.accuracy(Split::NovelIdentity).unwrap_or(f64::NAN),
        ));
        stages.push(StageRecord {
            stage: format!("train:{name}"),
            key: tkey.clone(),
            content_hash: file_hash(&ckpt_path)?,
            path: ckpt_path.display().to_string(),
            cached,
        });

        let rkey = stage_key("record", &(&tkey, &cfg.record));
        let bank_path = dir.join(format!("bank-{rkey}.bin"));
        let cached = bank_path.exists();
        let bank: ActivationBank = if cached {
            trace::load(&bank_path)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba4c);
            let n = cfg.record.n_per_task * diet.tasks.len();
            let bank = stage(
                "record",
                trace::record(&model, &mut cache, &cfg.suite, &diet.tasks, cfg.record.split, n, MatchBalance::default(), &mut rng),
            )?;
            trace::persist(&bank, &bank_path)?;
            bank
        };
        stages.push(StageRecord {
            stage: format!("record:{name}"),
            key: rkey.clone(),
            content_hash: file_hash(&bank_path)?,
            path: bank_path.display().to_string(),
            cached,
        });

        let akey = stage_key("analysis", &(&rkey, &cfg.analysis, cfg.seed, ANALYSIS_REVISION));
        let apath = dir.join(format!("analysis-{akey}.json"));
        let cached = apath.exists();
        let result: ModelAnalysis = if cached {
            read_json(&apath)?
        } else {
            log.say(format!("analyze {name}"));
            let a = stage("analysis", analyze(&name, &model, &cache, &cfg.suite, &bank, &cfg.analysis, cfg.seed))?;
            for f in Feature::ALL {
                let set = stage("decode", fit_set(&bank, &SpaceQuery::new(SpaceKind::Encoding(0), f), &cfg.analysis.cv))?;
                save_decoders(&set, &dir.join(format!("decoders-{akey}-{}.bin", f.short())))?;
            }
            write_json(&apath, &a)?;
            a
        };
        stages.push(StageRecord {
            stage: format!("analysis:{name}"),
            key: akey,
            content_hash: file_hash(&apath)?,
            path: apath.display().to_string(),
            cached,
        });
        models.push(ModelRun {
            name,
            spec: spec.clone(),
            eval: tstage.eval,
            iterations: tstage.iterations,
            analysis: result,
            checkpoint: ckpt_path,
            bank: bank_path,
        });
    }

    let report_inputs: Vec<(String, EvalReport, ModelAnalysis)> =
        models.iter().map(|m| (m.name.clone(), m.eval.clone(), m.analysis.clone())).collect();
    let report = stage("report", emit_report(&opts.out.join("report"), &gate, &report_inputs))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        stages,
        started_unix: started,
        finished_unix: now(),
    };
    write_json(&opts.out.join("manifest.json"), &manifest)?;
    Ok(RunOutput { manifest, gate, models, report })
}

/// Load a checkpoint's model.
pub fn load_model(path: &Path) -> Result<RecurrentModel<f32>> {
    Ok(Checkpoint::<f32>::load(path)?.model)
}
