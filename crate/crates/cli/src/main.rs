use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use wmgeom::decode::{evaluate_set, fit_set, load_decoders, save_decoders};
use wmgeom::geometry::{
    causal_perturb, magnitude_grid, ortho_index, procrustes_align, swap_test, BiasSource,
};
use wmgeom::optimize::{evaluate_all, size_sweep, train, EvalReport};
use wmgeom::pipeline::{
    emit_report, frontend_stage, run_pipeline, ModelAnalysis, ModelSpec, PipelineConfig, RunManifest, RunOptions,
};
use wmgeom::recurrent::{Arch, Checkpoint};
use wmgeom::stimulus::{
    render_stimulus, sample_split, write_attribute_table, write_image_blob, EmbeddingCache, GateReport,
    Split,
};
use wmgeom::task::{DietMode, Feature, MatchBalance, TaskSpec};
use wmgeom::trace::{self, SpaceKind, SpaceQuery};
use wmgeom::{Error, Result};

#[derive(Parser)]
#[command(name = "wmgeom", version, about = "Working-memory geometry workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "gru")]
    arch: Arch,
    #[arg(long, default_value = "mtmf")]
    diet: DietMode,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    n_back: Option<usize>,
    #[arg(long)]
    feature: Option<Feature>,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec { arch: self.arch, diet: self.diet, hidden: self.hidden, n_back: self.n_back, feature: self.feature, max_iters: None, fixed_budget: false }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render stimuli from a split into an image blob and attribute table.
    GenStimuli {
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
    /// Pretrain the perceptual frontend and run the decodability gate.
    PretrainFrontend,
    /// Train one model and evaluate it on every split.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        max_iters: Option<u64>,
    },
    /// Train a grid of architectures and hidden sizes.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "vanilla,gru,lstm")]
        archs: Vec<Arch>,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        sizes: Vec<usize>,
        #[arg(long, default_value = "mtmf")]
        diet: DietMode,
        #[arg(long)]
        max_iters: Option<u64>,
    },
    /// Record an activation bank from a checkpoint.
    Record {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trials per task.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Fit decoders on one space of a bank.
    Decode {
        #[arg(long)]
        bank: PathBuf,
        /// perceptual, perceptual:i, encoding:i, memory:i:t or timestep:t
        #[arg(long, default_value = "encoding:0")]
        space: SpaceKind,
        #[arg(long)]
        feature: Feature,
        /// Restrict to one task, e.g. `L2` for location 2-back.
        #[arg(long)]
        task: Option<String>,
    },
    /// Geometry analyses on banks and decoder archives.
    Geometry {
        #[command(subcommand)]
        which: GeometryCmd,
    },
    /// Rebuild the report bundle from a finished run directory.
    Report {
        /// Run directory holding manifest.json; defaults to --out.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run the full pipeline.
    Run,
}

#[derive(Subcommand)]
enum GeometryCmd {
    /// Orthogonalization index of a decoder archive.
    Ortho {
        #[arg(long)]
        decoders: PathBuf,
        #[arg(long, default_value_t = 10)]
        bootstrap: usize,
    },
    /// Align one decoder archive onto another.
    Procrustes {
        #[arg(long)]
        decoders: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Rotation swap test on a bank.
    Swap {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 1)]
        shift: usize,
        #[arg(long, default_value = "source")]
        bias: String,
    },
    /// Perturb hidden states along a decoder normal.
    Causal {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        decoders: PathBuf,
        #[arg(long, default_value_t = 0)]
        value: usize,
    },
}

fn parse_task(s: &str) -> Result<TaskSpec> {
    let mut chars = s.chars();
    let f = chars.next().ok_or_else(|| Error::Config("empty task".into()))?;
    let feature: Feature = f.to_string().parse().map_err(|_| Error::Config(format!("bad task `{s}`")))?;
    let n: usize = chars.as_str().parse().map_err(|_| Error::Config(format!("bad task `{s}`")))?;
    Ok(TaskSpec::new(feature, n))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cache_for(cfg: &PipelineConfig, out: &Path) -> Result<(EmbeddingCache, GateReport)> {
    let dir = out.join("artifacts");
    fs::create_dir_all(&dir)?;
    let (front, gate, _) = frontend_stage(cfg, &dir)?;
    Ok((EmbeddingCache::new(front, &cfg.canvas)?, gate))
}

fn say(c: &Common, msg: String) {
    if !c.quiet {
        println!("{msg}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = config(c)?;
    fs::create_dir_all(&c.out)?;
    match cli.cmd {
        Cmd::GenStimuli { split, n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let specs: Vec<_> = (0..n).map(|_| sample_split(&mut rng, &cfg.canvas, split)).collect();
            let images = specs.iter().map(|s| render_stimulus(s, &cfg.canvas)).collect::<Result<Vec<_>>>()?;
            write_image_blob(&c.out.join("stimuli.bin"), &images)?;
            write_attribute_table(&c.out.join("stimuli.csv"), &specs)?;
            say(c, format!("wrote {n} {} stimuli", split.name()));
        }
        Cmd::PretrainFrontend => {
            let (cache, gate) = cache_for(&cfg, &c.out)?;
            let path = c.out.join("frontend.bin");
            cache.frontend().save(&path)?;
            write_json(&c.out.join("gate.json"), &serde_json::to_value(&gate)?)?;
            say(c, format!("gate C={:.4} I={:.4} L={:.4}", gate.category, gate.identity, gate.location));
        }
        Cmd::Train { model, max_iters } => {
            let (mut cache, _) = cache_for(&cfg, &c.out)?;
            let spec = model.spec();
            let diet = spec.diet(&cfg.suite)?;
            let mut tcfg = cfg.train_config(&spec);
            if let Some(m) = max_iters {
                tcfg.max_iters = m;
                tcfg.milestones.retain(|&s| s < m);
            }
            tcfg.validate()?;
            let out = train(&diet, &mut cache, &cfg.suite, &tcfg)?;
            if let Some(it) = out.diverged_at {
                out.checkpoint(tcfg.seed, json!({ "diet": diet, "diverged_at": it })).save(&c.out.join("model.diverged.ckpt"))?;
                return Err(Error::Stage {
                    stage: "train".into(),
                    source: Box::new(Error::Training(format!("diverged at iteration {it}"))),
                });
            }
            let rep = evaluate_all(&out.model, &mut cache, &cfg.suite, &diet.tasks, cfg.eval.n_per_task, tcfg.seed.wrapping_add(1))?;
            let rep = EvalReport { loss_curve: out.loss_curve.clone(), ..rep };
            out.checkpoint(tcfg.seed, json!({ "diet": diet, "train": tcfg })).save(&c.out.join("model.ckpt"))?;
            write_json(&c.out.join("eval.json"), &serde_json::to_value(&rep)?)?;
            for s in &rep.splits {
                say(c, format!("{}: {:.4} (executive {:.4})", s.split.name(), s.accuracy, s.executive_accuracy));
            }
        }
        Cmd::Sweep { archs, sizes, diet, max_iters } => {
            let (mut cache, _) = cache_for(&cfg, &c.out)?;
            let spec = ModelSpec { arch: Arch::Gru, diet, hidden: None, n_back: Some(1), feature: Some(Feature::Location), max_iters: None, fixed_budget: false };
            let d = spec.diet(&cfg.suite)?;
            let mut base = cfg.train_config(&spec);
            if let Some(m) = max_iters {
                base.max_iters = m;
                base.milestones.retain(|&s| s < m);
            }
            let rows = size_sweep(&archs, &sizes, &d, &mut cache, &cfg.suite, &base, cfg.eval.n_per_task)?;
            let mut w = csv::Writer::from_path(c.out.join("sweep.csv")).map_err(Error::from)?;
            for r in &rows {
                w.serialize(r).map_err(Error::from)?;
                say(c, format!("{} h{}: {} params, train {:.3}", r.arch.name(), r.hidden, r.parameters, r.train));
            }
            w.flush()?;
        }
        Cmd::Record { checkpoint, n, split } => {
            let (mut cache, _) = cache_for(&cfg, &c.out)?;
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let tasks: Vec<TaskSpec> = match ck.meta.get("diet").and_then(|d| d.get("tasks")) {
                Some(t) => serde_json::from_value(t.clone())?,
                None => cfg.suite.tasks(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba4c);
            let n = n.unwrap_or(cfg.record.n_per_task) * tasks.len();
            let bank = trace::record(
                &ck.model,
                &mut cache,
                &cfg.suite,
                &tasks,
                split.unwrap_or(cfg.record.split),
                n,
                MatchBalance::default(),
                &mut rng,
            )?;
            trace::persist(&bank, &c.out.join("bank.bin"))?;
            say(c, format!("recorded {} trials", bank.n_trials()));
        }
        Cmd::Decode { bank, space, feature, task } => {
            let bank = trace::load(&bank)?;
            let mut q = SpaceQuery::new(space, feature);
            if let Some(t) = task {
                q = q.for_task(parse_task(&t)?);
            }
            let set = fit_set(&bank, &q, &cfg.analysis.cv)?;
            let acc = evaluate_set(&set, &bank, &q)?;
            let cv: Vec<f64> = set.decoders.iter().map(|d| d.cv_accuracy).collect();
            save_decoders(&set, &c.out.join("decoders.bin"))?;
            write_json(&c.out.join("decode.json"), &json!({ "space": space.tag(), "feature": feature, "train_accuracy": acc, "cv_accuracy": cv }))?;
            say(c, format!("{} {}: train accuracy {acc:.4}", space.tag(), feature.short()));
        }
        Cmd::Geometry { which } => geometry(c, &cfg, which)?,
        Cmd::Report { run } => {
            let dir = run.unwrap_or_else(|| c.out.clone());
            let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
                .map_err(|e| Error::Integrity { path: dir.join("manifest.json"), reason: e.to_string() })?;
            let mut gate = None;
            let mut models: Vec<(String, EvalReport, ModelAnalysis)> = Vec::new();
            let mut evals: Vec<EvalReport> = Vec::new();
            for s in &manifest.stages {
                let p = PathBuf::from(&s.path);
                let sidecar = p.with_extension("json");
                if s.stage == "frontend" {
                    let v: serde_json::Value = serde_json::from_slice(&fs::read(&sidecar)?)?;
                    gate = Some(serde_json::from_value::<GateReport>(v["gate"].clone())?);
                } else if s.stage.starts_with("train:") {
                    let v: serde_json::Value = serde_json::from_slice(&fs::read(&sidecar)?)?;
                    evals.push(serde_json::from_value(v["eval"].clone())?);
                } else if let Some(name) = s.stage.strip_prefix("analysis:") {
                    let a: ModelAnalysis = serde_json::from_slice(&fs::read(&p)?)?;
                    let e = evals.pop().unwrap_or_default();
                    models.push((name.to_string(), e, a));
                }
            }
            let gate = gate.ok_or_else(|| Error::Integrity { path: dir.join("manifest.json"), reason: "no frontend stage".into() })?;
            let bundle = emit_report(&c.out.join("report"), &gate, &models)?;
            say(c, bundle.summary);
        }
        Cmd::Run => {
            let out = run_pipeline(&cfg, &RunOptions { out: c.out.clone(), quiet: c.quiet })?;
            say(c, format!("manifest {}", out.manifest.content_hash()));
            say(c, out.report.summary);
        }
    }
    Ok(())
}

fn geometry(c: &Common, cfg: &PipelineConfig, which: GeometryCmd) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match which {
        GeometryCmd::Ortho { decoders, bootstrap } => {
            let set = load_decoders(&decoders)?;
            let idx = ortho_index(set.normals().view(), bootstrap, &mut rng, "decoders")?;
            write_json(&c.out.join("ortho.json"), &serde_json::to_value(&idx)?)?;
            say(c, format!("ortho index {:.4}", idx.value));
        }
        GeometryCmd::Procrustes { decoders, target } => {
            let a = load_decoders(&decoders)?;
            let b = load_decoders(&target)?;
            let al = procrustes_align(a.standardized_normals().view(), b.standardized_normals().view())?;
            let residual = al.residual(a.standardized_normals().view(), b.standardized_normals().view());
            write_json(&c.out.join("procrustes.json"), &json!({ "scale": al.s, "residual": residual, "rank_deficient": al.rank_deficient }))?;
            say(c, format!("scale {:.4}, residual {residual:.6}", al.s));
        }
        GeometryCmd::Swap { bank, task, shift, bias } => {
            let bank = trace::load(&bank)?;
            let task = parse_task(&task)?;
            let bias = match bias.as_str() {
                "source" => BiasSource::Source,
                "target" => BiasSource::Target,
                other => return Err(Error::Config(format!("unknown bias source `{other}`"))),
            };
            let rep = swap_test(&bank, task.feature, task, shift, bias, &cfg.analysis.cv)?;
            let mut w = csv::Writer::from_path(c.out.join("swap.csv")).map_err(Error::from)?;
            for r in &rep.rows {
                w.serialize(r).map_err(Error::from)?;
            }
            w.flush()?;
            if let Some((_, t, s)) = rep.paired_means() {
                say(c, format!("time shift {t:.4}, stimulus shift {s:.4}"));
            }
        }
        GeometryCmd::Causal { bank, checkpoint, decoders, value } => {
            let bank = trace::load(&bank)?;
            let set = load_decoders(&decoders)?;
            let feature = set.meta.feature.ok_or_else(|| Error::Config("decoder archive has no feature".into()))?;
            let dec = set
                .decoders
                .iter()
                .find(|d| d.value == value)
                .ok_or_else(|| Error::Config(format!("no decoder for value {value}")))?;
            let model = Checkpoint::<f32>::load(&checkpoint)?.model;
            let (cache, _) = cache_for(cfg, &c.out)?;
            if cache.frontend().content_hash() != bank.frontend_hash {
                return Err(Error::Integrity { path: c.out.join("artifacts"), reason: "frontend differs from the bank's".into() });
            }
            let task = TaskSpec::new(feature, 1);
            let trials: Vec<_> = bank
                .trials
                .iter()
                .filter(|t| t.task == task && feature.label(&t.stimuli[0], &bank.canvas) == value)
                .cloned()
                .collect();
            let scale = bank.mean_state_norm(0);
            let mags: Vec<f64> = magnitude_grid(cfg.analysis.causal_points, cfg.analysis.causal_extent).iter().map(|m| m * scale).collect();
            let curve = causal_perturb(&model, &cache, &cfg.suite, &dec.hyperplane(), &trials, &mags)?;
            write_json(&c.out.join("causal.json"), &serde_json::to_value(&curve)?)?;
            say(c, format!("{} trials perturbed over {} magnitudes", trials.len(), mags.len()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
