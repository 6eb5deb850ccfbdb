//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Quantitative criteria run the desk configuration per seed, caching stage
//! artifacts under `target/acceptance-cache`, and take the majority over
//! seeds 1..=3 (seed 3 only runs when seeds 1 and 2 disagree somewhere).
//! Property criteria run deterministically. The process exits non-zero only
//! when a property criterion fails; quantitative verdicts are reported.
//!
//! `WMGEOM_ACCEPTANCE=properties` skips the desk runs.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use wmgeom::geometry::{paired_t_test, sign_test};
use wmgeom::pipeline::{run_pipeline, ModelRun, PipelineConfig, RunOptions, RunOutput};
use wmgeom::recurrent::Arch;
use wmgeom::stimulus::Split;
use wmgeom::task::{DietMode, Feature};

const SEEDS: [u64; 3] = [1, 2, 3];
const CPU_HOURS: f64 = 4.0;
/// Smallest no_action increase counted as a rise.
const NO_ACTION_RISE: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        f64::NAN
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

struct SeedRun {
    seed: u64,
    out: RunOutput,
    /// Wall time of the run that trained the models.
    seconds: Option<f64>,
}

impl SeedRun {
    fn mtmf(&self, arch: Arch) -> Option<&ModelRun> {
        self.out.models.iter().find(|m| m.spec.arch == arch && m.spec.diet == DietMode::Mtmf)
    }

    fn stsf(&self) -> Option<&ModelRun> {
        self.out.models.iter().find(|m| m.spec.diet == DietMode::Stsf)
    }
}

fn desk_run(seed: u64) -> wmgeom::Result<SeedRun> {
    let mut cfg = PipelineConfig::load(&workspace().join("configs/desk.toml"))?;
    cfg.seed = seed;
    let dir = workspace().join("target/acceptance-cache").join(format!("seed{seed}"));
    fs::create_dir_all(&dir)?;
    let timing = dir.join("train_seconds");
    let t0 = Instant::now();
    let out = run_pipeline(&cfg, &RunOptions { out: dir.clone(), quiet: false })?;
    let trained = out.manifest.stages.iter().any(|s| s.stage.starts_with("train:") && !s.cached);
    if trained {
        fs::write(&timing, format!("{}", t0.elapsed().as_secs_f64()))?;
    }
    let seconds = fs::read_to_string(&timing).ok().and_then(|s| s.trim().parse().ok());
    Ok(SeedRun { seed, out, seconds })
}

fn c1(r: &SeedRun) -> Verdict {
    let Some(m) = r.mtmf(Arch::Gru) else { return verdict(false, "no MTMF GRU") };
    let train = m.eval.accuracy(Split::Train).unwrap_or(f64::NAN);
    let angle = m.eval.accuracy(Split::NovelAngle).unwrap_or(f64::NAN);
    let ident = m.eval.accuracy(Split::NovelIdentity).unwrap_or(f64::NAN);
    let hours = r.seconds.map(|s| s / 3600.0);
    let pass = train >= 0.90 && angle >= 0.85 && ident < angle && m.iterations <= 20_000 && hours.is_some_and(|h| h <= CPU_HOURS);
    let h = hours.map_or("unknown".into(), |h| format!("{h:.2} h"));
    verdict(pass, format!("train {train:.3}, novel angle {angle:.3}, novel identity {ident:.3}, {} iterations, run {h}", m.iterations))
}

fn c2(r: &SeedRun) -> Verdict {
    let g = &r.out.gate;
    let pass = g.location >= 0.99 && g.identity >= 0.99 && g.category >= 0.99;
    verdict(pass, format!("L {:.4}, I {:.4}, C {:.4}", g.location, g.identity, g.category))
}

fn c3(r: &SeedRun) -> Verdict {
    let (Some(m), Some(s)) = (r.mtmf(Arch::Gru), r.stsf()) else { return verdict(false, "missing MTMF or STSF GRU") };
    let acc = |run: &ModelRun, f: Feature| run.analysis.relevance.iter().find(|x| x.feature == f).map(|x| (x.accuracy, x.relevant));
    let mut pass = true;
    let mut parts = Vec::new();
    for f in Feature::ALL {
        let Some((a, _)) = acc(m, f) else { return verdict(false, "missing relevance table") };
        pass &= a >= 0.85;
        parts.push(format!("MTMF {} {a:.3}", f.short()));
        if let Some((b, false)) = acc(s, f) {
            pass &= a - b >= 0.10;
            parts.push(format!("STSF {} {b:.3}", f.short()));
        }
    }
    verdict(pass, parts.join(", "))
}

fn c4(r: &SeedRun) -> Verdict {
    let gaps = |a: Arch| -> Option<BTreeMap<String, f64>> {
        let m = r.mtmf(a)?;
        (!m.analysis.cross_task_gap.is_empty()).then(|| m.analysis.cross_task_gap.iter().map(|g| (g.task.clone(), g.gap)).collect())
    };
    let (Some(v), Some(g), Some(l)) = (gaps(Arch::Vanilla), gaps(Arch::Gru), gaps(Arch::Lstm)) else {
        return verdict(false, "missing cross-task gaps");
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, other) in [("GRU", &g), ("LSTM", &l)] {
        let d: Vec<f64> = v.iter().filter_map(|(t, x)| other.get(t).map(|y| y - x)).collect();
        let (pos, neg, p) = sign_test(&d);
        pass &= pos > neg && p < 0.05;
        parts.push(format!("vanilla below {name} in {pos}/{} tasks, p {p:.4}", pos + neg));
    }
    parts.push(format!("mean gaps vanilla {:.3} GRU {:.3} LSTM {:.3}", mean_of(&v), mean_of(&g), mean_of(&l)));
    verdict(pass, parts.join("; "))
}

fn mean_of(m: &BTreeMap<String, f64>) -> f64 {
    mean(&m.values().copied().collect::<Vec<_>>())
}

const ARCHS: [Arch; 3] = [Arch::Gru, Arch::Vanilla, Arch::Lstm];

/// Evaluates `f` on each MTMF architecture; passes when at least two do.
fn two_of_three(r: &SeedRun, f: impl Fn(&ModelRun) -> Verdict) -> Verdict {
    let mut passed = 0;
    let mut parts = Vec::new();
    for a in ARCHS {
        let v = match r.mtmf(a) {
            Some(m) => f(m),
            None => verdict(false, "missing"),
        };
        passed += v.pass as usize;
        parts.push(format!("{} {} ({})", a.name(), if v.pass { "ok" } else { "no" }, v.detail));
    }
    verdict(passed >= 2, parts.join("; "))
}

fn c5(r: &SeedRun) -> Verdict {
    two_of_three(r, |m| {
        let Some(o) = &m.analysis.ortho else { return verdict(false, "no ortho") };
        let Some(c) = &o.comparison else { return verdict(false, "degenerate test") };
        let pca = o.pca_comparison.as_ref().map(|p| p.mean_encoding < p.mean_perceptual);
        let pass = c.mean_encoding < c.mean_perceptual && c.test.p < 0.05 && pca == Some(true);
        verdict(pass, format!("O(P) {:.3} O(E) {:.3} p {:.3}, PCA direction held {:?}", c.mean_perceptual, c.mean_encoding, c.test.p, pca))
    })
}

fn c6(r: &SeedRun) -> Verdict {
    two_of_three(r, |m| {
        let (mut losses, mut diffs) = (Vec::new(), Vec::new());
        for ct in &m.analysis.cross_time {
            let non: Vec<f64> = ct.targets.iter().filter(|(t, _, e)| *t > ct.source && !e).map(|x| x.1).collect();
            let exec: Vec<f64> = ct.targets.iter().filter(|(t, _, e)| *t > ct.source && *e).map(|x| x.1).collect();
            if non.is_empty() {
                continue;
            }
            losses.push(ct.validation - mean(&non));
            if !exec.is_empty() {
                diffs.push(mean(&exec) - mean(&non));
            }
        }
        let loss = mean(&losses);
        let Ok(t) = paired_t_test(&diffs) else { return verdict(false, format!("loss {loss:.3}, degenerate paired test")) };
        let pass = loss >= 0.15 && mean(&diffs) > 0.0 && t.p < 0.05;
        verdict(pass, format!("loss {loss:.3}, executive margin {:.3} p {:.2e} over {} pairs", mean(&diffs), t.p, diffs.len()))
    })
}

fn c7(r: &SeedRun) -> Verdict {
    two_of_three(r, |m| {
        if m.analysis.cross_stimulus.len() != Feature::ALL.len() {
            return verdict(false, "missing cross-stimulus matrices");
        }
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for fm in &m.analysis.cross_stimulus {
            let v = &fm.matrix.values;
            let n = v.nrows();
            let diag = mean(&(0..n).map(|i| v[[i, i]]).collect::<Vec<_>>());
            let off = mean(&(0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|ij| v[ij]).collect::<Vec<_>>());
            worst = worst.max(diag - off);
            parts.push(format!("{} {diag:.3}/{off:.3}", fm.feature.short()));
        }
        verdict(worst <= 0.05, parts.join(" "))
    })
}

fn c8(r: &SeedRun) -> Verdict {
    let (mut fit_gap, mut stim_gap, mut time_drop) = (Vec::new(), Vec::new(), Vec::new());
    for a in ARCHS {
        let Some(m) = r.mtmf(a) else { continue };
        for rows in m.analysis.swaps.iter().map(|s| &s.rows) {
            for row in rows {
                fit_gap.push(row.fitted - row.baseline);
                if let Some(s) = row.stimulus_shift {
                    stim_gap.push((s - row.baseline).abs());
                    if let Some(t) = row.time_shift {
                        time_drop.push(s - t);
                    }
                }
            }
        }
    }
    if fit_gap.is_empty() || time_drop.is_empty() {
        return verdict(false, "no swap rows");
    }
    let (f, s, t) = (mean(&fit_gap), mean(&stim_gap), mean(&time_drop));
    let pass = f <= 0.05 && s <= 0.10 && t >= 0.15;
    verdict(pass, format!("fitted minus reconstructed {f:.3}, stimulus-shift deviation {s:.3}, time-shift drop {t:.3}"))
}

fn c9(r: &SeedRun) -> Verdict {
    two_of_three(r, |m| {
        let Some(c) = &m.analysis.causal else { return verdict(false, "no curve") };
        let zero = c.magnitudes.iter().position(|&x| x == 0.0).unwrap_or(c.magnitudes.len() / 2);
        let last = c.magnitudes.len() - 1;
        let pos = &c.probabilities[zero..];
        let monotone = pos.windows(2).all(|w| w[1][0] <= w[0][0]);
        let [m0, _, n0] = c.probabilities[zero];
        let [mx, _, nx] = c.probabilities[last];
        let pass = monotone && mx < 0.5 && nx - n0 >= NO_ACTION_RISE;
        verdict(pass, format!("match {m0:.3} to {mx:.3} monotone {monotone}, no_action {n0:.3} to {nx:.3}"))
    })
}

type Check = fn(&SeedRun) -> Verdict;

fn quantitative(lines: &mut Vec<(usize, bool, String)>) {
    let checks: [(usize, Check); 9] = [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9)];
    let mut results: BTreeMap<usize, Vec<(u64, Verdict)>> = BTreeMap::new();
    for &seed in &SEEDS {
        if seed == 3 {
            let agree = results.values().all(|v| v.len() == 2 && v[0].1.pass == v[1].1.pass);
            if agree {
                eprintln!("seeds 1 and 2 agree on every criterion; seed 3 skipped");
                break;
            }
        }
        eprintln!("desk run, seed {seed}");
        match desk_run(seed) {
            Ok(run) => {
                for (n, f) in checks {
                    results.entry(n).or_default().push((run.seed, f(&run)));
                }
            }
            Err(e) => {
                for (n, _) in checks {
                    results.entry(n).or_default().push((seed, verdict(false, format!("run failed: {e}"))));
                }
            }
        }
    }
    for (n, vs) in results {
        let passed = vs.iter().filter(|v| v.1.pass).count();
        let pass = passed >= 2;
        let detail: Vec<String> = vs.iter().map(|(s, v)| format!("seed {s} {}: {}", if v.pass { "pass" } else { "fail" }, v.detail)).collect();
        lines.push((n, pass, format!("{passed}/{} seeds; {}", vs.len(), detail.join(" | "))));
    }
}

fn c10() -> Verdict {
    let t0 = Instant::now();
    let errs: Vec<(Arch, f64)> = ARCHS.iter().map(|&a| (a, common::gradient_check(a, 16))).collect();
    let secs = t0.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let parts: Vec<String> = errs.iter().map(|(a, e)| format!("{} {e:.2e}", a.name())).collect();
    verdict(worst < 1e-4 && secs < 60.0, format!("{}, {secs:.1} s", parts.join(", ")))
}

fn c11() -> Verdict {
    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..3 {
        let o = common::procrustes_oracle(seed);
        pass &= o.recovery < 1e-8 && o.orthogonality < 1e-8 && o.residual <= o.best_random;
        worst = (worst.0.max(o.recovery), worst.1.max(o.orthogonality));
    }
    verdict(pass, format!("recovery {:.1e}, orthogonality {:.1e}, residual below best random rotation", worst.0, worst.1))
}

fn c12() -> Verdict {
    let (bad, total) = common::label_oracle();
    verdict(bad == 0, format!("{bad} mismatches over {total} sequences"))
}

fn c13() -> Verdict {
    let cases = common::closed_forms();
    let worst = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let fails: Vec<&str> = cases.iter().filter(|c| !(c.1 < 1e-5)).map(|c| c.0).collect();
    verdict(fails.is_empty(), format!("{} cases, worst error {worst:.1e}{}", cases.len(), if fails.is_empty() { String::new() } else { format!(", failing: {}", fails.join(", ")) }))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).expect("readable dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(p.strip_prefix(root).expect("under root").to_path_buf(), fs::read(&p).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn c14() -> Verdict {
    let run = || -> wmgeom::Result<(tempfile::TempDir, RunOutput)> {
        let mut cfg = PipelineConfig::load(&workspace().join("configs/smoke.toml"))?;
        cfg.seed = 14;
        let dir = tempfile::tempdir()?;
        let out = run_pipeline(&cfg, &RunOptions { out: dir.path().to_path_buf(), quiet: true })?;
        Ok((dir, out))
    };
    let (a, b) = match (run(), run()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return verdict(false, format!("run failed: {e}")),
    };
    let (ta, tb) = (tree(a.0.path()), tree(b.0.path()));
    let same_manifest = a.1.manifest.content_hash() == b.1.manifest.content_hash();
    let banks = ta.keys().filter(|p| p.to_string_lossy().contains("bank-")).count();
    let decoders = ta.keys().filter(|p| p.to_string_lossy().contains("decoders-")).count();
    let reports = ta.keys().filter(|p| p.starts_with("report")).count();
    let pass = same_manifest && ta == tb && banks > 0 && decoders > 0 && reports > 0;
    verdict(pass, format!("{} files identical (bank files {banks}, decoder archives {decoders}, report files {reports})", ta.len()))
}

fn main() {
    let mut lines: Vec<(usize, bool, String)> = Vec::new();
    let mut skipped = Vec::new();
    let properties_only = std::env::var("WMGEOM_ACCEPTANCE").is_ok_and(|v| v == "properties");
    if properties_only {
        for n in 1..=9 {
            skipped.push(n);
        }
    } else {
        quantitative(&mut lines);
    }
    let props: [(usize, fn() -> Verdict); 5] = [(10, c10), (11, c11), (12, c12), (13, c13), (14, c14)];
    let mut property_failed = false;
    for (n, f) in props {
        let v = f();
        property_failed |= !v.pass;
        lines.push((n, v.pass, v.detail));
    }
    for n in &skipped {
        println!("criterion {n:>2} SKIP: desk runs disabled");
    }
    for (n, pass, detail) in &lines {
        println!("criterion {n:>2} {}: {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    let passed = lines.iter().filter(|l| l.1).count();
    println!("{passed}/{} criteria pass", lines.len() + skipped.len());
    if property_failed {
        std::process::exit(1);
    }
}
