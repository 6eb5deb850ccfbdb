//! Oracle suites shared by the integration tests and the acceptance gate.
//! Each returns the measured worst-case quantity so callers can apply and
//! print the tolerance.
#![allow(dead_code)]

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wmgeom::geometry::{ortho_value, procrustes_align};
use wmgeom::linalg::{orthogonality_defect, svd};
use wmgeom::optimize::{adamw_step, cross_entropy, AdamWConfig, OptimizerState};
use wmgeom::recurrent::{layer_norm, Arch, Params, RecurrentModel, SeqInput};
use wmgeom::stimulus::{Background, StimulusSpec};
use wmgeom::task::{label_step, Feature, Response, TaskSpec};

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let g = gaussian(d, d, rng);
    let s = svd(g.view());
    s.u.dot(&s.v.t())
}

fn toy_responses(batch: usize, t: usize) -> Vec<Response> {
    (0..batch).map(|b| Response::ALL[(b + 2 * t) % 3]).collect()
}

fn seq_loss(model: &RecurrentModel<f64>, input: &SeqInput<f64>) -> f64 {
    let pass = model.forward(input).unwrap();
    pass.logits.iter().enumerate().map(|(t, l)| cross_entropy(l.view(), &toy_responses(input.batch(), t)).0).sum()
}

fn bump(p: &mut Params<f64>, mut k: usize, delta: f64) {
    for s in p.slices_mut() {
        if k < s.len() {
            s[k] += delta;
            return;
        }
        k -= s.len();
    }
    panic!("parameter index out of range");
}

/// Worst relative error between BPTT and central differences over every
/// parameter of a freshly initialized model.
pub fn gradient_check(arch: Arch, hidden: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (batch, steps, out_dim, bits) = (3, 4, 12, 6);
    let model = RecurrentModel::<f64>::init(arch, hidden, out_dim, bits, &mut rng).unwrap();
    let perceptual = (0..steps).map(|_| Array2::from_shape_fn((batch, out_dim), |_| rng.random_range(-1.0..1.0))).collect();
    let task = Array2::from_shape_fn((batch, bits), |(i, j)| ((i + j) % 2) as f64);
    let input = SeqInput { perceptual, task };
    let pass = model.forward(&input).unwrap();
    let dl: Vec<Array2<f64>> =
        pass.logits.iter().enumerate().map(|(t, l)| cross_entropy(l.view(), &toy_responses(batch, t)).1).collect();
    let analytic = model.backward(&pass, &input, &dl).unwrap().flatten();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        let mut minus = model.clone();
        bump(&mut plus.params, k, eps);
        bump(&mut minus.params, k, -eps);
        let num = (seq_loss(&plus, &input) - seq_loss(&minus, &input)) / (2.0 * eps);
        // Absolute floor keeps vanishing gradients from dominating.
        worst = worst.max((a - num).abs() / (a.abs() + num.abs()).max(1e-4));
    }
    worst
}

pub struct ProcrustesOracle {
    /// Max |R − R_true| and |reconstruction − target|.
    pub recovery: f64,
    pub orthogonality: f64,
    pub residual: f64,
    pub best_random: f64,
}

/// Target = c · source · R + shift; then a noisy pair whose residual is
/// compared with 10,000 random rotations.
pub fn procrustes_oracle(seed: u64) -> ProcrustesOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, d) = (12, 6);
    let src = gaussian(k, d, &mut rng);
    let r_true = random_rotation(d, &mut rng);
    let shift = gaussian(1, d, &mut rng).row(0).to_owned();
    let tgt = src.dot(&r_true) * 2.7 + &shift;
    let al = procrustes_align(src.view(), tgt.view()).unwrap();
    let rec = al.reconstruct(src.view()).unwrap();
    let recovery = (&al.r - &r_true).iter().chain((&rec - &tgt).iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let orthogonality = orthogonality_defect(al.r.view());

    let noisy = &tgt + &(gaussian(k, d, &mut rng) * 0.5);
    let al = procrustes_align(src.view(), noisy.view()).unwrap();
    let residual = al.residual(src.view(), noisy.view());
    let best_random = (0..10_000)
        .map(|_| al.with_rotation(&random_rotation(d, &mut rng)).residual(src.view(), noisy.view()))
        .fold(f64::INFINITY, f64::min);
    ProcrustesOracle { recovery, orthogonality, residual, best_random }
}

fn spec_with(feature: Feature, value: usize, noise: usize) -> StimulusSpec {
    let mut s =
        StimulusSpec { category: noise % 2, identity: (noise / 2) % 2, location: (noise / 4) % 2, view_angle: 0, background: Background::Blank };
    match feature {
        Feature::Location => s.location = value,
        Feature::Category => s.category = value,
        Feature::Identity => {
            s.category = 0;
            s.identity = value;
        }
    }
    s
}

/// Number of labels that disagree with the brute-force definition over all
/// length-4 sequences of two attribute values, N ∈ {1, 2}, every feature.
/// Returns (mismatches, checked).
pub fn label_oracle() -> (usize, usize) {
    let (mut bad, mut total) = (0, 0);
    for feature in Feature::ALL {
        for n in 1..=2 {
            let task = TaskSpec::new(feature, n);
            for code in 0..16usize {
                let values: Vec<usize> = (0..4).map(|k| (code >> k) & 1).collect();
                for noise in [0usize, 3, 5] {
                    let stimuli: Vec<StimulusSpec> =
                        values.iter().enumerate().map(|(k, &v)| spec_with(feature, v, noise * (k + 1))).collect();
                    for t in 0..4 {
                        let want = if t < n {
                            Response::NoAction
                        } else if values[t] == values[t - n] {
                            Response::Match
                        } else {
                            Response::NonMatch
                        };
                        total += 1;
                        if label_step(&stimuli, t, &task) != want {
                            bad += 1;
                        }
                    }
                }
            }
        }
    }
    (bad, total)
}

/// `(name, measured error)` for each closed-form case.
pub fn closed_forms() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let z = Array2::<f64>::zeros((4, 3));
    let (ce, _) = cross_entropy(z.view(), &[Response::Match, Response::NonMatch, Response::NoAction, Response::Match]);
    out.push(("cross-entropy of uniform logits = ln 3", (ce - 3f64.ln()).abs()));

    let orth = array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
    let par = array![[1.0, 1.0], [-2.0, -2.0]];
    let sixty = array![[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
    out.push(("ortho index of orthogonal normals = 1", (ortho_value(orth.view()).unwrap() - 1.0).abs()));
    out.push(("ortho index of parallel normals = 0", ortho_value(par.view()).unwrap().abs()));
    out.push(("ortho index at 60 degrees = 0.5", (ortho_value(sixty.view()).unwrap() - 0.5).abs()));

    let lr = 1e-3;
    let mut worst: f64 = 0.0;
    for g in [0.3, -2.0, 1e-3] {
        let mut p = [1.0];
        let mut st = OptimizerState::<f64>::new(&[1]);
        adamw_step(&mut [&mut p[..]], &[&[g][..]], &mut st, lr, &AdamWConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
        worst = worst.max((p[0] - (1.0 - lr * g / (g.abs() + 1e-8))).abs());
    }
    out.push(("AdamW first step = -lr * g / (|g| + eps)", worst));
    let mut p = [2.0, -0.5];
    let mut st = OptimizerState::<f64>::new(&[2]);
    let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
    adamw_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut st, lr, &cfg).unwrap();
    let decay = 1.0 - lr * 0.1;
    out.push(("AdamW zero gradient decays by (1 - lr * wd)", (p[0] - 2.0 * decay).abs().max((p[1] + 0.5 * decay).abs())));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = gaussian(8, 32, &mut rng) * 7.0 + 3.0;
    let (y, _) = layer_norm(&u);
    let mut ln: f64 = 0.0;
    for row in y.rows() {
        let m = row.mean().unwrap();
        let v = row.mapv(|x| (x - m).powi(2)).mean().unwrap();
        ln = ln.max(m.abs()).max((v - 1.0).abs());
    }
    out.push(("layer norm zero mean, unit variance", ln));
    out
}
