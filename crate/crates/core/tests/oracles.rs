mod common;

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmgeom::decode::{cross_task_gap, fit_decoder, CvConfig, GeneralizationMatrix, SolverParams, Standardizer};
use wmgeom::geometry::{ortho_value, procrustes_align};
use wmgeom::recurrent::Arch;
use wmgeom::stimulus::{Background, StimulusSpec};
use wmgeom::task::{label_step, Feature, Response, TaskSpec};

#[test]
fn label_oracle_is_exact() {
    let (bad, total) = common::label_oracle();
    assert_eq!(total, 3 * 2 * 16 * 3 * 4);
    assert_eq!(bad, 0);
}

#[test]
fn identity_match_requires_same_category() {
    let a = StimulusSpec { category: 0, identity: 1, location: 0, view_angle: 0, background: Background::Blank };
    let b = StimulusSpec { category: 1, ..a };
    let task = TaskSpec::new(Feature::Identity, 1);
    assert_eq!(label_step(&[a, b], 1, &task), Response::NonMatch);
    assert_eq!(label_step(&[a, a], 1, &task), Response::Match);
}

#[test]
fn bptt_matches_finite_differences_at_hidden_16() {
    for arch in Arch::ALL {
        let err = common::gradient_check(arch, 16);
        assert!(err < 1e-4, "{arch:?}: worst relative error {err:e}");
    }
}

#[test]
fn procrustes_recovers_rotation_scale_and_shift() {
    for seed in [1, 2] {
        let o = common::procrustes_oracle(seed);
        assert!(o.recovery < 1e-8, "recovery error {:e}", o.recovery);
        assert!(o.orthogonality < 1e-8, "orthogonality defect {:e}", o.orthogonality);
        assert!(o.residual <= o.best_random, "residual {} above random best {}", o.residual, o.best_random);
    }
}

#[test]
fn closed_forms_hold() {
    for (name, err) in common::closed_forms() {
        assert!(err < 1e-5, "{name}: error {err:e}");
    }
}

#[test]
fn ortho_index_closed_forms() {
    let e = Array2::<f64>::eye(4);
    assert_abs_diff_eq!(ortho_value(e.view()).unwrap(), 1.0, epsilon = 1e-12);
    let twin = ndarray::array![[1.0, 2.0], [2.0, 4.0]];
    assert_abs_diff_eq!(ortho_value(twin.view()).unwrap(), 0.0, epsilon = 1e-12);
}

/// Hard-margin direction in 2D by scanning angles.
#[test]
fn cross_task_gap_closed_form() {
    let tasks = [TaskSpec::new(Feature::Location, 1), TaskSpec::new(Feature::Location, 2), TaskSpec::new(Feature::Category, 1)];
    let names: Vec<String> = tasks.iter().map(|t| t.name()).collect();
    let m = |v: [[f64; 3]; 3]| GeneralizationMatrix { rows: names.clone(), cols: names.clone(), values: ndarray::arr2(&v) };
    let a = m([[1.0, 0.8, 0.6], [0.9, 1.0, 0.5], [0.4, 0.6, 0.9]]);
    let b = m([[0.9, 0.9, 0.9], [0.5, 0.7, 0.3], [0.2, 0.2, 0.8]]);
    let gap = cross_task_gap(&tasks, &[a, b]).unwrap();
    let expect = [(0.3 + 0.0) / 2.0, (0.3 + 0.3) / 2.0, (0.4 + 0.6) / 2.0];
    for (g, e) in gap.iter().zip(expect) {
        assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
    }
}

fn brute_margin(z: &Array2<f64>, y: &[bool]) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..200_000 {
        let th = std::f64::consts::TAU * k as f64 / 200_000.0;
        let (c, s) = (th.cos(), th.sin());
        let proj: Vec<f64> = z.rows().into_iter().map(|r| c * r[0] + s * r[1]).collect();
        let lo_pos = proj.iter().zip(y).filter(|p| *p.1).map(|p| *p.0).fold(f64::INFINITY, f64::min);
        let hi_neg = proj.iter().zip(y).filter(|p| !*p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
        let m = (lo_pos - hi_neg) / 2.0;
        if m > best.0 {
            best = (m, th);
        }
    }
    best
}

#[test]
fn linear_decoder_matches_brute_force_max_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut x = common::gaussian(60, 2, &mut rng);
    let y: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
    for (i, mut r) in x.rows_mut().into_iter().enumerate() {
        let s = if y[i] { 1.0 } else { -1.0 };
        r[0] += 2.5 * s;
        r[1] += 1.0 * s;
    }
    let z = Standardizer::fit(x.view()).apply(x.view());
    let (margin, th) = brute_margin(&z, &y);
    assert!(margin > 0.0, "synthetic data must be separable");
    let cfg = CvConfig {
        folds: 3,
        grid: vec![1e4],
        solver: SolverParams { bias_scale: 10.0, tol: 1e-9, max_epochs: 200_000, seed: 0 },
        min_per_class: 3,
    };
    let d = fit_decoder(x.view(), &y, &cfg).unwrap();
    let w_th = d.w[1].atan2(d.w[0]);
    let diff = (w_th - th).rem_euclid(std::f64::consts::TAU);
    let diff = diff.min(std::f64::consts::TAU - diff);
    assert!(diff < 1e-2, "direction off by {diff} rad");
    assert_eq!(d.accuracy(x.view(), &y), 1.0);
    // The decoder's geometric margin is the brute-force optimum.
    let n = d.w.dot(&d.w).sqrt();
    let got = z.rows().into_iter().zip(&y).map(|(r, &p)| (d.w.dot(&r) + d.b) / n * if p { 1.0 } else { -1.0 }).fold(f64::INFINITY, f64::min);
    assert!(got > 0.98 * margin, "margin {got} vs optimum {margin}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn procrustes_is_optimal_and_orthogonal(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = common::gaussian(8, 4, &mut rng);
        let rot = common::random_rotation(4, &mut rng);
        let tgt = src.dot(&rot) * scale + &common::gaussian(8, 4, &mut rng) * 0.2;
        let al = procrustes_align(src.view(), tgt.view()).unwrap();
        prop_assert!(wmgeom::linalg::orthogonality_defect(al.r.view()) < 1e-9);
        let best = al.residual(src.view(), tgt.view());
        for _ in 0..50 {
            let other = al.with_rotation(&common::random_rotation(4, &mut rng));
            prop_assert!(best <= other.residual(src.view(), tgt.view()) + 1e-12);
        }
    }

    #[test]
    fn ortho_index_in_unit_interval_and_rotation_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = common::gaussian(5, 6, &mut rng);
        let v = ortho_value(w.view()).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let rot = common::random_rotation(6, &mut rng);
        let v2 = ortho_value(w.dot(&rot).view()).unwrap();
        prop_assert!((v - v2).abs() < 1e-10);
    }
}
