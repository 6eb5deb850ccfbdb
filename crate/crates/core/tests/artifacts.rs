use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmgeom::decode::{fit_set, load_decoders, save_decoders, CvConfig, DecoderSet};
use wmgeom::recurrent::{Arch, Checkpoint, RecurrentModel};
use wmgeom::stimulus::{CanvasConfig, EmbeddingCache, PerceptualFrontend, Split};
use wmgeom::task::{Feature, MatchBalance, TaskSuite};
use wmgeom::trace::{self, ActivationBank, SpaceKind, SpaceQuery};
use wmgeom::Error;

fn small_bank(arch: Arch) -> (ActivationBank, RecurrentModel<f32>) {
    let canvas = CanvasConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut front = PerceptualFrontend::<f32>::init(&canvas, [4, 4, 4], &mut rng).unwrap();
    front.frozen = true;
    let mut cache = EmbeddingCache::new(front, &canvas).unwrap();
    let suite = TaskSuite::default();
    let model = RecurrentModel::<f32>::init(arch, 16, cache.out_dim(), suite.index_bits(), &mut rng).unwrap();
    let bank = trace::record(&model, &mut cache, &suite, &suite.tasks(), Split::Train, 180, MatchBalance::default(), &mut rng).unwrap();
    (bank, model)
}

fn is_integrity<T: std::fmt::Debug>(r: wmgeom::Result<T>) -> bool {
    matches!(r, Err(Error::Integrity { .. }))
}

#[test]
fn bank_round_trips_and_rejects_damage() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Arch::Gru, Arch::Lstm] {
        let (bank, _) = small_bank(arch);
        let p = dir.path().join("bank.bin");
        trace::persist(&bank, &p).unwrap();
        let back = trace::load(&p).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.cell.is_some(), arch == Arch::Lstm);

        let bytes = std::fs::read(&p).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
        assert!(is_integrity(trace::load(&cut)));

        let mut flipped = bytes.clone();
        let k = bytes.len() / 2;
        flipped[k] ^= 0x40;
        std::fs::write(&cut, &flipped).unwrap();
        assert!(is_integrity(trace::load(&cut)));

        std::fs::write(&cut, b"not a bank").unwrap();
        assert!(is_integrity(trace::load(&cut)));
    }
}

#[test]
fn bank_shape_and_memory_precondition() {
    let (bank, _) = small_bank(Arch::Vanilla);
    assert_eq!(bank.hidden.dim(), (180, 6, 16));
    // Memory rows exist only after their stimulus.
    let q = SpaceQuery::new(SpaceKind::Memory { stimulus: 3, t: 2 }, Feature::Location);
    assert!(bank.slice::<f64>(&q).is_err());
}

#[test]
fn checkpoint_and_decoder_archives_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, model) = small_bank(Arch::Gru);
    let ck = Checkpoint { model: model.clone(), optimizer: None, seed: 3, iteration: 0, meta: serde_json::json!({"k": 1}) };
    let p = dir.path().join("m.ckpt");
    ck.save(&p).unwrap();
    let back = Checkpoint::<f32>::load(&p).unwrap();
    assert_eq!(back.model.content_hash(), model.content_hash());
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(is_integrity(Checkpoint::<f32>::load(&p)));

    let cfg = CvConfig { folds: 3, min_per_class: 3, ..Default::default() };
    let set = fit_set(&bank, &SpaceQuery::new(SpaceKind::Encoding(0), Feature::Location), &cfg).unwrap();
    let dp = dir.path().join("d.bin");
    save_decoders(&set, &dp).unwrap();
    let back: DecoderSet<f64> = load_decoders(&dp).unwrap();
    for (a, b) in set.decoders.iter().zip(&back.decoders) {
        assert_eq!(a.hyperplane(), b.hyperplane());
        assert_eq!(a.value, b.value);
    }
    assert_eq!(back.meta, set.meta);
}

#[test]
fn permuted_labels_decode_at_chance() {
    let (bank, _) = small_bank(Arch::Gru);
    let cfg = CvConfig { folds: 3, min_per_class: 3, ..Default::default() };
    let (x, y) = bank.slice::<f64>(&SpaceQuery::new(SpaceKind::Encoding(0), Feature::Location)).unwrap();
    let real = DecoderSet::fit(x.view(), &y, 4, &cfg).unwrap().cv_accuracy;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut shuffled = y.clone();
    let mut perm = Vec::new();
    for _ in 0..5 {
        shuffled.shuffle(&mut rng);
        perm.push(DecoderSet::fit(x.view(), &shuffled, 4, &cfg).unwrap().cv_accuracy);
    }
    let mean = perm.iter().sum::<f64>() / perm.len() as f64;
    // Chance is 0.25 for four locations.
    assert!((mean - 0.25).abs() < 0.1, "permuted accuracy {mean}");
    assert!(real > mean + 0.2, "real {real} vs permuted {mean}");
}
