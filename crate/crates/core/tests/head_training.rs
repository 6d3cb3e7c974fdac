use std::time::Instant;

use atelier_core::dataset::{ManifestEntry, Partition, SplitManifest};
use atelier_core::head::{
    accuracy, extract_features, loss_and_grad, train_head, train_head_from, FeatureRow, FeatureTable, HeadWeights,
    Hyperparams,
};
use atelier_core::model::synthetic::synthetic_archive;
use atelier_core::model::{build_model, Tap};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_head(rng: &mut ChaCha8Rng, d: usize, k: usize) -> HeadWeights {
    let mut h = HeadWeights::zeros(d, k);
    h.w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    h.b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    h
}

/// Central-difference check of every weight and bias coordinate.
fn max_relative_gradient_error(seed: u64) -> f64 {
    const EPS: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, k, b) = (8, 4, 6);
    let head = random_head(&mut rng, d, k);
    let x: Vec<f32> = (0..b * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let analytic = loss_and_grad(&head, &x, &y).unwrap();
    let loss_at = |h: &HeadWeights| loss_and_grad(h, &x, &y).unwrap().loss;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for i in 0..d * k {
        let (mut plus, mut minus) = (head.clone(), head.clone());
        plus.w[i] += EPS;
        minus.w[i] -= EPS;
        worst = worst.max(rel(analytic.dw[i], (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS)));
    }
    for i in 0..k {
        let (mut plus, mut minus) = (head.clone(), head.clone());
        plus.b[i] += EPS;
        minus.b[i] -= EPS;
        worst = worst.max(rel(analytic.db[i], (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS)));
    }
    worst
}

#[test]
fn gradients_match_central_differences_over_twenty_seeds() {
    for seed in 0..20 {
        let err = max_relative_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

/// Three Gaussian blobs (σ = 1) whose centres are 10σ apart along distinct axes.
fn blobs(dim: usize, per_class_train: usize, per_class_val: usize, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FeatureTable::new(Tap::Pooled, dim, vec!["a".into(), "b".into(), "c".into()]);
    for class in 0..3 {
        for i in 0..per_class_train + per_class_val {
            let mut e: Vec<f32> = (0..dim).map(|_| gaussian(&mut rng) as f32).collect();
            e[class] += 10.0;
            let partition = if i < per_class_train { Partition::Train } else { Partition::Val };
            t.push(FeatureRow {
                id: format!("{class}/{i}"),
                embedding: e,
                class_index: class,
                partition,
            })
            .unwrap();
        }
    }
    t
}

#[test]
fn separable_blobs_reach_full_train_accuracy() {
    let table = blobs(2048, 100, 20, 11);
    let hp = Hyperparams {
        epochs: 200,
        seed: 3,
        ..Hyperparams::default()
    };
    let start = Instant::now();
    let head = train_head(&table, &hp).unwrap();
    let elapsed = start.elapsed();
    let acc = accuracy(&head, table.partition(Partition::Train));
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    assert_eq!(head.history.len(), 200);
    assert!(head.history.windows(2).all(|w| w[1].epoch > w[0].epoch));
    assert!(head.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn small_learning_rate_loss_is_non_increasing() {
    let table = blobs(64, 50, 10, 12);
    let hp = Hyperparams {
        learning_rate: 1e-3,
        epochs: 10,
        ..Hyperparams::default()
    };
    let head = train_head(&table, &hp).unwrap();
    let losses: Vec<f64> = head.history.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let table = blobs(16, 10, 5, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = random_head(&mut rng, 16, 3);
    let hp = Hyperparams {
        learning_rate: 0.0,
        epochs: 7,
        ..Hyperparams::default()
    };
    let out = train_head_from(&table, &hp, init.clone()).unwrap();
    assert_eq!(out.w, init.w);
    assert_eq!(out.b, init.b);
    assert_eq!(out.history.len(), 7);
}

#[test]
fn same_seed_gives_bit_identical_weights() {
    let table = blobs(32, 30, 10, 14);
    let hp = Hyperparams {
        epochs: 5,
        seed: 99,
        ..Hyperparams::default()
    };
    let a = train_head(&table, &hp).unwrap();
    let b = train_head(&table, &hp).unwrap();
    assert!(a.w.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a, b);
    let c = train_head(&table, &Hyperparams { seed: 100, ..hp }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn argmax_is_invariant_to_a_constant_logit_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let head = random_head(&mut rng, 10, 5);
    let mut shifted = head.clone();
    shifted.b.iter_mut().for_each(|b| *b += 123.0);
    for _ in 0..50 {
        let x: Vec<f32> = (0..10).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        assert_eq!(head.predict(&x), shifted.predict(&x));
    }
}

fn write_image(path: &std::path::Path, seed: u32) {
    let img = RgbImage::from_fn(40, 30, |x, y| Rgb([(x * 6 + seed * 40) as u8, (y * 8) as u8, (seed * 90 % 256) as u8]));
    img.save(path).unwrap();
}

#[test]
fn extraction_and_training_leave_the_backbone_untouched() {
    let dir = tempfile::tempdir().unwrap();
    for (class, n) in [("a", 2u32), ("b", 2)] {
        std::fs::create_dir_all(dir.path().join(class)).unwrap();
        for i in 0..n {
            write_image(&dir.path().join(format!("{class}/{i}.png")), i + if class == "a" { 0 } else { 3 });
        }
    }
    std::fs::write(dir.path().join("a/broken.png"), b"not an image").unwrap();
    let entry = |path: &str, class_index, partition| ManifestEntry {
        path: path.into(),
        class_index,
        partition,
    };
    let manifest = SplitManifest {
        classes: vec!["a".into(), "b".into()],
        entries: vec![
            entry("a/0.png", 0, Partition::Train),
            entry("b/0.png", 1, Partition::Train),
            entry("a/1.png", 0, Partition::Val),
            entry("b/1.png", 1, Partition::Val),
            entry("a/0.png", 0, Partition::Train),
            entry("a/broken.png", 0, Partition::Train),
        ],
        warnings: vec![],
    };

    let model = build_model(2, &synthetic_archive(2, 21)).unwrap();
    let before = model.backbone_checksum();
    let table = extract_features(&model, &manifest, dir.path(), Tap::Pooled).unwrap();
    assert_eq!(table.len(), 5);
    assert_eq!(table.skipped, vec!["a/broken.png".to_string()]);
    assert_eq!(table.get("a/0.png").unwrap().embedding, table.get("a/0.png#2").unwrap().embedding);

    let path = dir.path().join("features.atlr");
    table.save(&path).unwrap();
    let reloaded = FeatureTable::load(&path).unwrap();
    assert_eq!(reloaded.rows(), table.rows());

    let head = train_head(&reloaded, &Hyperparams { epochs: 3, ..Default::default() }).unwrap();
    let tuned = head.apply_to(model.clone()).unwrap();
    assert_eq!(model.backbone_checksum(), before);
    assert_eq!(tuned.backbone_checksum(), before);
    assert_ne!(tuned.head_weights(), model.head_weights());
}
