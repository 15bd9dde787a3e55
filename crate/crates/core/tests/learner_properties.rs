use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakspot_core::data::{bind, ClassVocabulary, DatasetBundle, EmbeddingStore, Record, Split};
use weakspot_core::learner::{finetune, train, train_with_history, LinearClassifier, TrainConfig};

fn random_instance(seed: u64, classes: usize, dim: usize, n: usize) -> (LinearClassifier, Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let mut m = LinearClassifier::zeros(ClassVocabulary::from_labels(labels), dim, 0.05);
    m.weights_mut()
        .iter_mut()
        .for_each(|w| *w = rng.random_range(-1.0..1.0));
    m.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let xs = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (m, xs, ys)
}

/// Largest relative error between analytic and central-difference gradients.
fn gradient_error(seed: u64) -> f64 {
    let (m, xs, ys) = random_instance(seed, 5, 8, 12);
    let rows: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
    let (_, g) = m.loss_and_gradient(&rows, &ys).unwrap();
    let h = 1e-4;
    let loss_at = |m: &LinearClassifier| m.loss_and_gradient(&rows, &ys).unwrap().0;
    let mut worst = 0.0f64;
    let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
    for (p, &a) in analytic.iter().enumerate() {
        let bump = |delta: f64| {
            let mut c = m.clone();
            if p < c.weights().len() {
                c.weights_mut()[p] += delta;
            } else {
                let q = p - c.weights().len();
                c.bias_mut()[q] += delta;
            }
            loss_at(&c)
        };
        let numeric = (bump(h) - bump(-h)) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let err = gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn fixture(order: &[usize]) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base: Vec<(Vec<f32>, &str)> = (0..60)
        .map(|i| {
            let c = ["x", "y", "z"][i % 3];
            let off = (i % 3) as f32 * 2.0;
            (
                vec![off + rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)],
                c,
            )
        })
        .collect();
    let rows: Vec<Vec<f32>> = order.iter().map(|&i| base[i].0.clone()).collect();
    let records = order
        .iter()
        .map(|&i| Record::new(format!("r{i:02}"), Split::Train, base[i].1))
        .collect();
    bind(EmbeddingStore::from_rows(2, &rows).unwrap(), records).unwrap()
}

#[test]
fn training_ignores_record_order() {
    let forward: Vec<usize> = (0..60).collect();
    let mut shuffled = forward.clone();
    shuffled.reverse();
    shuffled.swap(3, 40);
    let cfg = TrainConfig::default();
    let a = train(&fixture(&forward), &cfg).unwrap();
    let b = train(&fixture(&shuffled), &cfg).unwrap();
    // vocabulary order follows first appearance; compare per label
    for label in ["x", "y", "z"] {
        let (ia, ib) = (
            a.vocabulary().position(label).unwrap(),
            b.vocabulary().position(label).unwrap(),
        );
        for d in 0..2 {
            assert!((a.weights()[ia * 2 + d] - b.weights()[ib * 2 + d]).abs() < 1e-9);
        }
        assert!((a.bias()[ia] - b.bias()[ib]).abs() < 1e-9);
    }
}

#[test]
fn loss_never_increases_at_default_rate() {
    let (_, hist) = train_with_history(&fixture(&(0..60).collect::<Vec<_>>()), &TrainConfig::default()).unwrap();
    assert_eq!(hist.len(), 201);
    assert!((hist[0] - 3f64.ln()).abs() < 1e-12);
    assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn deterministic_across_runs() {
    let b = fixture(&(0..60).collect::<Vec<_>>());
    let cfg = TrainConfig::default();
    assert_eq!(train(&b, &cfg).unwrap(), train(&b, &cfg).unwrap());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let b = fixture(&(0..60).collect::<Vec<_>>());
    let m = train(&b, &TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    let back = LinearClassifier::load(&path).unwrap();
    assert_eq!(back.vocabulary(), m.vocabulary());
    for (x, y) in back
        .weights()
        .iter()
        .chain(back.bias())
        .zip(m.weights().iter().chain(m.bias()))
    {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    std::fs::write(&path, b"WSCKjunk").unwrap();
    assert!(LinearClassifier::load(&path).is_err());
}

#[test]
fn cold_finetune_equals_fresh_training() {
    let b = fixture(&(0..60).collect::<Vec<_>>());
    let cfg = TrainConfig::default();
    let m = train(&b, &cfg).unwrap();
    let cold = TrainConfig {
        warm_start: false,
        ..cfg.clone()
    };
    assert_eq!(finetune(&m, &b, &cold).unwrap(), train(&b, &cfg).unwrap());
    assert_ne!(finetune(&m, &b, &cfg).unwrap(), m);
}
