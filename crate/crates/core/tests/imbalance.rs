use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadrisk::evaluation::{roc_curve, ScoredSet};
use roadrisk::forest::{train, Mode, TrainConfig};
use roadrisk::matrix::FeatureMatrix;

/// Roughly 1 positive in 40, with overlapping classes.
fn imbalanced(seed: u64, n: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = (0..4).map(|i| format!("x{i}")).collect();
    let rows: Vec<(Vec<f64>, u8)> = (0..n)
        .map(|_| {
            let y = rng.random_bool(0.025) as u8;
            let shift = if y == 1 { 1.2 } else { 0.0 };
            let x = vec![
                rng.random_range(-1.0..1.0) + shift,
                rng.random_range(-1.0..1.0) + shift * 0.5,
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            (x, y)
        })
        .collect();
    FeatureMatrix::from_rows(names, rows).unwrap()
}

fn recall_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let hit = scores.iter().zip(labels).filter(|(&s, &y)| y == 1 && s >= threshold).count() as f64;
    hit / pos
}

#[test]
fn balanced_forest_recalls_more_at_the_same_threshold() {
    let mut brf_wins = 0;
    let mut auc_pairs = Vec::new();
    for seed in 0..10 {
        let train_m = imbalanced(seed, 3000);
        let test_m = imbalanced(100 + seed, 3000);
        let cfg = TrainConfig { num_trees: 40, seed, ..TrainConfig::default() };
        let rf = train(&train_m, &cfg, Mode::Rf).unwrap().predict_matrix(&test_m).unwrap();
        let brf = train(&train_m, &cfg, Mode::Brf).unwrap().predict_matrix(&test_m).unwrap();
        if recall_at(&brf, test_m.labels(), 0.5) >= recall_at(&rf, test_m.labels(), 0.5) {
            brf_wins += 1;
        }
        let auc = |s: Vec<f64>| roc_curve(&ScoredSet::new(s, test_m.labels().to_vec()).unwrap()).unwrap().auc;
        auc_pairs.push((auc(rf), auc(brf)));
    }
    assert!(brf_wins >= 6, "BRF recall >= RF recall in only {brf_wins}/10 seeds");
    assert!(auc_pairs.iter().all(|&(a, b)| a > 0.7 && b > 0.7), "{auc_pairs:?}");
}

#[test]
fn forest_learns_from_csv_export() {
    let m = imbalanced(9, 800);
    let back = FeatureMatrix::from_csv(&m.to_csv().unwrap(), "label").unwrap();
    assert_eq!(back.labels(), m.labels());
    let cfg = TrainConfig { num_trees: 10, seed: 1, ..TrainConfig::default() };
    let a = train(&m, &cfg, Mode::Brf).unwrap().predict_matrix(&m).unwrap();
    let b = train(&back, &cfg, Mode::Brf).unwrap().predict_matrix(&back).unwrap();
    assert_eq!(a, b);
}
