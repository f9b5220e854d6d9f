//! Random Forest and Balanced Random Forest via weighted Poisson bootstrap.
//!
//! Each row i appears in a tree `Poisson(λ_i)` times, with
//! `λ_i = row_weight × class_weight × subsampling_rate`. In `brf` mode the
//! negative class weight defaults to `n_pos / n_neg`, which balances the
//! expected class totals in every tree.

mod tree;

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::FeatureMatrix;
use crate::seed::{derive_seed, rng_for};

pub use tree::{best_split, gini, gini_from_totals, Node, Side, Split, Tree, MIN_GAIN};
use tree::{GrowParams, Grower};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rf,
    Brf,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Rf => "rf",
            Mode::Brf => "brf",
        })
    }
}

/// Number of candidate features drawn at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "FeaturesRepr", into = "FeaturesRepr")]
pub enum FeaturesPerSplit {
    #[default]
    Sqrt,
    All,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeaturesRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<FeaturesRepr> for FeaturesPerSplit {
    type Error = String;
    fn try_from(r: FeaturesRepr) -> Result<Self, String> {
        match r {
            FeaturesRepr::Count(n) => Ok(FeaturesPerSplit::Count(n)),
            FeaturesRepr::Name(s) if s == "sqrt" => Ok(FeaturesPerSplit::Sqrt),
            FeaturesRepr::Name(s) if s == "all" => Ok(FeaturesPerSplit::All),
            FeaturesRepr::Name(s) => Err(format!("features_per_split must be \"sqrt\", \"all\" or a count, got {s:?}")),
        }
    }
}

impl From<FeaturesPerSplit> for FeaturesRepr {
    fn from(f: FeaturesPerSplit) -> Self {
        match f {
            FeaturesPerSplit::Sqrt => FeaturesRepr::Name("sqrt".into()),
            FeaturesPerSplit::All => FeaturesRepr::Name("all".into()),
            FeaturesPerSplit::Count(n) => FeaturesRepr::Count(n),
        }
    }
}

impl FeaturesPerSplit {
    pub fn resolve(self, width: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (width as f64).sqrt().floor() as usize,
            FeaturesPerSplit::All => width,
            FeaturesPerSplit::Count(n) => n,
        };
        k.clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { negative: 1.0, positive: 1.0 };

    pub fn for_label(&self, y: u8) -> f64 {
        if y == 1 {
            self.positive
        } else {
            self.negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub subsampling_rate: f64,
    /// Overrides the mode's default class weights.
    pub class_weights: Option<ClassWeights>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_trees: 100,
            max_depth: 18,
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            subsampling_rate: 1.0,
            class_weights: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.features_per_split == FeaturesPerSplit::Count(0) {
            return bad("features_per_split must be at least 1");
        }
        if !(self.subsampling_rate > 0.0 && self.subsampling_rate.is_finite()) {
            return bad("subsampling_rate must be positive and finite");
        }
        if let Some(cw) = self.class_weights {
            if !(cw.negative > 0.0 && cw.negative.is_finite() && cw.positive > 0.0 && cw.positive.is_finite()) {
                return bad("class weights must be positive and finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("training matrix is empty")]
    Empty,
    #[error("training data contains only one class")]
    SingleClass,
    #[error("row {row} has a non-finite or non-positive weight")]
    BadWeight { row: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no tree in the ensemble found a useful split")]
    NoSplits,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PredictError {
    #[error("row has {got} features, model expects {expected}")]
    Width { expected: usize, got: usize },
    #[error("matrix columns do not match the model's columns")]
    Columns,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model is inconsistent: {0}")]
    Invalid(String),
}

/// Class weights used when the config does not override them.
pub fn default_class_weights(mode: Mode, labels: &[u8], weights: &[f64]) -> ClassWeights {
    match mode {
        Mode::Rf => ClassWeights::UNIT,
        Mode::Brf => {
            let (mut neg, mut pos) = (0.0, 0.0);
            for (&y, &w) in labels.iter().zip(weights) {
                if y == 1 {
                    pos += w
                } else {
                    neg += w
                }
            }
            ClassWeights { negative: pos / neg, positive: 1.0 }
        }
    }
}

/// Per-row Poisson means.
pub fn row_lambdas(labels: &[u8], weights: &[f64], class_weights: ClassWeights, subsampling_rate: f64) -> Vec<f64> {
    labels.iter().zip(weights).map(|(&y, &w)| w * class_weights.for_label(y) * subsampling_rate).collect()
}

/// Draws `Poisson(λ_i)` appearance counts from `rng`, one per row in order.
pub fn poisson_counts<R: Rng>(lambdas: &[f64], rng: &mut R) -> Vec<u32> {
    let mut dists: HashMap<u64, Poisson<f64>> = HashMap::new();
    lambdas
        .iter()
        .map(|&l| {
            let d = dists.entry(l.to_bits()).or_insert_with(|| Poisson::new(l).expect("lambda is positive and finite"));
            d.sample(rng) as u32
        })
        .collect()
}

/// Appearance counts for one tree: `λ_i = weight_i × subsampling_rate`, drawn
/// from a stream seeded by `tree_seed`.
pub fn poisson_bootstrap(weights: &[f64], subsampling_rate: f64, tree_seed: u64) -> Vec<u32> {
    let lambdas: Vec<f64> = weights.iter().map(|w| w * subsampling_rate).collect();
    poisson_counts(&lambdas, &mut rng_for(tree_seed, b"bootstrap"))
}

pub fn tree_seed(base: u64, tree: usize) -> u64 {
    derive_seed(base, format!("tree-{tree}").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mode: Mode,
    pub config: TrainConfig,
    /// Class weights actually applied (defaults resolved).
    pub class_weights: ClassWeights,
    pub column_names: Vec<String>,
    pub feature_importance: Vec<f64>,
    pub trees: Vec<Tree>,
}

pub fn train(matrix: &FeatureMatrix, config: &TrainConfig, mode: Mode) -> Result<ForestModel, TrainError> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(TrainError::Empty);
    }
    if let Some(row) = matrix.weights().iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(TrainError::BadWeight { row });
    }
    let n_pos = matrix.n_positive();
    if n_pos == 0 || n_pos == matrix.n_rows() {
        return Err(TrainError::SingleClass);
    }
    let class_weights =
        config.class_weights.unwrap_or_else(|| default_class_weights(mode, matrix.labels(), matrix.weights()));
    let lambdas = row_lambdas(matrix.labels(), matrix.weights(), class_weights, config.subsampling_rate);
    let lambda_pos: f64 = lambdas.iter().zip(matrix.labels()).filter(|(_, &y)| y == 1).map(|(l, _)| l).sum();
    let params = GrowParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf as f64,
        features_per_split: config.features_per_split.resolve(matrix.width()),
        prior: lambda_pos / lambdas.iter().sum::<f64>(),
    };
    log::debug!(
        "training {} trees ({mode}), {} rows, class weights {:?}",
        config.num_trees,
        matrix.n_rows(),
        class_weights
    );

    let grown: Vec<(Tree, Vec<f64>)> = (0..config.num_trees)
        .into_par_iter()
        .map(|t| {
            let seed = tree_seed(config.seed, t);
            let mut rng = rng_for(seed, b"bootstrap");
            let counts = poisson_counts(&lambdas, &mut rng);
            let rows: Vec<(usize, f64)> =
                counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c as f64)).collect();
            Grower::new(matrix, &params, rng_for(seed, b"features")).grow(rows)
        })
        .collect();

    let mut importance = vec![0.0; matrix.width()];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importance.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    if total <= 0.0 {
        return Err(TrainError::NoSplits);
    }
    importance.iter_mut().for_each(|v| *v /= total);

    Ok(ForestModel {
        mode,
        config: config.clone(),
        class_weights,
        column_names: matrix.column_names().to_vec(),
        feature_importance: importance,
        trees,
    })
}

impl ForestModel {
    /// Mean positive fraction of the leaves reached in each tree.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, PredictError> {
        if row.len() != self.column_names.len() {
            return Err(PredictError::Width { expected: self.column_names.len(), got: row.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, PredictError> {
        if matrix.column_names() != self.column_names.as_slice() {
            return Err(PredictError::Columns);
        }
        (0..matrix.n_rows()).into_par_iter().map(|r| self.predict_proba(matrix.row(r))).collect()
    }

    /// (column name, importance) pairs in column order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        self.column_names.iter().cloned().zip(self.feature_importance.iter().copied()).collect()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ForestModel, ModelError> {
        let m: ForestModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let width = self.column_names.len();
        if self.trees.is_empty() {
            return Err(ModelError::Invalid("no trees".into()));
        }
        if self.feature_importance.len() != width {
            return Err(ModelError::Invalid("importance length differs from column count".into()));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(width).map_err(|e| ModelError::Invalid(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    /// Two noisy features; label depends on f0 only.
    fn planted(n: usize, seed: u64, pos_rate: f64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMatrix::new(names(4));
        for _ in 0..n {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let p = if x[0] > 1.0 - pos_rate { 0.9 } else { 0.02 };
            let y = u8::from(rng.random::<f64>() < p);
            m.push_row(&x, y, 1.0).unwrap();
        }
        m
    }

    fn small_config() -> TrainConfig {
        TrainConfig { num_trees: 20, max_depth: 8, seed: 3, ..Default::default() }
    }

    fn auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / pairs
    }

    #[test]
    fn features_per_split_parsing() {
        let v: Vec<FeaturesPerSplit> = serde_json::from_str(r#"["sqrt", "all", 3]"#).unwrap();
        assert_eq!(v, [FeaturesPerSplit::Sqrt, FeaturesPerSplit::All, FeaturesPerSplit::Count(3)]);
        assert!(serde_json::from_str::<FeaturesPerSplit>(r#""log2""#).is_err());
        assert_eq!(FeaturesPerSplit::Sqrt.resolve(15), 3);
        assert_eq!(FeaturesPerSplit::Count(40).resolve(15), 15);
        assert_eq!(serde_json::to_string(&FeaturesPerSplit::Sqrt).unwrap(), r#""sqrt""#);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { num_trees: 0, ..Default::default() },
            TrainConfig { max_depth: 0, ..Default::default() },
            TrainConfig { min_samples_leaf: 0, ..Default::default() },
            TrainConfig { subsampling_rate: 0.0, ..Default::default() },
            TrainConfig { class_weights: Some(ClassWeights { negative: -1.0, positive: 1.0 }), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn brf_default_weight_matches_imbalance() {
        let labels: Vec<u8> = (0..18).map(|i| u8::from(i == 0)).collect();
        let cw = default_class_weights(Mode::Brf, &labels, &[1.0; 18]);
        assert_eq!(cw.positive, 1.0);
        assert!((cw.negative - 1.0 / 17.0).abs() < 1e-15);
        assert_eq!(default_class_weights(Mode::Rf, &labels, &[1.0; 18]), ClassWeights::UNIT);
    }

    #[test]
    fn brf_lambdas_balance_classes() {
        let m = planted(500, 1, 0.1);
        let cw = default_class_weights(Mode::Brf, m.labels(), m.weights());
        let l = row_lambdas(m.labels(), m.weights(), cw, 0.3);
        let (mut neg, mut pos) = (0.0, 0.0);
        for (&y, &v) in m.labels().iter().zip(&l) {
            if y == 1 {
                pos += v
            } else {
                neg += v
            }
        }
        assert!((neg - pos).abs() <= 1e-9 * pos);
    }

    #[test]
    fn poisson_means_within_five_sigma() {
        for lambda in [0.1, 0.25, 0.5, 1.0] {
            let n = 10_000;
            let counts = poisson_bootstrap(&vec![lambda; n], 1.0, 42);
            let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
            let sigma = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 5.0 * sigma, "λ={lambda}: mean {mean}");
        }
        assert_eq!(poisson_bootstrap(&[0.5; 100], 1.0, 9), poisson_bootstrap(&[0.5; 100], 1.0, 9));
    }

    #[test]
    fn quarter_weight_appears_four_times_less() {
        let n = 20_000;
        let mut w = vec![1.0; n];
        w.extend(vec![0.25; n]);
        let c = poisson_bootstrap(&w, 1.0, 5);
        let full: u32 = c[..n].iter().sum();
        let quarter: u32 = c[n..].iter().sum();
        let ratio = full as f64 / quarter as f64;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let cfg = small_config();
        assert_eq!(train(&FeatureMatrix::new(names(2)), &cfg, Mode::Rf), Err(TrainError::Empty));
        let one = FeatureMatrix::from_rows(names(1), vec![(vec![1.0], 1), (vec![2.0], 1)]).unwrap();
        assert_eq!(train(&one, &cfg, Mode::Brf), Err(TrainError::SingleClass));
        let flat = FeatureMatrix::from_rows(names(1), vec![(vec![1.0], 1), (vec![1.0], 0)]).unwrap();
        assert_eq!(train(&flat, &cfg, Mode::Rf), Err(TrainError::NoSplits));
    }

    #[test]
    fn separable_data_is_ranked_perfectly() {
        let rows: Vec<(Vec<f64>, u8)> =
            (0..60).map(|i| (vec![i as f64, (i * 7 % 13) as f64], u8::from(i >= 40))).collect();
        let m = FeatureMatrix::from_rows(names(2), rows).unwrap();
        let model = train(&m, &small_config(), Mode::Rf).unwrap();
        let p = model.predict_matrix(&m).unwrap();
        assert_eq!(auc(&p, m.labels()), 1.0);
        for (&s, &y) in p.iter().zip(m.labels()) {
            if y == 1 {
                assert!(s >= 0.5, "positive scored {s}");
            }
        }
    }

    #[test]
    fn planted_feature_dominates_importance() {
        let m = planted(2000, 11, 0.1);
        for mode in [Mode::Rf, Mode::Brf] {
            let model = train(&m, &small_config(), mode).unwrap();
            let imp = &model.feature_importance;
            assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(imp.iter().all(|&v| v >= 0.0));
            let top = (0..imp.len()).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
            assert_eq!(top, 0, "{mode}: {imp:?}");
        }
    }

    #[test]
    fn single_split_gets_all_importance() {
        let rows = vec![(vec![0.0, 5.0], 0), (vec![1.0, 5.0], 1)];
        let m = FeatureMatrix::from_rows(names(2), rows).unwrap();
        let cfg = TrainConfig { num_trees: 1, features_per_split: FeaturesPerSplit::All, ..small_config() };
        let model = train(&m, &cfg, Mode::Rf).unwrap();
        assert_eq!(model.feature_importance, [1.0, 0.0]);
    }

    #[test]
    fn trees_respect_depth_and_leaf_size() {
        let m = planted(800, 4, 0.2);
        let cfg = TrainConfig { max_depth: 4, min_samples_leaf: 5, ..small_config() };
        let model = train(&m, &cfg, Mode::Brf).unwrap();
        for t in &model.trees {
            assert!(t.depth() <= 4);
            for (frac, n) in t.leaves() {
                assert!((0.0..=1.0).contains(&frac));
                if t.n_splits() > 0 {
                    assert!(n >= 5.0, "leaf with {n}");
                }
            }
        }
    }

    #[test]
    fn training_is_independent_of_thread_count() {
        let m = planted(600, 8, 0.15);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&m, &small_config(), Mode::Brf).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a.to_json().unwrap(), run(3).to_json().unwrap());
    }

    #[test]
    fn scaling_class_weights_against_rate_gives_same_model() {
        let m = planted(400, 2, 0.2);
        let base = TrainConfig {
            class_weights: Some(ClassWeights { negative: 0.3, positive: 1.0 }),
            subsampling_rate: 0.5,
            ..small_config()
        };
        let a = train(&m, &base, Mode::Rf).unwrap();
        for k in [2.0, 4.0, 0.5] {
            let scaled = TrainConfig {
                class_weights: Some(ClassWeights { negative: 0.3 * k, positive: k }),
                subsampling_rate: 0.5 / k,
                ..base.clone()
            };
            let b = train(&m, &scaled, Mode::Rf).unwrap();
            assert_eq!(a.trees, b.trees);
        }
    }

    #[test]
    fn rf_appearance_matches_rate() {
        let m = planted(5000, 6, 0.1);
        let l = row_lambdas(m.labels(), m.weights(), ClassWeights::UNIT, 0.3);
        assert!(l.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let leaf = |p| Tree::from_nodes(vec![Node::Leaf { positive_fraction: p, n_effective: 1.0 }]);
        let mut model = ForestModel {
            mode: Mode::Rf,
            config: TrainConfig::default(),
            class_weights: ClassWeights::UNIT,
            column_names: names(1),
            feature_importance: vec![1.0],
            trees: vec![leaf(1.0)],
        };
        assert_eq!(model.predict_proba(&[0.0]), Ok(1.0));
        model.trees = vec![leaf(0.2), leaf(0.8)];
        assert_eq!(model.predict_proba(&[0.0]), Ok(0.5));
        assert_eq!(model.predict_proba(&[0.0, 1.0]), Err(PredictError::Width { expected: 1, got: 2 }));
    }

    #[test]
    fn json_roundtrip_predicts_identically() {
        let mut m = planted(500, 12, 0.2);
        m.push_row(&[f64::NAN, 0.5, f64::NAN, 0.1], 1, 1.0).unwrap();
        let model = train(&m, &small_config(), Mode::Brf).unwrap();
        let back = ForestModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let row: Vec<f64> =
                (0..4).map(|_| if rng.random::<f64>() < 0.1 { f64::NAN } else { rng.random::<f64>() }).collect();
            assert_eq!(model.predict_proba(&row).unwrap().to_bits(), back.predict_proba(&row).unwrap().to_bits());
        }
    }

    #[test]
    fn corrupt_model_is_rejected() {
        let m = planted(200, 1, 0.3);
        let model = train(&m, &small_config(), Mode::Rf).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        v["feature_importance"] = serde_json::json!([1.0]);
        assert!(ForestModel::from_json(&v.to_string()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_are_probabilities(seed in 0u64..1000, depth in 1usize..6) {
            let m = planted(150, seed, 0.3);
            let cfg = TrainConfig { num_trees: 5, max_depth: depth, seed, ..Default::default() };
            if let Ok(model) = train(&m, &cfg, Mode::Brf) {
                for p in model.predict_matrix(&m).unwrap() {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                prop_assert!(model.trees.iter().all(|t| t.depth() <= depth));
            }
        }
    }
}
