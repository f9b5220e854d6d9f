//! End-to-end run: ingest → sample → featurize → train → evaluate →
//! importance → report, each stage cached under a key that chains the keys
//! of its upstream stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::cache::{file_digest, CacheError, CacheOutcome, Json, StageCache, StageKey, StagePayload};
use crate::evaluation::{self, pr_csv, roc_csv, threshold_csv, BaselineModel, EvalError, EvalReport, ScoredSet};
use crate::example_gen::{
    parse_collisions_csv, positives, sample_negatives, CollisionColumns, Example, ExampleSet, GridSpec, MatchReport,
    DEFAULT_SAMPLING_RATE,
};
use crate::features::{assemble, AssemblyReport, Feature, FeatureConfig, FeatureManifest, FeatureSpec};
use crate::forest::{self, ForestModel, Mode, TrainConfig};
use crate::matrix::FeatureMatrix;
use crate::plot::{Chart, Series};
use crate::road_network::{parse_kml, KmlOptions, NetworkStats, ParsedNetwork, DEFAULT_MATCH_RADIUS_M};
use crate::synth::{SynthConfig, COLLISIONS_FILE, ROADS_FILE, WEATHER_FILE};
use crate::time::HourWindow;
use crate::weather::{parse_weather_csv, RiskySet, WeatherColumns, WeatherData, WeatherWarnings};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no cached `{upstream}` output for this configuration; run `{upstream}` before `{stage}`")]
    Order { stage: &'static str, upstream: &'static str },
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    /// 1 validation/ordering, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Order { .. } => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Internal(_) => 3,
        }
    }
}

impl From<CacheError> for PipelineError {
    fn from(e: CacheError) -> Self {
        PipelineError::Internal(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn data_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Internal(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub roads: PathBuf,
    pub weather: PathBuf,
    pub collisions: PathBuf,
    #[serde(default = "default_cache_root")]
    pub cache_root: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_cache_root() -> PathBuf {
    PathBuf::from("cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Training covers `[train_start, train_end)`, testing `[train_end, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_end: NaiveDate,
}

impl Split {
    pub fn train_window(&self) -> HourWindow {
        HourWindow::from_dates(self.train_start, self.train_end)
    }

    pub fn test_window(&self) -> HourWindow {
        HourWindow::from_dates(self.train_end, self.test_end)
    }

    pub fn full_window(&self) -> HourWindow {
        HourWindow::from_dates(self.train_start, self.test_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub sampling_rate: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { sampling_rate: DEFAULT_SAMPLING_RATE, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Rf,
    Brf,
    Baseline,
}

impl RunMode {
    fn forest_mode(self) -> Option<Mode> {
        match self {
            RunMode::Rf => Some(Mode::Rf),
            RunMode::Brf => Some(Mode::Brf),
            RunMode::Baseline => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub split: Split,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_match_radius")]
    pub match_radius_m: f64,
    #[serde(default)]
    pub kml: KmlOptions,
    #[serde(default)]
    pub weather_columns: WeatherColumns,
    #[serde(default)]
    pub collision_columns: CollisionColumns,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default = "default_target_recall")]
    pub target_recall: f64,
    /// Share of all segment-hours that are positive in deployment; estimated
    /// from the test window when absent.
    #[serde(default)]
    pub deployment_prevalence: Option<f64>,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub threads: usize,
}

fn default_match_radius() -> f64 {
    DEFAULT_MATCH_RADIUS_M
}

fn default_mode() -> RunMode {
    RunMode::Brf
}

fn default_target_recall() -> f64 {
    0.85
}

/// Sets `dotted.path=value` in a JSON document; `value` is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut serde_json::Value, assignment: &str) -> Result<(), PipelineError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| PipelineError::Config(format!("override `{path}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}

impl RunConfig {
    /// Reads a JSON config, applies overrides, resolves relative paths
    /// against the config file's directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.roads, &mut p.weather, &mut p.collisions, &mut p.cache_root, &mut p.output_dir] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let s = &self.split;
        if !(s.train_start < s.train_end && s.train_end < s.test_end) {
            return bad(format!(
                "split must satisfy train_start < train_end < test_end (got {} / {} / {})",
                s.train_start, s.train_end, s.test_end
            ));
        }
        if !(self.sampling.sampling_rate > 0.0 && self.sampling.sampling_rate <= 1.0) {
            return bad("sampling.sampling_rate must be in (0, 1]".into());
        }
        if !(self.match_radius_m > 0.0 && self.match_radius_m.is_finite()) {
            return bad("match_radius_m must be positive".into());
        }
        if !(self.kml.cell_deg > 0.0) {
            return bad("kml.cell_deg must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.target_recall) {
            return bad("target_recall must be in [0, 1]".into());
        }
        if let Some(p) = self.deployment_prevalence {
            if !(p > 0.0 && p <= 1.0) {
                return bad("deployment_prevalence must be in (0, 1]".into());
            }
        }
        self.features.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.mode == RunMode::Baseline && !self.features.enabled_features.contains(&Feature::AccidentCount) {
            return bad("mode `baseline` needs the accident_count feature".into());
        }
        Ok(())
    }

    /// Config for a generated scenario: first two thirds of the days train,
    /// the rest test. Paths are relative to the scenario directory.
    pub fn for_synth(synth: &SynthConfig) -> RunConfig {
        let start = synth.start_date;
        let train_days = (u64::from(synth.days) * 2 / 3).max(1);
        RunConfig {
            paths: Paths {
                roads: ROADS_FILE.into(),
                weather: WEATHER_FILE.into(),
                collisions: COLLISIONS_FILE.into(),
                cache_root: default_cache_root(),
                output_dir: default_output_dir(),
            },
            split: Split {
                train_start: start,
                train_end: start + Days::new(train_days),
                test_end: start + Days::new(u64::from(synth.days)),
            },
            sampling: SamplingConfig { sampling_rate: 0.02, seed: synth.seed },
            match_radius_m: DEFAULT_MATCH_RADIUS_M,
            kml: KmlOptions::default(),
            weather_columns: WeatherColumns::default(),
            collision_columns: CollisionColumns::default(),
            features: FeatureConfig::default(),
            train: TrainConfig {
                num_trees: 100,
                max_depth: 12,
                min_samples_leaf: 5,
                seed: synth.seed,
                ..Default::default()
            },
            mode: RunMode::Brf,
            target_recall: 0.85,
            deployment_prevalence: None,
            threads: 0,
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| PipelineError::Internal(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutput {
    pub network: NetworkStats,
    pub segment_ids: Vec<String>,
    pub kml_warnings: usize,
    pub weather_stations: usize,
    pub weather_warnings: WeatherWarnings,
    pub collisions_total: usize,
    pub collisions_incomplete: usize,
    pub matching: MatchReport,
    pub positives: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeOutput {
    pub spec: FeatureSpec,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub train_report: AssemblyReport,
    pub test_report: AssemblyReport,
    pub n_segments: usize,
    pub test_hours: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub model: Option<ForestModel>,
    pub baseline: Option<BaselineModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevalenceSource {
    Configured,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub primary: EvalReport,
    pub baseline: Option<EvalReport>,
    pub prevalence_source: PrevalenceSource,
    pub scores: Vec<f64>,
    pub baseline_scores: Option<Vec<f64>>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub importance: f64,
    /// Renormalized share once accident_count is left out.
    pub importance_excluding_accident_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOutput {
    pub rows: Vec<ImportanceRow>,
}

/// Importance table sorted by decreasing importance, ties by name.
pub fn importance_table(model: &ForestModel) -> ImportanceOutput {
    let accident = Feature::AccidentCount.name();
    let rest: f64 = model.feature_importance().iter().filter(|(n, _)| n != accident).map(|(_, v)| v).sum();
    let mut rows: Vec<ImportanceRow> = model
        .feature_importance()
        .into_iter()
        .map(|(feature, importance)| {
            let excl = (feature != accident).then(|| if rest > 0.0 { importance / rest } else { 0.0 });
            ImportanceRow { feature, importance, importance_excluding_accident_count: excl }
        })
        .collect();
    rows.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.feature.cmp(&b.feature)));
    ImportanceOutput { rows }
}

/// Everything `report` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub split: Split,
    pub network: NetworkStats,
    pub kml_warnings: usize,
    pub weather_stations: usize,
    pub weather_warnings: WeatherWarnings,
    pub collisions_total: usize,
    pub collisions_incomplete: usize,
    pub matching: MatchReport,
    pub examples: usize,
    pub positive_examples: usize,
    pub imbalance_ratio: f64,
    pub feature_columns: Vec<String>,
    pub feature_spec_hash: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub dropped_unknown_segment: usize,
    pub auc_roc: f64,
    pub baseline_auc_roc: Option<f64>,
    pub prevalence_source: PrevalenceSource,
    pub evaluation: EvalReport,
    pub importance: Option<Vec<ImportanceRow>>,
}

/// Which stage names a subcommand touches, for messages.
pub mod stage {
    pub const INGEST: &str = "ingest";
    pub const SAMPLE: &str = "sample";
    pub const FEATURIZE: &str = "featurize";
    pub const TRAIN: &str = "train";
    pub const EVALUATE: &str = "evaluate";
    pub const IMPORTANCE: &str = "importance";
}

/// How a stage obtains its upstream inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upstream {
    /// Load from the cache; fail with an ordering error if absent.
    Cached,
    /// Compute (or load) recursively.
    Compute,
}

pub struct Pipeline {
    cfg: RunConfig,
    cache: StageCache,
    digests: BTreeMap<String, String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Pipeline, PipelineError> {
        let mut digests = BTreeMap::new();
        for (name, path) in
            [("roads", &cfg.paths.roads), ("weather", &cfg.paths.weather), ("collisions", &cfg.paths.collisions)]
        {
            let d = file_digest(path).map_err(|e| PipelineError::Data(format!("{name} input: {e}")))?;
            digests.insert(name.to_string(), d);
        }
        let cache = StageCache::new(&cfg.paths.cache_root);
        Ok(Pipeline { cfg, cache, digests })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &StageCache {
        &self.cache
    }

    fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
        serde_json::to_value(v).expect("config serializes")
    }

    fn key_ingest(&self) -> StageKey {
        let c = &self.cfg;
        let mut k = StageKey::new(serde_json::json!({
            "kml": Self::to_value(&c.kml),
            "weather_columns": Self::to_value(&c.weather_columns),
            "collision_columns": Self::to_value(&c.collision_columns),
            "match_radius_m": c.match_radius_m,
        }));
        for (n, d) in &self.digests {
            k = k.with_input(n.clone(), d.clone());
        }
        k
    }

    fn key_sample(&self) -> StageKey {
        StageKey::new(serde_json::json!({
            "window": Self::to_value(&self.cfg.split.full_window()),
            "sampling": Self::to_value(&self.cfg.sampling),
        }))
        .with_upstream(self.key_ingest().hash(stage::INGEST))
    }

    fn key_featurize(&self) -> StageKey {
        StageKey::new(serde_json::json!({
            "features": Self::to_value(&self.cfg.features),
            "split": Self::to_value(&self.cfg.split),
        }))
        .with_upstream(self.key_sample().hash(stage::SAMPLE))
    }

    fn key_train(&self) -> StageKey {
        StageKey::new(serde_json::json!({
            "train": Self::to_value(&self.cfg.train),
            "mode": Self::to_value(&self.cfg.mode),
        }))
        .with_upstream(self.key_featurize().hash(stage::FEATURIZE))
    }

    fn key_evaluate(&self) -> StageKey {
        StageKey::new(serde_json::json!({
            "target_recall": self.cfg.target_recall,
            "deployment_prevalence": self.cfg.deployment_prevalence,
        }))
        .with_upstream(self.key_train().hash(stage::TRAIN))
    }

    fn key_importance(&self) -> StageKey {
        StageKey::new(serde_json::Value::Null).with_upstream(self.key_train().hash(stage::TRAIN))
    }

    fn upstream<T: StagePayload>(
        &self,
        policy: Upstream,
        stage: &'static str,
        upstream: &'static str,
        key: StageKey,
        compute: impl FnOnce() -> Result<(T, CacheOutcome), PipelineError>,
    ) -> Result<T, PipelineError> {
        match policy {
            Upstream::Cached => self.cache.load(upstream, &key).ok_or(PipelineError::Order { stage, upstream }),
            Upstream::Compute => compute().map(|(v, _)| v),
        }
    }

    fn cached<T: StagePayload>(
        &self,
        stage: &'static str,
        upstream: &'static str,
        key: StageKey,
    ) -> Result<T, PipelineError> {
        self.cache.load(upstream, &key).ok_or(PipelineError::Order { stage, upstream })
    }

    fn read(&self, path: &Path) -> Result<Vec<u8>, PipelineError> {
        fs::read(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }

    fn parse_roads(&self) -> Result<ParsedNetwork, PipelineError> {
        parse_kml(&self.read(&self.cfg.paths.roads)?, &self.cfg.kml).map_err(data_err)
    }

    fn parse_weather(&self) -> Result<WeatherData, PipelineError> {
        parse_weather_csv(&self.read(&self.cfg.paths.weather)?, &self.cfg.weather_columns).map_err(data_err)
    }

    pub fn ingest(&self) -> Result<(Json<IngestOutput>, CacheOutcome), PipelineError> {
        self.cache.stage(stage::INGEST, &self.key_ingest(), || {
            let parsed = self.parse_roads()?;
            if parsed.network.is_empty() {
                return Err(PipelineError::Data("road network has no segments".into()));
            }
            let weather = self.parse_weather()?;
            let crashes = parse_collisions_csv(&self.read(&self.cfg.paths.collisions)?, &self.cfg.collision_columns)
                .map_err(data_err)?;
            let (pos, matching) = positives(&crashes.records, &parsed.network, self.cfg.match_radius_m);
            log::info!(
                "ingest: {} segments, {} stations, {} collisions ({} matched)",
                parsed.network.len(),
                weather.series.len(),
                crashes.records.len(),
                matching.matched
            );
            Ok(Json(IngestOutput {
                network: parsed.network.stats(),
                segment_ids: parsed.network.segments().iter().map(|s| s.id().to_string()).collect(),
                kml_warnings: parsed.warnings,
                weather_stations: weather.series.len(),
                weather_warnings: weather.warnings,
                collisions_total: crashes.records.len() + crashes.incomplete,
                collisions_incomplete: crashes.incomplete,
                matching,
                positives: pos,
            }))
        })
    }

    pub fn sample(&self, policy: Upstream) -> Result<(ExampleSet, CacheOutcome), PipelineError> {
        let ingest = self.upstream(policy, stage::SAMPLE, stage::INGEST, self.key_ingest(), || self.ingest())?.0;
        self.cache.stage(stage::SAMPLE, &self.key_sample(), || {
            let window = self.cfg.split.full_window();
            let pos: Vec<Example> = ingest.positives.iter().filter(|e| window.contains(e.hour)).cloned().collect();
            let grid = GridSpec {
                window,
                segments: ingest.segment_ids.clone(),
                sampling_rate: self.cfg.sampling.sampling_rate,
                seed: self.cfg.sampling.seed,
            };
            let neg = sample_negatives(&grid, &pos).map_err(|e| PipelineError::Config(e.to_string()))?;
            log::info!("sample: {} positives, {} negatives", pos.len(), neg.len());
            Ok(ExampleSet::merge(pos, neg))
        })
    }

    pub fn featurize(&self, policy: Upstream) -> Result<(Json<FeaturizeOutput>, CacheOutcome), PipelineError> {
        let examples = self
            .upstream(policy, stage::FEATURIZE, stage::SAMPLE, self.key_sample(), || self.sample(Upstream::Compute))?;
        self.cache.stage(stage::FEATURIZE, &self.key_featurize(), || {
            let net = self.parse_roads()?.network;
            let fc = &self.cfg.features;
            let weather = self.parse_weather()?.update_ema(fc.risky_alpha, &RiskySet::new(&fc.risky_phenomena));
            let (train_w, test_w) = (self.cfg.split.train_window(), self.cfg.split.test_window());
            let spec = FeatureSpec::fit(fc.clone(), train_w, &examples.examples, &net).map_err(data_err)?;
            let (train_ex, test_ex): (Vec<Example>, Vec<Example>) =
                examples.examples.iter().cloned().partition(|e| train_w.contains(e.hour));
            let test_ex: Vec<Example> = test_ex.into_iter().filter(|e| test_w.contains(e.hour)).collect();
            let (train, train_report) = assemble(&train_ex, &net, &weather, &spec);
            let (test, test_report) = assemble(&test_ex, &net, &weather, &spec);
            log::info!("featurize: {} train rows, {} test rows", train.n_rows(), test.n_rows());
            Ok(Json(FeaturizeOutput {
                spec,
                train,
                test,
                train_report,
                test_report,
                n_segments: net.len(),
                test_hours: test_w.len_hours(),
            }))
        })
    }

    pub fn train(&self, policy: Upstream) -> Result<(Json<TrainOutput>, CacheOutcome), PipelineError> {
        let feats = self
            .upstream(policy, stage::TRAIN, stage::FEATURIZE, self.key_featurize(), || {
                self.featurize(Upstream::Compute)
            })?
            .0;
        self.cache.stage(stage::TRAIN, &self.key_train(), || {
            let baseline = match feats.train.column_index(Feature::AccidentCount.name()) {
                Some(c) => {
                    let counts: Vec<f64> = feats.train.column(c).collect();
                    Some(BaselineModel::fit(&counts, feats.train.labels()).map_err(data_err)?)
                }
                None => None,
            };
            let model = match self.cfg.mode.forest_mode() {
                Some(mode) => Some(forest::train(&feats.train, &self.cfg.train, mode).map_err(data_err)?),
                None => None,
            };
            Ok(Json(TrainOutput { model, baseline }))
        })
    }

    fn baseline_scores(b: &BaselineModel, m: &FeatureMatrix) -> Result<Vec<f64>, PipelineError> {
        let c = m
            .column_index(Feature::AccidentCount.name())
            .ok_or_else(|| PipelineError::Internal("accident_count column missing".into()))?;
        Ok(m.column(c).map(|n| b.score(n)).collect())
    }

    pub fn evaluate(&self, policy: Upstream) -> Result<(Json<EvaluateOutput>, CacheOutcome), PipelineError> {
        let trained =
            self.upstream(policy, stage::EVALUATE, stage::TRAIN, self.key_train(), || self.train(Upstream::Compute))?.0;
        let feats = self.cached::<Json<FeaturizeOutput>>(stage::EVALUATE, stage::FEATURIZE, self.key_featurize())?.0;
        self.cache.stage(stage::EVALUATE, &self.key_evaluate(), || {
            let test = &feats.test;
            let labels = test.labels().to_vec();
            let n_pos = test.n_positive();
            let (prevalence, prevalence_source) = match self.cfg.deployment_prevalence {
                Some(p) => (p, PrevalenceSource::Configured),
                None => {
                    let cells = feats.n_segments as f64 * feats.test_hours as f64;
                    (n_pos as f64 / cells, PrevalenceSource::Estimated)
                }
            };
            let baseline_scores = match &trained.baseline {
                Some(b) => Some(Self::baseline_scores(b, test)?),
                None => None,
            };
            let scores = match &trained.model {
                Some(m) => m.predict_matrix(test).map_err(|e| PipelineError::Internal(e.to_string()))?,
                None => baseline_scores.clone().ok_or_else(|| PipelineError::Internal("no model".into()))?,
            };
            let report = |s: &[f64]| -> Result<EvalReport, PipelineError> {
                let set = ScoredSet::new(s.to_vec(), labels.clone())?;
                Ok(evaluation::evaluate(&set, self.cfg.target_recall, prevalence)?)
            };
            let primary = report(&scores)?;
            let baseline = match &baseline_scores {
                Some(b) => Some(report(b)?),
                None => None,
            };
            log::info!("evaluate: AUC {:.4}", primary.auc_roc);
            Ok(Json(EvaluateOutput { primary, baseline, prevalence_source, scores, baseline_scores, labels }))
        })
    }

    pub fn importance(&self, policy: Upstream) -> Result<(Json<ImportanceOutput>, CacheOutcome), PipelineError> {
        let trained = self
            .upstream(policy, stage::IMPORTANCE, stage::TRAIN, self.key_train(), || self.train(Upstream::Compute))?
            .0;
        let model =
            trained.model.ok_or_else(|| PipelineError::Config("feature importance needs mode `rf` or `brf`".into()))?;
        self.cache.stage(stage::IMPORTANCE, &self.key_importance(), || Ok(Json(importance_table(&model))))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        fs::create_dir_all(&self.cfg.paths.output_dir).map_err(io_err(&self.cfg.paths.output_dir))?;
        let p = self.out(name);
        crate::cache::write_atomic(&p, bytes)?;
        Ok(p)
    }

    pub fn export_features(&self, f: &FeaturizeOutput) -> Result<Vec<PathBuf>, PipelineError> {
        let csv = |m: &FeatureMatrix| m.to_csv().map_err(|e| PipelineError::Internal(e.to_string()));
        let manifest = FeatureManifest::new(&f.spec, f.train_report.clone(), self.digests.clone());
        let manifest = serde_json::to_vec_pretty(&manifest).map_err(|e| PipelineError::Internal(e.to_string()))?;
        Ok(vec![
            self.write("features_train.csv", &csv(&f.train)?)?,
            self.write("features_test.csv", &csv(&f.test)?)?,
            self.write("features_manifest.json", &manifest)?,
        ])
    }

    pub fn export_model(&self, t: &TrainOutput) -> Result<Vec<PathBuf>, PipelineError> {
        let mut out = Vec::new();
        if let Some(m) = &t.model {
            let json = m.to_json().map_err(|e| PipelineError::Internal(e.to_string()))?;
            out.push(self.write("model.json", json.as_bytes())?);
        }
        if let Some(b) = &t.baseline {
            let json = serde_json::to_vec_pretty(b).map_err(|e| PipelineError::Internal(e.to_string()))?;
            out.push(self.write("baseline.json", &json)?);
        }
        Ok(out)
    }

    pub fn export_curves(&self, e: &EvaluateOutput) -> Result<Vec<PathBuf>, PipelineError> {
        let set = ScoredSet::new(e.scores.clone(), e.labels.clone())?;
        let model_name = match self.cfg.mode {
            RunMode::Rf => "rf",
            RunMode::Brf => "brf",
            RunMode::Baseline => "baseline",
        };
        let with_baseline = self.cfg.mode != RunMode::Baseline;
        let mut roc_series =
            vec![Series { name: model_name, points: e.primary.roc_points.iter().map(|p| (p.fpr, p.tpr)).collect() }];
        let mut pr_series = vec![Series {
            name: model_name,
            points: e.primary.pr_points.iter().map(|p| (p.recall, p.precision)).collect(),
        }];
        if let (Some(b), true) = (&e.baseline, with_baseline) {
            roc_series.push(Series { name: "baseline", points: b.roc_points.iter().map(|p| (p.fpr, p.tpr)).collect() });
            pr_series.push(Series {
                name: "baseline",
                points: b.pr_points.iter().map(|p| (p.recall, p.precision)).collect(),
            });
        }
        let roc_svg = Chart {
            title: "ROC curve",
            x_label: "False positive rate",
            y_label: "True positive rate",
            series: roc_series,
            diagonal: true,
        }
        .to_svg();
        let pr_svg = Chart {
            title: "Precision-recall curve",
            x_label: "Recall",
            y_label: "Precision",
            series: pr_series,
            diagonal: false,
        }
        .to_svg();
        let thr_svg = Chart {
            title: "Precision and recall by threshold",
            x_label: "Threshold",
            y_label: "Value",
            series: vec![
                Series {
                    name: "precision",
                    points: e.primary.pr_points.iter().map(|p| (p.threshold, p.precision)).collect(),
                },
                Series {
                    name: "recall",
                    points: e.primary.pr_points.iter().map(|p| (p.threshold, p.recall)).collect(),
                },
            ],
            diagonal: false,
        }
        .to_svg();
        Ok(vec![
            self.write("roc.csv", roc_csv(&e.primary.roc_points).as_bytes())?,
            self.write("roc.svg", roc_svg.as_bytes())?,
            self.write("pr.csv", pr_csv(&e.primary.pr_points).as_bytes())?,
            self.write("pr.svg", pr_svg.as_bytes())?,
            self.write("thresholds.csv", threshold_csv(&set)?.as_bytes())?,
            self.write("thresholds.svg", thr_svg.as_bytes())?,
        ])
    }

    pub fn export_importance(&self, imp: &ImportanceOutput) -> Result<Vec<PathBuf>, PipelineError> {
        let mut s = String::from("feature,importance,importance_excluding_accident_count\n");
        for r in &imp.rows {
            let excl = r.importance_excluding_accident_count.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.feature, r.importance, excl));
        }
        Ok(vec![self.write("importance.csv", s.as_bytes())?])
    }

    /// Assembles `report.json` from cached stages and rewrites every artifact.
    pub fn report(&self, policy: Upstream) -> Result<(RunReport, Vec<PathBuf>), PipelineError> {
        let eval = self.evaluate(policy)?.0 .0;
        let ingest = self.cached::<Json<IngestOutput>>("report", stage::INGEST, self.key_ingest())?.0;
        let examples: ExampleSet = self.cached::<ExampleSet>("report", stage::SAMPLE, self.key_sample())?;
        let feats = self.cached::<Json<FeaturizeOutput>>("report", stage::FEATURIZE, self.key_featurize())?.0;
        let trained = self.cached::<Json<TrainOutput>>("report", stage::TRAIN, self.key_train())?.0;
        let importance = match trained.model {
            Some(_) => Some(self.importance(Upstream::Compute)?.0 .0),
            None => None,
        };

        let n_pos = examples.count_positive();
        let n_neg = examples.examples.len() - n_pos;
        let report = RunReport {
            mode: self.cfg.mode,
            split: self.cfg.split,
            network: ingest.network.clone(),
            kml_warnings: ingest.kml_warnings,
            weather_stations: ingest.weather_stations,
            weather_warnings: ingest.weather_warnings.clone(),
            collisions_total: ingest.collisions_total,
            collisions_incomplete: ingest.collisions_incomplete,
            matching: ingest.matching,
            examples: examples.examples.len(),
            positive_examples: n_pos,
            imbalance_ratio: if n_pos > 0 { n_neg as f64 / n_pos as f64 } else { 0.0 },
            feature_columns: feats.spec.column_names(),
            feature_spec_hash: feats.spec.hash(),
            train_rows: feats.train.n_rows(),
            test_rows: feats.test.n_rows(),
            dropped_unknown_segment: feats.train_report.dropped_unknown_segment
                + feats.test_report.dropped_unknown_segment,
            auc_roc: eval.primary.auc_roc,
            baseline_auc_roc: eval.baseline.as_ref().map(|b| b.auc_roc),
            prevalence_source: eval.prevalence_source,
            evaluation: eval.primary.clone(),
            importance: importance.as_ref().map(|i| i.rows.clone()),
        };
        let mut written = self.export_features(&feats)?;
        written.extend(self.export_model(&trained)?);
        written.extend(self.export_curves(&eval)?);
        if let Some(i) = &importance {
            written.extend(self.export_importance(i)?);
        }
        let json = serde_json::to_vec_pretty(&report).map_err(|e| PipelineError::Internal(e.to_string()))?;
        written.push(self.write("report.json", &json)?);
        Ok((report, written))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_values() {
        let mut doc = serde_json::json!({ "train": { "num_trees": 100 }, "mode": "brf" });
        apply_override(&mut doc, "train.num_trees=5").unwrap();
        apply_override(&mut doc, "mode=rf").unwrap();
        apply_override(&mut doc, "sampling.seed=9").unwrap();
        assert_eq!(doc["train"]["num_trees"], 5);
        assert_eq!(doc["mode"], "rf");
        assert_eq!(doc["sampling"]["seed"], 9);
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "mode.inner=1").is_err());
    }

    #[test]
    fn split_must_be_ordered() {
        let mut cfg = RunConfig::for_synth(&SynthConfig::default());
        assert!(cfg.validate().is_ok());
        cfg.split.test_end = cfg.split.train_end;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn synth_config_roundtrips_through_json() {
        let cfg = RunConfig::for_synth(&SynthConfig::default());
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let minimal: RunConfig = serde_json::from_str(
            r#"{"paths": {"roads": "r.kml", "weather": "w.csv", "collisions": "c.csv"},
                "split": {"train_start": "2012-01-01", "train_end": "2017-01-01", "test_end": "2019-01-01"}}"#,
        )
        .unwrap();
        assert_eq!(minimal.mode, RunMode::Brf);
        assert_eq!(minimal.target_recall, 0.85);
        assert!(minimal.validate().is_ok());
    }

    #[test]
    fn importance_excluding_accident_count_renormalizes() {
        let model = ForestModel {
            mode: Mode::Rf,
            config: TrainConfig::default(),
            class_weights: forest::ClassWeights::UNIT,
            column_names: vec!["accident_count".into(), "temperature".into(), "hour_cos".into()],
            feature_importance: vec![0.6, 0.1, 0.3],
            trees: vec![forest::Tree::from_nodes(vec![forest::Node::Leaf {
                positive_fraction: 0.5,
                n_effective: 1.0,
            }])],
        };
        let t = importance_table(&model);
        assert_eq!(t.rows[0].feature, "accident_count");
        assert_eq!(t.rows[0].importance_excluding_accident_count, None);
        assert_eq!(t.rows[1].feature, "hour_cos");
        assert!((t.rows[1].importance_excluding_accident_count.unwrap() - 0.75).abs() < 1e-12);
        assert!((t.rows[2].importance_excluding_accident_count.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Order { stage: "train", upstream: "featurize" }.exit_code(), 1);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Internal("x".into()).exit_code(), 3);
        let msg = PipelineError::Order { stage: "evaluate", upstream: "train" }.to_string();
        assert!(msg.contains("run `train` before `evaluate`"), "{msg}");
    }
}
