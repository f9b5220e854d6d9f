//! Feature assembly: weather at the segment midpoint, calendar and solar
//! features, road attributes, and historical accident counts restricted to
//! the training window.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::cache::sha256_hex;
use crate::example_gen::Example;
use crate::matrix::{FeatureMatrix, MISSING};
use crate::road_network::{GeoPoint, RoadNetwork, RoadSegment};
use crate::time::HourWindow;
use crate::weather::{InterpolatedField, InterpolationParams, WeatherData, WeatherField, DEFAULT_RISKY_PHENOMENA};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit a categorical encoding on zero rows")]
    EmptyCategorical,
    #[error("values and labels differ in length ({values} vs {labels})")]
    Misaligned { values: usize, labels: usize },
    #[error("no enabled features")]
    NoFeatures,
    #[error("feature `{0}` is listed more than once")]
    Duplicate(String),
    #[error("invalid feature configuration: {0}")]
    Invalid(String),
}

/// One output column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AccidentCount,
    Temperature,
    Visibility,
    Humidity,
    Pressure,
    RiskyWeather,
    DayOfYearCos,
    DayOfYearSin,
    HourCos,
    HourSin,
    DayOfWeek,
    SolarElevation,
    StreetLengthM,
    RoadLevelEncoded,
    StreetTypeEncoded,
    DewPoint,
    WindSpeed,
    WindDirection,
    Hmdx,
    WindChill,
}

impl Feature {
    pub const DEFAULT: [Feature; 15] = [
        Feature::AccidentCount,
        Feature::Temperature,
        Feature::Visibility,
        Feature::Humidity,
        Feature::Pressure,
        Feature::RiskyWeather,
        Feature::DayOfYearCos,
        Feature::DayOfYearSin,
        Feature::HourCos,
        Feature::HourSin,
        Feature::DayOfWeek,
        Feature::SolarElevation,
        Feature::StreetLengthM,
        Feature::RoadLevelEncoded,
        Feature::StreetTypeEncoded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::AccidentCount => "accident_count",
            Feature::Temperature => "temperature",
            Feature::Visibility => "visibility",
            Feature::Humidity => "humidity",
            Feature::Pressure => "pressure",
            Feature::RiskyWeather => "risky_weather",
            Feature::DayOfYearCos => "day_of_year_cos",
            Feature::DayOfYearSin => "day_of_year_sin",
            Feature::HourCos => "hour_cos",
            Feature::HourSin => "hour_sin",
            Feature::DayOfWeek => "day_of_week",
            Feature::SolarElevation => "solar_elevation",
            Feature::StreetLengthM => "street_length_m",
            Feature::RoadLevelEncoded => "road_level_encoded",
            Feature::StreetTypeEncoded => "street_type_encoded",
            Feature::DewPoint => "dew_point",
            Feature::WindSpeed => "wind_speed",
            Feature::WindDirection => "wind_direction",
            Feature::Hmdx => "hmdx",
            Feature::WindChill => "wind_chill",
        }
    }

    fn weather_field(self) -> Option<InterpolatedField> {
        let f = match self {
            Feature::Temperature => WeatherField::Temperature,
            Feature::Visibility => WeatherField::Visibility,
            Feature::Humidity => WeatherField::Humidity,
            Feature::Pressure => WeatherField::Pressure,
            Feature::DewPoint => WeatherField::DewPoint,
            Feature::WindSpeed => WeatherField::WindSpeed,
            Feature::WindDirection => WeatherField::WindDirection,
            Feature::Hmdx => WeatherField::Hmdx,
            Feature::WindChill => WeatherField::WindChill,
            Feature::RiskyWeather => return Some(InterpolatedField::RiskyEma),
            _ => return None,
        };
        Some(InterpolatedField::Measured(f))
    }
}

/// Maps `x` onto the unit circle: θ = 2π·(x mod period)/period.
pub fn cyclic_encode(x: f64, period: f64) -> (f64, f64) {
    let theta = 2.0 * PI * x.rem_euclid(period) / period;
    (theta.cos(), theta.sin())
}

/// Approximate solar elevation in degrees. `hour` is local clock time on the
/// reference meridian; the equation of time is ignored.
pub fn solar_elevation_deg(day_of_year: u32, hour: f64, p: GeoPoint, reference_meridian_deg: f64) -> f64 {
    let declination = (-23.44f64).to_radians() * (2.0 * PI * (day_of_year as f64 + 10.0) / 365.0).cos();
    let solar_time = hour + (p.lon - reference_meridian_deg) / 15.0;
    let hour_angle = (15.0 * (solar_time - 12.0)).to_radians();
    let lat = p.lat.to_radians();
    let s = lat.sin() * declination.sin() + lat.cos() * declination.cos() * hour_angle.cos();
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Category → ordinal, ordered by the share of positive rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalMap {
    pub ordinals: BTreeMap<String, usize>,
    /// Ordinal given to categories not seen during fitting.
    pub unseen: usize,
}

impl CategoricalMap {
    pub fn transform(&self, category: &str) -> usize {
        self.ordinals.get(category).copied().unwrap_or(self.unseen)
    }
}

/// Sorts categories by positive proportion (ties by name) and numbers them
/// from 0. Unseen categories get the ordinal of the lower-median category.
pub fn fit_categorical<S: AsRef<str>>(values: &[S], labels: &[u8]) -> Result<CategoricalMap, FeatureError> {
    if values.len() != labels.len() {
        return Err(FeatureError::Misaligned { values: values.len(), labels: labels.len() });
    }
    if values.is_empty() {
        return Err(FeatureError::EmptyCategorical);
    }
    let mut tallies: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (v, &y) in values.iter().zip(labels) {
        let t = tallies.entry(v.as_ref()).or_default();
        t.0 += u64::from(y == 1);
        t.1 += 1;
    }
    let mut cats: Vec<(&str, (u64, u64))> = tallies.into_iter().collect();
    cats.sort_by(|(na, (pa, ta)), (nb, (pb, tb))| {
        (u128::from(*pa) * u128::from(*tb)).cmp(&(u128::from(*pb) * u128::from(*ta))).then_with(|| na.cmp(nb))
    });
    let ordinals = cats.iter().enumerate().map(|(i, (name, _))| (name.to_string(), i)).collect();
    Ok(CategoricalMap { ordinals, unseen: (cats.len() - 1) / 2 })
}

/// Ordered keyword table; a name gets the first category whose keyword
/// appears as a whole word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetTypeTable {
    pub entries: Vec<(String, Vec<String>)>,
    pub fallback: String,
}

impl Default for StreetTypeTable {
    fn default() -> Self {
        let e = |cat: &str, kws: &[&str]| (cat.to_string(), kws.iter().map(|k| k.to_string()).collect());
        StreetTypeTable {
            entries: vec![
                e("rue", &["rue", "street"]),
                e("boulevard", &["boulevard"]),
                e("avenue", &["avenue"]),
                e("autoroute", &["autoroute", "highway"]),
                e("chemin", &["chemin", "road"]),
                e("montee", &["montee"]),
                e("pont", &["pont", "bridge"]),
            ],
            fallback: "other".into(),
        }
    }
}

/// Lowercase with diacritics removed.
pub fn fold_text(s: &str) -> String {
    s.nfd().filter(|c| !is_combining_mark(*c)).flat_map(char::to_lowercase).collect()
}

impl StreetTypeTable {
    pub fn classify(&self, name: &str) -> &str {
        let folded = fold_text(name);
        let words: Vec<&str> = folded.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        for (cat, kws) in &self.entries {
            if kws.iter().any(|k| {
                let k = fold_text(k);
                words.iter().any(|w| *w == k)
            }) {
                return cat;
            }
        }
        &self.fallback
    }
}

pub fn street_type(name: &str) -> String {
    StreetTypeTable::default().classify(name).to_string()
}

/// User-facing feature settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub enabled_features: Vec<Feature>,
    pub hour_period: f64,
    pub day_of_year_period: f64,
    pub risky_alpha: f64,
    pub risky_phenomena: Vec<String>,
    pub reference_meridian_deg: f64,
    pub interpolation: InterpolationParams,
    pub street_types: StreetTypeTable,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            enabled_features: Feature::DEFAULT.to_vec(),
            hour_period: 24.0,
            day_of_year_period: 365.25,
            risky_alpha: 0.5,
            risky_phenomena: DEFAULT_RISKY_PHENOMENA.iter().map(|s| s.to_string()).collect(),
            reference_meridian_deg: -75.0,
            interpolation: InterpolationParams::default(),
            street_types: StreetTypeTable::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.enabled_features.is_empty() {
            return Err(FeatureError::NoFeatures);
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.enabled_features {
            if !seen.insert(*f) {
                return Err(FeatureError::Duplicate(f.name().into()));
            }
        }
        if !(self.hour_period > 0.0 && self.day_of_year_period > 0.0) {
            return Err(FeatureError::Invalid("cyclic periods must be positive".into()));
        }
        if !(self.risky_alpha > 0.0 && self.risky_alpha <= 1.0) {
            return Err(FeatureError::Invalid("risky_alpha must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.enabled_features.iter().map(|f| f.name().to_string()).collect()
    }
}

/// Feature configuration plus everything fitted on the training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub config: FeatureConfig,
    pub train_window: HourWindow,
    pub categorical_maps: BTreeMap<String, CategoricalMap>,
    /// Positive examples per segment inside the training window.
    pub accident_counts: BTreeMap<String, u32>,
}

const ROAD_LEVEL: &str = "road_level";
const STREET_TYPE: &str = "street_type";

impl FeatureSpec {
    /// Fits categorical maps and accident counts from the examples that fall
    /// inside `train_window`; everything else is ignored.
    pub fn fit(
        config: FeatureConfig,
        train_window: HourWindow,
        examples: &[Example],
        net: &RoadNetwork,
    ) -> Result<FeatureSpec, FeatureError> {
        config.validate()?;
        let mut levels = Vec::new();
        let mut types = Vec::new();
        let mut labels = Vec::new();
        let mut accident_counts = BTreeMap::new();
        for ex in examples.iter().filter(|e| train_window.contains(e.hour)) {
            let Some(seg) = net.get(&ex.segment_id) else { continue };
            levels.push(seg.road_level().to_string());
            types.push(config.street_types.classify(seg.street_name()).to_string());
            labels.push(u8::from(ex.positive));
            if ex.positive {
                *accident_counts.entry(ex.segment_id.clone()).or_insert(0) += 1;
            }
        }
        let mut categorical_maps = BTreeMap::new();
        if !labels.is_empty() {
            categorical_maps.insert(ROAD_LEVEL.to_string(), fit_categorical(&levels, &labels)?);
            categorical_maps.insert(STREET_TYPE.to_string(), fit_categorical(&types, &labels)?);
        } else if config
            .enabled_features
            .iter()
            .any(|f| matches!(f, Feature::RoadLevelEncoded | Feature::StreetTypeEncoded))
        {
            return Err(FeatureError::EmptyCategorical);
        }
        Ok(FeatureSpec { config, train_window, categorical_maps, accident_counts })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.config.column_names()
    }

    pub fn accident_count(&self, segment_id: &str) -> u32 {
        self.accident_counts.get(segment_id).copied().unwrap_or(0)
    }

    /// Digest of the whole spec, fitted state included.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("feature spec serializes"))
    }

    fn value(&self, f: Feature, ex: &Example, seg: &RoadSegment, mid: GeoPoint, weather: &WeatherData) -> f64 {
        let c = &self.config;
        if let Some(field) = f.weather_field() {
            return weather.interpolate(mid, ex.hour, field, &c.interpolation).unwrap_or(MISSING);
        }
        let doy = ex.hour.day_of_year() as f64;
        let hour = ex.hour.hour() as f64;
        match f {
            Feature::AccidentCount => self.accident_count(&ex.segment_id) as f64,
            Feature::DayOfYearCos => cyclic_encode(doy, c.day_of_year_period).0,
            Feature::DayOfYearSin => cyclic_encode(doy, c.day_of_year_period).1,
            Feature::HourCos => cyclic_encode(hour, c.hour_period).0,
            Feature::HourSin => cyclic_encode(hour, c.hour_period).1,
            Feature::DayOfWeek => ex.hour.day_of_week() as f64,
            // Evaluated at the middle of the hour bucket.
            Feature::SolarElevation => {
                solar_elevation_deg(ex.hour.day_of_year(), hour + 0.5, mid, c.reference_meridian_deg)
            }
            Feature::StreetLengthM => seg.length_m(),
            Feature::RoadLevelEncoded => self.encode(ROAD_LEVEL, &seg.road_level().to_string()),
            Feature::StreetTypeEncoded => self.encode(STREET_TYPE, c.street_types.classify(seg.street_name())),
            _ => unreachable!("weather features handled above"),
        }
    }

    fn encode(&self, map: &str, category: &str) -> f64 {
        self.categorical_maps.get(map).map_or(MISSING, |m| m.transform(category) as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub rows: usize,
    pub dropped_unknown_segment: usize,
    pub rows_with_missing: usize,
}

/// Builds one row per example, in input order. `weather` must already carry
/// the risky-weather EMA (see [`WeatherData::update_ema`]). Examples whose
/// segment is not in `net` are dropped and counted.
pub fn assemble(
    examples: &[Example],
    net: &RoadNetwork,
    weather: &WeatherData,
    spec: &FeatureSpec,
) -> (FeatureMatrix, AssemblyReport) {
    let features = &spec.config.enabled_features;
    let midpoints: HashMap<&str, GeoPoint> = net.segments().iter().map(|s| (s.id(), s.midpoint())).collect();
    let rows: Vec<Option<(Vec<f64>, u8)>> = examples
        .par_iter()
        .map(|ex| {
            let seg = net.get(&ex.segment_id)?;
            let mid = midpoints[seg.id()];
            let row = features.iter().map(|&f| spec.value(f, ex, seg, mid, weather)).collect();
            Some((row, u8::from(ex.positive)))
        })
        .collect();
    let mut matrix = FeatureMatrix::new(spec.column_names());
    let mut report = AssemblyReport::default();
    for r in rows {
        match r {
            Some((row, y)) => {
                report.rows_with_missing += usize::from(row.iter().any(|v| v.is_nan()));
                matrix.push_row(&row, y, 1.0).expect("assembled rows are well formed");
                report.rows += 1;
            }
            None => report.dropped_unknown_segment += 1,
        }
    }
    if report.dropped_unknown_segment > 0 {
        log::warn!("dropped {} examples referencing unknown segments", report.dropped_unknown_segment);
    }
    (matrix, report)
}

/// Sidecar describing an exported feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub column_names: Vec<String>,
    pub spec_hash: String,
    pub spec: FeatureSpec,
    pub train_window: HourWindow,
    pub input_hashes: BTreeMap<String, String>,
    pub report: AssemblyReport,
}

impl FeatureManifest {
    pub fn new(spec: &FeatureSpec, report: AssemblyReport, input_hashes: BTreeMap<String, String>) -> Self {
        FeatureManifest {
            column_names: spec.column_names(),
            spec_hash: spec.hash(),
            spec: spec.clone(),
            train_window: spec.train_window,
            input_hashes,
            report,
        }
    }
}
