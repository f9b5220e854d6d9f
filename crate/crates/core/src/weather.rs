//! Hourly station weather: CSV ingestion, the risky-weather moving average
//! and inverse-distance interpolation to arbitrary points.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::road_network::{haversine_m, GeoPoint};
use crate::time::HourStamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherField {
    Temperature,
    DewPoint,
    Humidity,
    WindDirection,
    WindSpeed,
    Visibility,
    Pressure,
    Hmdx,
    WindChill,
}

impl WeatherField {
    pub const ALL: [WeatherField; 9] = [
        WeatherField::Temperature,
        WeatherField::DewPoint,
        WeatherField::Humidity,
        WeatherField::WindDirection,
        WeatherField::WindSpeed,
        WeatherField::Visibility,
        WeatherField::Pressure,
        WeatherField::Hmdx,
        WeatherField::WindChill,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Value to interpolate: a measured field or the per-station risky EMA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolatedField {
    Measured(WeatherField),
    RiskyEma,
}

impl From<WeatherField> for InterpolatedField {
    fn from(f: WeatherField) -> Self {
        InterpolatedField::Measured(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyObservation {
    pub hour: HourStamp,
    values: [Option<f64>; 9],
    pub phenomena: Vec<String>,
}

impl HourlyObservation {
    pub fn new(hour: HourStamp) -> Self {
        HourlyObservation { hour, values: [None; 9], phenomena: Vec::new() }
    }

    pub fn get(&self, field: WeatherField) -> Option<f64> {
        self.values[field.slot()]
    }

    pub fn set(&mut self, field: WeatherField, value: Option<f64>) {
        self.values[field.slot()] = value;
    }

    pub fn with(mut self, field: WeatherField, value: f64) -> Self {
        self.set(field, Some(value));
        self
    }

    pub fn with_phenomena<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.phenomena = labels.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherStation {
    pub id: String,
    pub location: GeoPoint,
}

/// Default risky phenomena (freezing precipitation, snow and ice).
pub const DEFAULT_RISKY_PHENOMENA: [&str; 12] = [
    "freezing rain",
    "freezing drizzle",
    "snow",
    "snow grains",
    "ice crystals",
    "ice pellets",
    "ice pellet showers",
    "snow showers",
    "snow pellets",
    "ice fog",
    "blowing snow",
    "freezing fog",
];

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskySet(BTreeSet<String>);

impl RiskySet {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(labels: I) -> Self {
        RiskySet(labels.into_iter().map(|l| normalize_label(l.as_ref())).collect())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(&normalize_label(label))
    }
}

impl Default for RiskySet {
    fn default() -> Self {
        RiskySet::new(DEFAULT_RISKY_PHENOMENA)
    }
}

/// 1 when any observed phenomenon is in the risky set.
pub fn risky_binary(obs: &HourlyObservation, risky: &RiskySet) -> u8 {
    obs.phenomena.iter().any(|p| risky.contains(p)) as u8
}

/// Hourly EMA over observation hours; missing hours contribute b = 0.
pub fn ema_sequence(hours: &[HourStamp], binary: &[u8], alpha: f64) -> Vec<f64> {
    assert_eq!(hours.len(), binary.len());
    let mut out = Vec::with_capacity(hours.len());
    let mut prev: Option<(HourStamp, f64)> = None;
    for (&h, &b) in hours.iter().zip(binary) {
        let v = match prev {
            None => b as f64,
            Some((ph, pv)) => {
                let gap = ph.hours_until(h) - 1;
                let decayed = pv * (1.0 - alpha).powi(gap.max(0) as i32);
                alpha * b as f64 + (1.0 - alpha) * decayed
            }
        };
        out.push(v);
        prev = Some((h, v));
    }
    out
}

/// Observations of one station in strictly increasing hour order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub station: WeatherStation,
    observations: Vec<HourlyObservation>,
    risky_ema: Vec<f64>,
    ema_alpha: f64,
}

impl StationSeries {
    /// Sorts observations; later duplicates of an hour replace earlier ones.
    /// Returns the series and the number of duplicates dropped.
    pub fn new(station: WeatherStation, observations: Vec<HourlyObservation>) -> (Self, usize) {
        let mut by_hour: BTreeMap<HourStamp, HourlyObservation> = BTreeMap::new();
        let mut dups = 0;
        for o in observations {
            if by_hour.insert(o.hour, o).is_some() {
                dups += 1;
            }
        }
        let observations: Vec<_> = by_hour.into_values().collect();
        let series = StationSeries { station, risky_ema: vec![0.0; observations.len()], observations, ema_alpha: 1.0 };
        (series, dups)
    }

    pub fn observations(&self) -> &[HourlyObservation] {
        &self.observations
    }

    pub fn risky_ema(&self) -> &[f64] {
        &self.risky_ema
    }

    /// Recomputes the risky-weather EMA with smoothing `alpha` in (0, 1].
    pub fn update_ema(mut self, alpha: f64, risky: &RiskySet) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
        let hours: Vec<_> = self.observations.iter().map(|o| o.hour).collect();
        let b: Vec<_> = self.observations.iter().map(|o| risky_binary(o, risky)).collect();
        self.risky_ema = ema_sequence(&hours, &b, alpha);
        self.ema_alpha = alpha;
        self
    }

    fn position(&self, t: HourStamp) -> Result<usize, usize> {
        self.observations.binary_search_by_key(&t, |o| o.hour)
    }

    pub fn observation_at(&self, t: HourStamp) -> Option<&HourlyObservation> {
        self.position(t).ok().map(|i| &self.observations[i])
    }

    /// EMA at `t`, decaying through gaps; undefined outside the observed span.
    pub fn ema_at(&self, t: HourStamp) -> Option<f64> {
        match self.position(t) {
            Ok(i) => Some(self.risky_ema[i]),
            Err(0) => None,
            Err(i) if i == self.observations.len() => None,
            Err(i) => {
                let gap = self.observations[i - 1].hour.hours_until(t);
                Some(self.risky_ema[i - 1] * (1.0 - self.ema_alpha).powi(gap as i32))
            }
        }
    }

    pub fn value_at(&self, field: InterpolatedField, t: HourStamp) -> Option<f64> {
        match field {
            InterpolatedField::Measured(f) => self.observation_at(t).and_then(|o| o.get(f)),
            InterpolatedField::RiskyEma => self.ema_at(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpolationParams {
    /// Weight = 1 / distance^exponent.
    pub exponent: f64,
    pub min_distance_m: f64,
    pub cutoff_m: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        InterpolationParams { exponent: 2.0, min_distance_m: 1.0, cutoff_m: 50_000.0 }
    }
}

/// Inverse-distance weighted mean of `field` over stations reporting it at `t`.
pub fn interpolate(
    stations: &[StationSeries],
    p: GeoPoint,
    t: HourStamp,
    field: InterpolatedField,
    params: &InterpolationParams,
) -> Option<f64> {
    let mut contributions = Vec::new();
    for s in stations {
        let d = haversine_m(p, s.station.location);
        if d > params.cutoff_m {
            continue;
        }
        if let Some(v) = s.value_at(field, t) {
            let w = d.max(params.min_distance_m).powf(-params.exponent);
            contributions.push((w, v));
        }
    }
    weighted_mean(&contributions)
}

/// Weighted mean computed as an offset from the first value so that
/// identical inputs come back exactly.
fn weighted_mean(contributions: &[(f64, f64)]) -> Option<f64> {
    let &(_, anchor) = contributions.first()?;
    let total: f64 = contributions.iter().map(|(w, _)| w).sum();
    if !(total > 0.0) {
        return None;
    }
    let offset: f64 = contributions.iter().map(|(w, v)| w * (v - anchor)).sum::<f64>() / total;
    let (lo, hi) =
        contributions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| (a.min(v), b.max(v)));
    Some((anchor + offset).clamp(lo, hi))
}

/// CSV header names for each semantic weather column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherColumns {
    pub station_id: String,
    /// Combined `YYYY-MM-DD HH:00` column; used when present in the header.
    pub timestamp: String,
    /// Separate date and hour columns, used otherwise.
    pub date: String,
    pub hour: String,
    pub latitude: String,
    pub longitude: String,
    pub temperature: String,
    pub dew_point: String,
    pub humidity: String,
    pub wind_direction: String,
    pub wind_speed: String,
    pub visibility: String,
    pub pressure: String,
    pub hmdx: String,
    pub wind_chill: String,
    pub phenomena: String,
}

impl Default for WeatherColumns {
    fn default() -> Self {
        WeatherColumns {
            station_id: "station_id".into(),
            timestamp: "timestamp".into(),
            date: "date".into(),
            hour: "hour".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            temperature: "temperature_c".into(),
            dew_point: "dew_point_c".into(),
            humidity: "humidity_pct".into(),
            wind_direction: "wind_dir_deg".into(),
            wind_speed: "wind_speed_kmh".into(),
            visibility: "visibility_km".into(),
            pressure: "pressure_kpa".into(),
            hmdx: "hmdx".into(),
            wind_chill: "wind_chill".into(),
            phenomena: "weather".into(),
        }
    }
}

impl WeatherColumns {
    fn field_column(&self, f: WeatherField) -> &str {
        match f {
            WeatherField::Temperature => &self.temperature,
            WeatherField::DewPoint => &self.dew_point,
            WeatherField::Humidity => &self.humidity,
            WeatherField::WindDirection => &self.wind_direction,
            WeatherField::WindSpeed => &self.wind_speed,
            WeatherField::Visibility => &self.visibility,
            WeatherField::Pressure => &self.pressure,
            WeatherField::Hmdx => &self.hmdx,
            WeatherField::WindChill => &self.wind_chill,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WeatherError {
    #[error("weather CSV is missing mandatory column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("weather CSV line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeatherWarnings {
    pub duplicate_rows: usize,
    pub unparseable_cells: usize,
    pub out_of_range_cells: usize,
}

impl WeatherWarnings {
    pub fn total(&self) -> usize {
        self.duplicate_rows + self.unparseable_cells + self.out_of_range_cells
    }
}

/// All station series of a dataset, sorted by station id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherData {
    pub series: Vec<StationSeries>,
    pub warnings: WeatherWarnings,
}

impl WeatherData {
    pub fn update_ema(self, alpha: f64, risky: &RiskySet) -> Self {
        WeatherData {
            series: self.series.into_iter().map(|s| s.update_ema(alpha, risky)).collect(),
            warnings: self.warnings,
        }
    }

    pub fn interpolate(
        &self,
        p: GeoPoint,
        t: HourStamp,
        field: InterpolatedField,
        params: &InterpolationParams,
    ) -> Option<f64> {
        interpolate(&self.series, p, t, field, params)
    }
}

fn parse_hour(cell: &str) -> Option<u32> {
    let c = cell.trim();
    let h = c.split(':').next()?;
    let hour: u32 = h.parse().ok()?;
    if c.contains(':') && c.split(':').skip(1).any(|m| m.trim_start_matches('0') != "") {
        return None;
    }
    (hour < 24).then_some(hour)
}

pub fn parse_weather_csv(bytes: &[u8], cols: &WeatherColumns) -> Result<WeatherData, WeatherError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let station_i = find(&cols.station_id);
    let ts_i = find(&cols.timestamp);
    let date_hour = find(&cols.date).zip(find(&cols.hour));
    let lat_i = find(&cols.latitude);
    let lon_i = find(&cols.longitude);

    let mut missing = Vec::new();
    if station_i.is_none() {
        missing.push(cols.station_id.clone());
    }
    if ts_i.is_none() && date_hour.is_none() {
        missing.push(format!("{} (or {} + {})", cols.timestamp, cols.date, cols.hour));
    }
    if lat_i.is_none() {
        missing.push(cols.latitude.clone());
    }
    if lon_i.is_none() {
        missing.push(cols.longitude.clone());
    }
    if !missing.is_empty() {
        return Err(WeatherError::MissingColumns(missing));
    }
    let (station_i, lat_i, lon_i) = (station_i.unwrap(), lat_i.unwrap(), lon_i.unwrap());
    let field_cols: Vec<(WeatherField, Option<usize>)> =
        WeatherField::ALL.iter().map(|&f| (f, find(cols.field_column(f)))).collect();
    let phen_i = find(&cols.phenomena);

    let mut warnings = WeatherWarnings::default();
    let mut stations: BTreeMap<String, (GeoPoint, Vec<HourlyObservation>)> = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| WeatherError::Row { line, message };
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();

        let hour = match ts_i {
            Some(i) => cell(i).parse::<HourStamp>().map_err(|e| row_err(e.to_string()))?,
            None => {
                let (di, hi) = date_hour.unwrap();
                let date = chrono::NaiveDate::parse_from_str(cell(di), "%Y-%m-%d")
                    .map_err(|_| row_err(format!("invalid date `{}`", cell(di))))?;
                let h = parse_hour(cell(hi)).ok_or_else(|| row_err(format!("invalid hour `{}`", cell(hi))))?;
                HourStamp::from_date_hour(date, h).map_err(|e| row_err(e.to_string()))?
            }
        };
        let lat: f64 = cell(lat_i).parse().map_err(|_| row_err("invalid latitude".into()))?;
        let lon: f64 = cell(lon_i).parse().map_err(|_| row_err("invalid longitude".into()))?;
        let location = GeoPoint::new(lat, lon).map_err(|e| row_err(e.to_string()))?;

        let mut obs = HourlyObservation::new(hour);
        for &(f, idx) in &field_cols {
            let Some(i) = idx else { continue };
            let raw = cell(i);
            if raw.is_empty() {
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    let valid = match f {
                        WeatherField::Humidity => (0.0..=100.0).contains(&v),
                        WeatherField::Visibility => v >= 0.0,
                        _ => true,
                    };
                    if valid {
                        obs.set(f, Some(v));
                    } else {
                        warnings.out_of_range_cells += 1;
                    }
                }
                _ => warnings.unparseable_cells += 1,
            }
        }
        if let Some(i) = phen_i {
            obs.phenomena = cell(i).split([',', ';', '|']).map(normalize_label).filter(|s| !s.is_empty()).collect();
        }
        stations.entry(cell(station_i).to_string()).or_insert_with(|| (location, Vec::new())).1.push(obs);
    }

    let mut series = Vec::with_capacity(stations.len());
    for (id, (location, obs)) in stations {
        let (s, dups) = StationSeries::new(WeatherStation { id, location }, obs);
        warnings.duplicate_rows += dups;
        series.push(s);
    }
    if warnings.total() > 0 {
        log::warn!("weather CSV: {warnings:?}");
    }
    Ok(WeatherData { series, warnings })
}
