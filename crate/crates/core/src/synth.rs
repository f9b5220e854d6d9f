//! Synthetic scenarios with planted risk: a jittered lattice of short road
//! segments, hourly station weather with region-wide low-visibility episodes,
//! and Bernoulli collisions per segment-hour.
//!
//! The output uses the same file formats the ingestion parsers read.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::road_network::{GeoPoint, METERS_PER_DEGREE};
use crate::seed::rng_for;
use crate::time::HourStamp;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_segments: usize,
    pub n_stations: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    pub hotspot_fraction: f64,
    /// Collision probability per segment-hour before multipliers.
    pub base_rate: f64,
    pub hotspot_multiplier: f64,
    /// Risk multiplier during low-visibility hours.
    pub weather_effect: f64,
    /// Chance per hour that a low-visibility episode starts.
    pub episode_start_prob: f64,
    pub spacing_m: f64,
    pub origin: GeoPoint,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_segments: 200,
            n_stations: 5,
            days: 120,
            start_date: NaiveDate::from_ymd_opt(2016, 11, 1).unwrap(),
            hotspot_fraction: 0.05,
            base_rate: 0.001,
            hotspot_multiplier: 20.0,
            weather_effect: 4.0,
            episode_start_prob: 1.0 / 60.0,
            spacing_m: 150.0,
            origin: GeoPoint { lat: 45.50, lon: -73.60 },
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if self.n_segments == 0 || self.n_stations == 0 || self.days == 0 {
            return bad("n_segments, n_stations and days must be positive");
        }
        if !(0.0..=1.0).contains(&self.hotspot_fraction) || !(0.0..=1.0).contains(&self.episode_start_prob) {
            return bad("fractions and probabilities must lie in [0, 1]");
        }
        if !(self.base_rate >= 0.0 && self.hotspot_multiplier >= 0.0 && self.weather_effect >= 0.0) {
            return bad("rates and multipliers must be non-negative");
        }
        let peak = self.base_rate * self.hotspot_multiplier.max(1.0) * self.weather_effect.max(1.0);
        if peak > 1.0 {
            return bad("base_rate × multipliers exceeds 1 and is not a probability");
        }
        if !(self.spacing_m >= 60.0) {
            return bad("spacing_m must be at least 60");
        }
        Ok(())
    }

    pub fn hours(&self) -> i64 {
        i64::from(self.days) * 24
    }

    pub fn start(&self) -> HourStamp {
        HourStamp::start_of(self.start_date)
    }
}

/// Ground truth for a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub segment_ids: Vec<String>,
    pub hotspots: Vec<String>,
    pub low_visibility_hours: Vec<HourStamp>,
    pub collisions_per_segment: BTreeMap<String, u32>,
    pub n_collisions: usize,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub roads_kml: Vec<u8>,
    pub weather_csv: Vec<u8>,
    pub collisions_csv: Vec<u8>,
    pub manifest: SynthManifest,
}

pub const ROADS_FILE: &str = "roads.kml";
pub const WEATHER_FILE: &str = "weather.csv";
pub const COLLISIONS_FILE: &str = "collisions.csv";
pub const MANIFEST_FILE: &str = "truth.json";

impl SynthOutput {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(ROADS_FILE), &self.roads_kml)?;
        std::fs::write(dir.join(WEATHER_FILE), &self.weather_csv)?;
        std::fs::write(dir.join(COLLISIONS_FILE), &self.collisions_csv)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), manifest)
    }
}

struct Segment {
    id: String,
    name: String,
    level: u8,
    a: GeoPoint,
    b: GeoPoint,
}

const SAINTS: [&str; 12] = [
    "Saint-Denis",
    "Saint-Laurent",
    "Sainte-Catherine",
    "Saint-Hubert",
    "Saint-Urbain",
    "de Maisonneuve",
    "Sherbrooke",
    "Ontario",
    "Rachel",
    "Mont-Royal",
    "Côte-des-Neiges",
    "Jean-Talon",
];

fn offset(origin: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    let lat = origin.lat + north_m / METERS_PER_DEGREE;
    let lon = origin.lon + east_m / (METERS_PER_DEGREE * origin.lat.to_radians().cos());
    GeoPoint { lat, lon }
}

fn layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let cols = (cfg.n_segments as f64).sqrt().ceil() as usize;
    let max_len = (cfg.spacing_m * 0.8).min(120.0);
    (0..cfg.n_segments)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let jitter = cfg.spacing_m * 0.06;
            let cn = row as f64 * cfg.spacing_m + rng.random_range(-jitter..=jitter);
            let ce = col as f64 * cfg.spacing_m + rng.random_range(-jitter..=jitter);
            let half = rng.random_range(max_len / 2.0..=max_len) / 2.0;
            let (a, b) = if (row + col) % 2 == 0 {
                (offset(cfg.origin, cn, ce - half), offset(cfg.origin, cn, ce + half))
            } else {
                (offset(cfg.origin, cn - half, ce), offset(cfg.origin, cn + half, ce))
            };
            let kind = rng.random_range(0..10);
            let base = SAINTS[rng.random_range(0..SAINTS.len())];
            let (name, level) = match kind {
                0 => (format!("Autoroute {}", 10 + rng.random_range(0..60)), 1),
                1 | 2 => (format!("Boulevard {base}"), 2),
                3 => (format!("Avenue {base}"), 3),
                4 => (format!("Montée {base}"), 3),
                _ => (format!("Rue {base}"), 3),
            };
            Segment { id: format!("seg-{:04}", i + 1), name, level, a: round_point(a), b: round_point(b) }
        })
        .collect()
}

fn round_point(p: GeoPoint) -> GeoPoint {
    let r = |v: f64| (v * 1e6).round() / 1e6;
    GeoPoint { lat: r(p.lat), lon: r(p.lon) }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn kml(segments: &[Segment]) -> Vec<u8> {
    let mut s = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<kml xmlns=\"http://www.opengis.net/kml/2.2\">\n<Document>\n",
    );
    for seg in segments {
        let _ = write!(
            s,
            "<Placemark><name>{id}</name><ExtendedData>\
<Data name=\"NID\"><value>{id}</value></Data>\
<Data name=\"L_STNAME_C\"><value>{name}</value></Data>\
<Data name=\"ROAD_LEVEL\"><value>{level}</value></Data>\
</ExtendedData><LineString><coordinates>{:.6},{:.6},0 {:.6},{:.6},0</coordinates></LineString></Placemark>\n",
            seg.a.lon,
            seg.a.lat,
            seg.b.lon,
            seg.b.lat,
            id = seg.id,
            name = xml_escape(&seg.name),
            level = seg.level,
        );
    }
    s.push_str("</Document>\n</kml>\n");
    s.into_bytes()
}

/// Region-wide low-visibility flags, one per hour.
fn episodes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = cfg.hours() as usize;
    let mut low = vec![false; n];
    let mut h = 0;
    while h < n {
        if rng.random_bool(cfg.episode_start_prob) {
            let len = rng.random_range(3..=12);
            for flag in low.iter_mut().skip(h).take(len) {
                *flag = true;
            }
            h += len;
        } else {
            h += 1;
        }
    }
    low
}

fn weather(cfg: &SynthConfig, stations: &[(String, GeoPoint)], low: &[bool], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut s = String::from(
        "station_id,timestamp,latitude,longitude,temperature_c,dew_point_c,humidity_pct,wind_dir_deg,\
wind_speed_kmh,visibility_km,pressure_kpa,hmdx,wind_chill,weather\n",
    );
    let offsets: Vec<f64> = stations.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut pressure: f64 = 101.3;
    let start = cfg.start();
    for (h, &is_low) in low.iter().enumerate() {
        let t = start.plus_hours(h as i64);
        let seasonal = -6.0 - 8.0 * (2.0 * PI * (t.day_of_year() as f64 + 10.0) / 365.25).cos();
        let diurnal = 4.0 * (2.0 * PI * (t.hour() as f64 - 15.0) / 24.0).cos();
        pressure = (pressure + rng.random_range(-0.15..0.15)).clamp(98.5, 104.0);
        for ((id, loc), off) in stations.iter().zip(&offsets) {
            let temp = seasonal + diurnal + off + rng.random_range(-1.0..1.0);
            let humidity: f64 = if is_low { rng.random_range(85.0..100.0) } else { rng.random_range(45.0..85.0) };
            let dew = temp - (100.0 - humidity) / 5.0;
            let (vis, label) = if is_low {
                (rng.random_range(0.2..1.5), if temp < 0.5 { "Snow" } else { "Fog" })
            } else {
                (rng.random_range(15.0..40.0), ["Clear", "Mainly Clear", "Cloudy"][rng.random_range(0..3)])
            };
            let _ = writeln!(
                s,
                "{id},{t},{:.6},{:.6},{temp:.1},{dew:.1},{humidity:.0},{},{},{vis:.1},{:.2},,,{label}",
                loc.lat,
                loc.lon,
                rng.random_range(0..36) * 10,
                rng.random_range(0..40),
                pressure + off * 0.05,
            );
        }
    }
    s.into_bytes()
}

/// Builds a scenario; identical configs give byte-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut layout_rng = rng_for(cfg.seed, b"synth-layout");
    let segments = layout(cfg, &mut layout_rng);

    let n_hot = (cfg.hotspot_fraction * cfg.n_segments as f64).round() as usize;
    let mut hot_idx = index::sample(&mut layout_rng, cfg.n_segments, n_hot).into_vec();
    hot_idx.sort_unstable();
    let mut is_hot = vec![false; cfg.n_segments];
    for &i in &hot_idx {
        is_hot[i] = true;
    }

    let (n_extent, e_extent) = {
        let cols = (cfg.n_segments as f64).sqrt().ceil();
        let rows = (cfg.n_segments as f64 / cols).ceil();
        (rows * cfg.spacing_m, cols * cfg.spacing_m)
    };
    let stations: Vec<(String, GeoPoint)> = (0..cfg.n_stations)
        .map(|i| {
            let p = offset(
                cfg.origin,
                layout_rng.random_range(-200.0..n_extent + 200.0),
                layout_rng.random_range(-200.0..e_extent + 200.0),
            );
            (format!("ST{:02}", i + 1), round_point(p))
        })
        .collect();

    let mut weather_rng = rng_for(cfg.seed, b"synth-weather");
    let low = episodes(cfg, &mut weather_rng);
    let weather_csv = weather(cfg, &stations, &low, &mut weather_rng);

    let mut crash_rng = rng_for(cfg.seed, b"synth-collisions");
    let mut csv = String::from("timestamp,latitude,longitude\n");
    let mut per_segment: BTreeMap<String, u32> = segments.iter().map(|s| (s.id.clone(), 0)).collect();
    let mut n_collisions = 0;
    let start = cfg.start();
    for (h, &is_low) in low.iter().enumerate() {
        let t = start.plus_hours(h as i64);
        for (i, seg) in segments.iter().enumerate() {
            let mut rate = cfg.base_rate;
            if is_hot[i] {
                rate *= cfg.hotspot_multiplier;
            }
            if is_low {
                rate *= cfg.weather_effect;
            }
            if rate <= 0.0 || !crash_rng.random_bool(rate.min(1.0)) {
                continue;
            }
            let f = crash_rng.random_range(0.2..0.8);
            let along =
                GeoPoint { lat: seg.a.lat + f * (seg.b.lat - seg.a.lat), lon: seg.a.lon + f * (seg.b.lon - seg.a.lon) };
            let r = crash_rng.random_range(0.0..2.0);
            let bearing = crash_rng.random_range(0.0..2.0 * PI);
            let p = offset(along, r * bearing.cos(), r * bearing.sin());
            let _ = writeln!(csv, "{t},{:.6},{:.6}", p.lat, p.lon);
            *per_segment.get_mut(&seg.id).unwrap() += 1;
            n_collisions += 1;
        }
    }

    let manifest = SynthManifest {
        config: cfg.clone(),
        segment_ids: segments.iter().map(|s| s.id.clone()).collect(),
        hotspots: hot_idx.iter().map(|&i| segments[i].id.clone()).collect(),
        low_visibility_hours: low
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(h, _)| start.plus_hours(h as i64))
            .collect(),
        collisions_per_segment: per_segment,
        n_collisions,
    };
    Ok(SynthOutput { roads_kml: kml(&segments), weather_csv, collisions_csv: csv.into_bytes(), manifest })
}
