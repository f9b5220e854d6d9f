//! Labeled (segment, hour) examples: positives from matched collisions,
//! negatives from uniform sampling of the segment x hour grid.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::cache::{CacheError, CacheOutcome, StageCache, StageKey, StagePayload};
use crate::road_network::{GeoPoint, RoadNetwork};
use crate::seed::rng_for;
use crate::time::{HourStamp, HourWindow};

/// Default fraction of grid cells drawn as negatives.
pub const DEFAULT_SAMPLING_RATE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub hour: HourStamp,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub segment_id: String,
    pub hour: HourStamp,
    pub positive: bool,
}

impl Example {
    pub fn new(segment_id: impl Into<String>, hour: HourStamp, positive: bool) -> Self {
        Example { segment_id: segment_id.into(), hour, positive }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched: usize,
    pub unmatched: usize,
    /// Matched collisions that fell on an already-positive (segment, hour).
    pub collapsed: usize,
    pub months: usize,
}

/// Positive examples, one per distinct matched (segment, hour).
///
/// Collisions are processed in calendar-month batches; batches run in
/// parallel and the merged result is sorted by (segment_id, hour).
pub fn positives(collisions: &[CollisionRecord], net: &RoadNetwork, max_radius_m: f64) -> (Vec<Example>, MatchReport) {
    let mut months: BTreeMap<(i32, u32), Vec<&CollisionRecord>> = BTreeMap::new();
    for c in collisions {
        months.entry(c.hour.month_key()).or_default().push(c);
    }
    let batches: Vec<_> = months.into_values().collect();
    let results: Vec<(BTreeSet<(String, HourStamp)>, MatchReport)> = batches
        .par_iter()
        .map(|batch| {
            let mut cells = BTreeSet::new();
            let mut report = MatchReport { months: 1, ..Default::default() };
            for c in batch {
                match net.match_segment(c.location, max_radius_m) {
                    Some(m) => {
                        report.matched += 1;
                        if !cells.insert((m.segment.id().to_string(), c.hour)) {
                            report.collapsed += 1;
                        }
                    }
                    None => report.unmatched += 1,
                }
            }
            (cells, report)
        })
        .collect();

    let mut report = MatchReport::default();
    let mut all = Vec::new();
    for (cells, r) in results {
        report.matched += r.matched;
        report.unmatched += r.unmatched;
        report.collapsed += r.collapsed;
        report.months += r.months;
        all.extend(cells.into_iter().map(|(s, h)| Example::new(s, h, true)));
    }
    all.sort();
    (all, report)
}

/// The segment x hour grid to sample negatives from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub window: HourWindow,
    pub segments: Vec<String>,
    pub sampling_rate: f64,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("grid start must precede its end")]
    EmptyWindow,
    #[error("sampling rate must be in (0, 1], got {0}")]
    BadRate(f64),
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.window.start >= self.window.end {
            return Err(GridError::EmptyWindow);
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(GridError::BadRate(self.sampling_rate));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> u64 {
        self.segments.len() as u64 * self.window.len_hours()
    }
}

/// Independent Bernoulli draw for every grid cell, minus the positive cells.
///
/// Each segment has its own random stream derived from the seed and the
/// segment id, and hours are visited by geometric skipping, so the result
/// depends only on the spec and never materializes the full grid.
pub fn sample_negatives(grid: &GridSpec, positives: &[Example]) -> Result<Vec<Example>, GridError> {
    if grid.segments.is_empty() || grid.window.len_hours() == 0 {
        return Ok(Vec::new());
    }
    grid.validate()?;
    let taken: HashSet<(&str, HourStamp)> = positives.iter().map(|e| (e.segment_id.as_str(), e.hour)).collect();
    let n_hours = grid.window.len_hours();
    let skip = Geometric::new(grid.sampling_rate).map_err(|_| GridError::BadRate(grid.sampling_rate))?;

    let mut segments: Vec<&String> = grid.segments.iter().collect();
    segments.sort();
    segments.dedup();
    let per_segment: Vec<Vec<Example>> = segments
        .par_iter()
        .map(|seg| {
            let mut rng = rng_for(grid.seed, seg.as_bytes());
            let mut out = Vec::new();
            let mut pos = skip.sample(&mut rng);
            while pos < n_hours {
                let hour = grid.window.start.plus_hours(pos as i64);
                if !taken.contains(&(seg.as_str(), hour)) {
                    out.push(Example::new(seg.as_str(), hour, false));
                }
                pos = pos.saturating_add(1).saturating_add(skip.sample(&mut rng));
            }
            out
        })
        .collect();
    Ok(per_segment.into_iter().flatten().collect())
}

/// Merged positives and negatives sorted by (segment_id, hour).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub examples: Vec<Example>,
}

impl ExampleSet {
    pub fn merge(positives: Vec<Example>, negatives: Vec<Example>) -> Self {
        let mut examples = positives;
        examples.extend(negatives);
        examples.sort_by(|a, b| (&a.segment_id, a.hour).cmp(&(&b.segment_id, b.hour)));
        ExampleSet { examples }
    }

    pub fn count_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.positive).count()
    }
}

impl StagePayload for ExampleSet {
    const FILE_NAME: &'static str = "data.csv";

    fn encode(&self) -> Result<Vec<u8>, CacheError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let codec = |e: csv::Error| CacheError::Codec(e.to_string());
        w.write_record(["segment_id", "timestamp", "label"]).map_err(codec)?;
        for e in &self.examples {
            w.write_record([e.segment_id.as_str(), &e.hour.to_string(), if e.positive { "1" } else { "0" }])
                .map_err(codec)?;
        }
        w.into_inner().map_err(|e| CacheError::Codec(e.to_string()))
    }

    fn decode(bytes: &[u8]) -> Result<Self, CacheError> {
        let mut r = csv::Reader::from_reader(bytes);
        let mut examples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CacheError::Codec(e.to_string()))?;
            if rec.len() != 3 {
                return Err(CacheError::Codec("expected 3 columns".into()));
            }
            let hour = rec[1].parse().map_err(|e: crate::time::TimeError| CacheError::Codec(e.to_string()))?;
            let positive = match &rec[2] {
                "1" => true,
                "0" => false,
                other => return Err(CacheError::Codec(format!("bad label `{other}`"))),
            };
            examples.push(Example::new(&rec[0], hour, positive));
        }
        Ok(ExampleSet { examples })
    }

    fn row_count(&self) -> usize {
        self.examples.len()
    }
}

/// CSV header names for collision records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionColumns {
    pub timestamp: String,
    pub date: String,
    pub hour: String,
    pub latitude: String,
    pub longitude: String,
}

impl Default for CollisionColumns {
    fn default() -> Self {
        CollisionColumns {
            timestamp: "timestamp".into(),
            date: "date".into(),
            hour: "hour".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CollisionError {
    #[error("collision CSV is missing column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("collision CSV line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionData {
    pub records: Vec<CollisionRecord>,
    /// Rows lacking a date, hour or location.
    pub incomplete: usize,
}

pub fn parse_collisions_csv(bytes: &[u8], cols: &CollisionColumns) -> Result<CollisionData, CollisionError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ts = find(&cols.timestamp);
    let dh = find(&cols.date).zip(find(&cols.hour));
    let (lat, lon) = (find(&cols.latitude), find(&cols.longitude));

    let mut missing = Vec::new();
    if ts.is_none() && dh.is_none() {
        missing.push(format!("{} (or {} + {})", cols.timestamp, cols.date, cols.hour));
    }
    if lat.is_none() {
        missing.push(cols.latitude.clone());
    }
    if lon.is_none() {
        missing.push(cols.longitude.clone());
    }
    if !missing.is_empty() {
        return Err(CollisionError::MissingColumns(missing));
    }
    let (lat, lon) = (lat.unwrap(), lon.unwrap());

    let mut data = CollisionData::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| CollisionError::Row { line, message };
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        let time_cells: Vec<&str> = match ts {
            Some(i) => vec![cell(i)],
            None => vec![cell(dh.unwrap().0), cell(dh.unwrap().1)],
        };
        if time_cells.iter().chain([&cell(lat), &cell(lon)]).any(|c| c.is_empty()) {
            data.incomplete += 1;
            continue;
        }
        let hour = match ts {
            Some(_) => time_cells[0].parse::<HourStamp>().map_err(|e| row_err(e.to_string()))?,
            None => {
                let date = chrono::NaiveDate::parse_from_str(time_cells[0], "%Y-%m-%d")
                    .map_err(|_| row_err(format!("invalid date `{}`", time_cells[0])))?;
                let h = parse_hour_cell(time_cells[1])
                    .ok_or_else(|| row_err(format!("invalid hour `{}`", time_cells[1])))?;
                HourStamp::from_date_hour(date, h).map_err(|e| row_err(e.to_string()))?
            }
        };
        let la: f64 = cell(lat).parse().map_err(|_| row_err("invalid latitude".into()))?;
        let lo: f64 = cell(lon).parse().map_err(|_| row_err("invalid longitude".into()))?;
        let location = GeoPoint::new(la, lo).map_err(|e| row_err(e.to_string()))?;
        data.records.push(CollisionRecord { hour, location });
    }
    Ok(data)
}

/// `H`, `HH` or `HH:MM[:SS]`, truncated to the hour.
fn parse_hour_cell(cell: &str) -> Option<u32> {
    let h: u32 = cell.split(':').next()?.trim().parse().ok()?;
    (h < 24).then_some(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_network::RoadSegment;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn h(y: i32, m: u32, d: u32, hh: u32) -> HourStamp {
        HourStamp::from_ymdh(y, m, d, hh).unwrap()
    }

    fn net() -> RoadNetwork {
        RoadNetwork::new(vec![
            RoadSegment::new("A", vec![pt(45.5, -73.6), pt(45.5, -73.599)], "", 3).unwrap(),
            RoadSegment::new("B", vec![pt(45.51, -73.6), pt(45.51, -73.599)], "", 3).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn positive_rules() {
        let n = net();
        let at = h(2015, 3, 1, 8);
        let on_a = CollisionRecord { hour: at, location: pt(45.5, -73.5995) };
        let (p, r) = positives(&[on_a], &n, 100.0);
        assert_eq!(p, [Example::new("A", at, true)]);
        assert_eq!(r.matched, 1);

        let (p, r) = positives(&[on_a, on_a], &n, 100.0);
        assert_eq!(p.len(), 1);
        assert_eq!(r.collapsed, 1);

        let far = CollisionRecord { hour: at, location: pt(45.5045, -73.5995) };
        let (p, r) = positives(&[far], &n, 100.0);
        assert!(p.is_empty());
        assert_eq!(r.unmatched, 1);
    }

    #[test]
    fn month_batches_match_single_pass() {
        let n = net();
        let mut cs = Vec::new();
        for i in 0..200i64 {
            let hour = h(2014, 12, 20, 0).plus_hours(i * 7);
            let lat = if i % 3 == 0 { 45.5 } else { 45.51 };
            cs.push(CollisionRecord { hour, location: pt(lat + (i % 5) as f64 * 1e-5, -73.5995) });
        }
        let (batched, report) = positives(&cs, &n, 100.0);
        assert!(report.months > 1);
        let mut single = BTreeSet::new();
        for c in &cs {
            if let Some(m) = n.match_segment(c.location, 100.0) {
                single.insert(Example::new(m.segment.id(), c.hour, true));
            }
        }
        assert_eq!(batched, single.into_iter().collect::<Vec<_>>());
    }

    fn grid(n_seg: usize, hours: i64, rate: f64, seed: u64) -> GridSpec {
        let start = h(2012, 1, 1, 0);
        GridSpec {
            window: HourWindow::new(start, start.plus_hours(hours)),
            segments: (0..n_seg).map(|i| format!("s{i:03}")).collect(),
            sampling_rate: rate,
            seed,
        }
    }

    #[test]
    fn negative_count_is_binomial() {
        // 100 x 100 cells at rate 0.001: mean 10, sd ~3.16; check the pooled mean
        let seeds = 200u64;
        let total: usize = (0..seeds).map(|s| sample_negatives(&grid(100, 100, 0.001, s), &[]).unwrap().len()).sum();
        let n = 10_000.0 * seeds as f64;
        let (mean, sd) = (n * 0.001, (n * 0.001 * 0.999f64).sqrt());
        assert!((total as f64 - mean).abs() < 5.0 * sd, "{total} vs {mean}");
        for s in 0..20 {
            let k = sample_negatives(&grid(100, 100, 0.001, s), &[]).unwrap().len() as f64;
            assert!((k - 10.0).abs() < 5.0 * 10f64.sqrt(), "seed {s}: {k}");
        }
    }

    #[test]
    fn full_rate_minus_positives_is_empty() {
        let g = grid(2, 3, 1.0, 1);
        let pos: Vec<_> = g
            .segments
            .iter()
            .flat_map(|s| (0..3).map(move |i| Example::new(s.clone(), g.window.start.plus_hours(i), true)))
            .collect();
        assert!(sample_negatives(&g, &pos).unwrap().is_empty());
        assert_eq!(sample_negatives(&g, &[]).unwrap().len(), 6);
    }

    #[test]
    fn empty_grid_gives_nothing() {
        assert!(sample_negatives(&grid(0, 100, 0.5, 1), &[]).unwrap().is_empty());
        assert!(sample_negatives(&grid(5, 0, 0.5, 1), &[]).unwrap().is_empty());
        assert_eq!(sample_negatives(&grid(5, 5, 0.0, 1), &[]), Err(GridError::BadRate(0.0)));
    }

    #[test]
    fn sampling_is_deterministic_and_disjoint() {
        let g = grid(50, 500, 0.05, 9);
        let pos: Vec<_> =
            (0..500).step_by(3).map(|i| Example::new("s007", g.window.start.plus_hours(i), true)).collect();
        let a = sample_negatives(&g, &pos).unwrap();
        let b = sample_negatives(&g, &pos).unwrap();
        assert_eq!(a, b);
        let taken: HashSet<_> = pos.iter().map(|e| (&e.segment_id, e.hour)).collect();
        assert!(a.iter().all(|e| !e.positive && !taken.contains(&(&e.segment_id, e.hour))));
        // segment order in the spec does not matter
        let mut shuffled = g.clone();
        shuffled.segments.reverse();
        assert_eq!(sample_negatives(&shuffled, &pos).unwrap(), a);
    }

    #[test]
    fn montreal_scale_expectation() {
        // 0.1% of ~2.3e9 cells
        let g = GridSpec { sampling_rate: DEFAULT_SAMPLING_RATE, ..grid(44_111, 52_584, 0.001, 0) };
        let expected = g.cell_count() as f64 * g.sampling_rate;
        assert!((expected / 1e6 - 2.3).abs() < 0.1, "{expected}");
    }

    #[test]
    fn example_set_csv_roundtrip() {
        let set = ExampleSet::merge(
            vec![Example::new("b", h(2012, 1, 1, 3), true)],
            vec![Example::new("a", h(2012, 1, 1, 5), false)],
        );
        assert_eq!(set.examples[0].segment_id, "a");
        let back = ExampleSet::decode(&set.encode().unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn collision_csv_rows() {
        let csv =
            "date,hour,latitude,longitude\n2015-03-01,08:00,45.5,-73.6\n2015-03-01,,45.5,-73.6\n2015-03-02,23,,\n";
        let d = parse_collisions_csv(csv.as_bytes(), &CollisionColumns::default()).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.records[0].hour, h(2015, 3, 1, 8));
        assert_eq!(d.incomplete, 2);
        let bad = "date,latitude\n";
        assert!(matches!(
            parse_collisions_csv(bad.as_bytes(), &CollisionColumns::default()),
            Err(CollisionError::MissingColumns(_))
        ));
    }
}
