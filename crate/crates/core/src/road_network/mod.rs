//! Road geometry: segments, a grid spatial index and nearest-segment matching.

mod geo;
mod index;
pub mod kml;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use geo::{
    closest_point_on_edge, haversine_m, point_to_polyline_m, GeoPoint, InvalidCoordinate, EARTH_RADIUS_M,
    METERS_PER_DEGREE,
};
pub use index::GridIndex;
pub use kml::{parse_kml, KmlError, KmlOptions, ParsedNetwork};

/// Default grid cell size in degrees (about 500 m in latitude).
pub const DEFAULT_CELL_DEG: f64 = 0.005;

/// Default matching radius in meters.
pub const DEFAULT_MATCH_RADIUS_M: f64 = 100.0;

/// Least important road level, used when the attribute is missing.
pub const DEFAULT_ROAD_LEVEL: u8 = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("segment `{0}` has fewer than 2 points")]
    TooFewPoints(String),
    #[error("road level {level} of segment `{id}` is not in 1..=3")]
    BadLevel { id: String, level: u8 },
    #[error("duplicate segment id `{0}`")]
    DuplicateId(String),
    #[error("grid cell size must be positive, got {0}")]
    BadCellSize(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    id: String,
    polyline: Vec<GeoPoint>,
    street_name: String,
    road_level: u8,
    length_m: f64,
}

impl RoadSegment {
    pub fn new(
        id: impl Into<String>,
        polyline: Vec<GeoPoint>,
        street_name: impl Into<String>,
        road_level: u8,
    ) -> Result<Self, NetworkError> {
        let id = id.into();
        if polyline.len() < 2 {
            return Err(NetworkError::TooFewPoints(id));
        }
        if !(1..=3).contains(&road_level) {
            return Err(NetworkError::BadLevel { id, level: road_level });
        }
        let length_m = polyline.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
        Ok(RoadSegment { id, polyline, street_name: street_name.into(), road_level, length_m })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn polyline(&self) -> &[GeoPoint] {
        &self.polyline
    }

    pub fn street_name(&self) -> &str {
        &self.street_name
    }

    pub fn road_level(&self) -> u8 {
        self.road_level
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    /// Point halfway along the polyline.
    pub fn midpoint(&self) -> GeoPoint {
        let half = self.length_m / 2.0;
        let mut walked = 0.0;
        for w in self.polyline.windows(2) {
            let d = haversine_m(w[0], w[1]);
            if walked + d >= half && d > 0.0 {
                let t = (half - walked) / d;
                return GeoPoint {
                    lat: w[0].lat + t * (w[1].lat - w[0].lat),
                    lon: w[0].lon + t * (w[1].lon - w[0].lon),
                };
            }
            walked += d;
        }
        self.polyline[0]
    }

    /// (min_lat, min_lon, max_lat, max_lon)
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.polyline
            .iter()
            .fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |(a, b, c, d), p| {
                (a.min(p.lat), b.min(p.lon), c.max(p.lat), d.max(p.lon))
            })
    }

    pub fn distance_to(&self, p: GeoPoint) -> f64 {
        point_to_polyline_m(p, &self.polyline)
    }
}

/// Result of [`RoadNetwork::match_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatch<'a> {
    pub segment: &'a RoadSegment,
    pub distance_m: f64,
}

/// Immutable set of segments with a grid index for point queries.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    by_id: HashMap<String, usize>,
    index: GridIndex,
}

impl RoadNetwork {
    pub fn new(segments: Vec<RoadSegment>) -> Result<Self, NetworkError> {
        Self::with_cell_size(segments, DEFAULT_CELL_DEG)
    }

    pub fn with_cell_size(segments: Vec<RoadSegment>, cell_deg: f64) -> Result<Self, NetworkError> {
        if !(cell_deg > 0.0 && cell_deg.is_finite()) {
            return Err(NetworkError::BadCellSize(cell_deg));
        }
        let mut by_id = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateId(s.id.clone()));
            }
        }
        let index = GridIndex::build(&segments, cell_deg);
        Ok(RoadNetwork { segments, by_id, index })
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RoadSegment> {
        self.by_id.get(id).map(|&i| &self.segments[i])
    }

    pub fn index(&self) -> &GridIndex {
        &self.index
    }

    /// Nearest segment within `max_radius_m`, ties going to the smaller id.
    pub fn match_segment(&self, p: GeoPoint, max_radius_m: f64) -> Option<SegmentMatch<'_>> {
        let candidates = self.index.candidates(p, max_radius_m);
        best_of(p, candidates.into_iter().map(|i| &self.segments[i]), max_radius_m)
    }

    /// Same contract as [`match_segment`](Self::match_segment), scanning every segment.
    pub fn match_segment_linear(&self, p: GeoPoint, max_radius_m: f64) -> Option<SegmentMatch<'_>> {
        best_of(p, self.segments.iter(), max_radius_m)
    }

    pub fn stats(&self) -> NetworkStats {
        let n = self.segments.len();
        let total: f64 = self.segments.iter().map(|s| s.length_m).sum();
        let short = self.segments.iter().filter(|s| s.length_m < 200.0).count();
        NetworkStats {
            segments: n,
            mean_length_m: if n > 0 { total / n as f64 } else { 0.0 },
            fraction_under_200m: if n > 0 { short as f64 / n as f64 } else { 0.0 },
            total_length_m: total,
        }
    }
}

fn best_of<'a>(
    p: GeoPoint,
    segments: impl Iterator<Item = &'a RoadSegment>,
    max_radius_m: f64,
) -> Option<SegmentMatch<'a>> {
    let mut best: Option<SegmentMatch<'a>> = None;
    for s in segments {
        let d = s.distance_to(p);
        let better = match &best {
            None => true,
            Some(b) => d < b.distance_m || (d == b.distance_m && s.id < b.segment.id),
        };
        if better {
            best = Some(SegmentMatch { segment: s, distance_m: d });
        }
    }
    best.filter(|b| b.distance_m <= max_radius_m)
}

/// Shape summary of a loaded network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub segments: usize,
    pub mean_length_m: f64,
    pub fraction_under_200m: f64,
    pub total_length_m: f64,
}
