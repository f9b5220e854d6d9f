use std::collections::{BTreeSet, HashMap};

use super::geo::{GeoPoint, EARTH_RADIUS_M};
use super::RoadSegment;

/// Uniform lat/lon grid mapping each cell to the segments whose bounding
/// box overlaps it.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    pub(crate) fn build(segments: &[RoadSegment], cell_deg: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            let (lat0, lon0, lat1, lon1) = s.bbox();
            let (r0, c0) = cell_of(lat0, lon0, cell_deg);
            let (r1, c1) = cell_of(lat1, lon1, cell_deg);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells.entry((r, c)).or_default().push(i);
                }
            }
        }
        GridIndex { cell_deg, cells }
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Whether segment `i` is registered in the cell containing (lat, lon).
    pub fn cell_contains(&self, lat: f64, lon: f64, i: usize) -> bool {
        self.cells.get(&cell_of(lat, lon, self.cell_deg)).is_some_and(|v| v.contains(&i))
    }

    /// Indices (sorted, unique) of every segment that may lie within
    /// `radius_m` of `p`.
    pub fn candidates(&self, p: GeoPoint, radius_m: f64) -> Vec<usize> {
        if self.cells.is_empty() || !(radius_m >= 0.0) {
            return Vec::new();
        }
        let ang = radius_m / EARTH_RADIUS_M;
        let dlat = ang.to_degrees() * (1.0 + 1e-6) + 1e-12;
        let max_abs_lat = (p.lat.abs() + dlat).min(90.0);
        let cos_min = max_abs_lat.to_radians().cos();
        // inside the box, sin(d / 2R) >= cos_min * sin(dlon / 2)
        let dlon = if cos_min > 1e-9 {
            let s = ((ang / 2.0).sin() / cos_min).min(1.0);
            (2.0 * s.asin()).to_degrees() * (1.0 + 1e-6) + 1e-12
        } else {
            360.0
        };
        let (r0, c0) = cell_of(p.lat - dlat, p.lon - dlon, self.cell_deg);
        let (r1, c1) = cell_of(p.lat + dlat, p.lon + dlon, self.cell_deg);
        let span = (r1 - r0 + 1) as u128 * (c1 - c0 + 1) as u128;

        let mut out = BTreeSet::new();
        if span > self.cells.len() as u128 {
            for (&(r, c), v) in &self.cells {
                if (r0..=r1).contains(&r) && (c0..=c1).contains(&c) {
                    out.extend(v.iter().copied());
                }
            }
        } else {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if let Some(v) = self.cells.get(&(r, c)) {
                        out.extend(v.iter().copied());
                    }
                }
            }
        }
        out.into_iter().collect()
    }
}

fn cell_of(lat: f64, lon: f64, cell_deg: f64) -> (i64, i64) {
    ((lat / cell_deg).floor() as i64, (lon / cell_deg).floor() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_segment_reachable_from_its_cells() {
        let s = RoadSegment::new(
            "a",
            vec![GeoPoint::new(45.5, -73.6).unwrap(), GeoPoint::new(45.52, -73.57).unwrap()],
            "",
            3,
        )
        .unwrap();
        let idx = GridIndex::build(std::slice::from_ref(&s), 0.005);
        for p in s.polyline() {
            assert!(idx.cell_contains(p.lat, p.lon, 0));
        }
        assert!(idx.cell_count() >= 4 * 6);
    }
}
