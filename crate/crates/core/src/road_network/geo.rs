use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude on the reference sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid coordinate (lat {lat}, lon {lon})")]
pub struct InvalidCoordinate {
    pub lat: f64,
    pub lon: f64,
}

/// WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, InvalidCoordinate> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(InvalidCoordinate { lat, lon })
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Closest point to `p` on the edge `a`-`b`.
///
/// The projection is done in an equirectangular plane centered at `p`. The
/// plane is an affine image of (lat, lon), so the clamped parameter can be
/// applied directly to the degree coordinates.
pub fn closest_point_on_edge(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> GeoPoint {
    let kx = p.lat.to_radians().cos();
    let (ax, ay) = ((a.lon - p.lon) * kx, a.lat - p.lat);
    let (bx, by) = ((b.lon - p.lon) * kx, b.lat - p.lat);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    GeoPoint { lat: a.lat + t * (b.lat - a.lat), lon: a.lon + t * (b.lon - a.lon) }
}

/// Minimum distance from `p` to any edge of `polyline`.
pub fn point_to_polyline_m(p: GeoPoint, polyline: &[GeoPoint]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => haversine_m(p, *only),
        _ => polyline
            .windows(2)
            .map(|e| haversine_m(p, closest_point_on_edge(p, e[0], e[1])))
            .fold(f64::INFINITY, f64::min),
    }
}
