//! Great-circle distance on a spherical Earth.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Returns `None` when either coordinate is outside its legal range or
    /// not finite.
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Some(GeoPoint { lat, lon })
        } else {
            None
        }
    }
}

/// Haversine distance in meters.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // h can creep past 1.0 for antipodal points
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// `haversine(a, b) <= radius_m`, skipping the trigonometry when the
/// latitude difference alone already exceeds the radius.
#[inline]
pub fn within(a: GeoPoint, b: GeoPoint, radius_m: f64) -> bool {
    // the great-circle distance is never shorter than the meridian arc
    let meridian = EARTH_RADIUS_M * (b.lat - a.lat).abs().to_radians();
    if meridian > radius_m * (1.0 + 1e-9) {
        return false;
    }
    haversine(a, b) <= radius_m
}

/// Local flat-earth approximation, only meaningful over short distances.
pub fn equirectangular(a: GeoPoint, b: GeoPoint) -> f64 {
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let x = (b.lon - a.lon).to_radians() * mean_lat.cos();
    let y = (b.lat - a.lat).to_radians();
    EARTH_RADIUS_M * (x * x + y * y).sqrt()
}

/// Offset a point by `east_m` / `north_m` meters using the local tangent
/// plane. Used by the synthetic generator; accurate to well under a meter
/// over a few tens of kilometers.
pub fn offset(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let dlat = (north_m / EARTH_RADIUS_M).to_degrees();
    let dlon = (east_m / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint {
        lat: origin.lat + dlat,
        lon: origin.lon + dlon,
    }
}
