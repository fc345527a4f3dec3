//! Spherical-earth geometry: great-circle distance and initial bearing.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A geographic coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting coordinates outside `[-90, 90] x [-180, 180]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Validation(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Validation(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Great-circle distance in meters using the haversine formula.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let half_dlat = (lat2 - lat1) / 2.0;
    let half_dlon = (b.lon - a.lon).to_radians() / 2.0;
    let h = half_dlat.sin().powi(2) + lat1.cos() * lat2.cos() * half_dlon.sin().powi(2);
    // rounding can push h a hair above 1 for antipodes
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `a` towards `b` in radians, in `(-pi, pi]`.
///
/// 0 is north, pi/2 east, -pi/2 west and pi south. Coincident points yield 0.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let x = lat2.cos() * dlon.sin();
    let y = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    let bearing = x.atan2(y);
    if bearing <= -PI {
        PI
    } else {
        bearing
    }
}

/// Point reached by travelling `distance_m` along the great circle that leaves
/// `start` with `bearing` (radians, north = 0).
pub fn destination(start: GeoPoint, bearing: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let lat1 = start.lat.to_radians();
    let lon1 = start.lon.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing.cos())
        .clamp(-1.0, 1.0)
        .asin();
    let lon2 = lon1
        + (bearing.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let mut lon = lon2.to_degrees();
    if lon > 180.0 {
        lon -= 360.0;
    } else if lon < -180.0 {
        lon += 360.0;
    }
    GeoPoint {
        lat: lat2.to_degrees().clamp(-90.0, 90.0),
        lon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Spherical law of cosines, written independently of the haversine path.
    fn law_of_cosines(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat * PI / 180.0, b.lat * PI / 180.0);
        let dl = (b.lon - a.lon) * PI / 180.0;
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_M * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identical_points() {
        assert_eq!(haversine_distance(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(initial_bearing(p(12.0, 3.0), p(12.0, 3.0)), 0.0);
    }

    #[test]
    fn meridian_degree() {
        let d = haversine_distance(p(0.0, 0.0), p(1.0, 0.0));
        assert!((d - 111_194.93).abs() < 0.01, "{d}");
        assert!((d - EARTH_RADIUS_M * PI / 180.0).abs() < 1e-6);
    }

    #[test]
    fn antipodal() {
        let d = haversine_distance(p(0.0, 0.0), p(0.0, 180.0));
        assert!((d - PI * EARTH_RADIUS_M).abs() < 0.01);
    }

    #[test]
    fn oracle_distance_10_10_to_20_25() {
        // frozen from the law-of-cosines oracle
        let expected = 1_955_254.130_545_548;
        let oracle = law_of_cosines(p(10.0, 10.0), p(20.0, 25.0));
        assert!((oracle - expected).abs() < 1.0, "{oracle}");
        let d = haversine_distance(p(10.0, 10.0), p(20.0, 25.0));
        assert!((d - oracle).abs() < 0.5);
    }

    #[test]
    fn cardinal_bearings() {
        assert_eq!(initial_bearing(p(0.0, 0.0), p(1.0, 0.0)), 0.0);
        assert!((initial_bearing(p(0.0, 0.0), p(0.0, 1.0)) - PI / 2.0).abs() < 1e-15);
        assert!((initial_bearing(p(0.0, 0.0), p(0.0, -1.0)) + PI / 2.0).abs() < 1e-15);
        assert_eq!(initial_bearing(p(1.0, 0.0), p(0.0, 0.0)), PI);
    }

    #[test]
    fn bearing_10_10_to_20_25() {
        // hand-evaluated atan2(x, y) at 64 bits, frozen
        let b = initial_bearing(p(10.0, 10.0), p(20.0, 25.0));
        assert!((b - 0.935_767_891_109_325_9).abs() < 1e-9, "{b:.15}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(GeoPoint::new(95.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn destination_round_trip() {
        let start = p(48.0, 11.0);
        let end = destination(start, 0.7, 1234.5);
        assert!((haversine_distance(start, end) - 1234.5).abs() < 1e-6);
        assert!((initial_bearing(start, end) - 0.7).abs() < 1e-9);
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_bounded(a in point(), b in point()) {
            let d = haversine_distance(a, b);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, haversine_distance(b, a));
            prop_assert!(d <= PI * EARTH_RADIUS_M);
            prop_assert_eq!(haversine_distance(a, a), 0.0);
        }

        #[test]
        fn bearing_in_half_open_range(a in point(), b in point()) {
            let beta = initial_bearing(a, b);
            prop_assert!(beta > -PI && beta <= PI);
        }
    }
}
