//! Spherical-earth geodesy: distance, bearing, speed, forward projection and
//! coordinate-space interpolation.
//!
//! Every function here is pure. Validity of coordinates is established once,
//! when a [`GeoPoint`] is constructed, so distance computations downstream are
//! infallible.

use thiserror::Error;

/// One knot in meters per second.
pub const KNOT_MS: f64 = 0.514444;

/// One nautical mile in meters.
pub const NAUTICAL_MILE_M: f64 = 1852.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lon {lon}, lat {lat})")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("bearing is undefined between coincident points")]
    UndefinedBearing,
    #[error("time interval must be positive, got {0} s")]
    InvalidInterval(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Sphere used for every distance in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel {
    pub radius_m: f64,
}

impl EarthModel {
    /// Mean earth radius.
    pub const MEAN: EarthModel = EarthModel {
        radius_m: 6_371_000.0,
    };
}

pub const EARTH_RADIUS_M: f64 = EarthModel::MEAN.radius_m;

/// A WGS84 longitude/latitude pair in degrees, treated as a point on the sphere.
///
/// Both components are finite, `lon` lies in `[-180, 180]` and `lat` in
/// `[-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        if lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat)
        {
            Ok(GeoPoint { lon, lat })
        } else {
            Err(GeoError::InvalidCoordinate { lon, lat })
        }
    }

    /// Builds a point by saturating each component into its valid range.
    /// Returns the point and whether any component had to be clamped.
    /// Non-finite components are rejected.
    pub fn clamped(lon: f64, lat: f64) -> Result<(Self, bool), GeoError> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(GeoError::InvalidCoordinate { lon, lat });
        }
        let c_lon = lon.clamp(-180.0, 180.0);
        let c_lat = lat.clamp(-90.0, 90.0);
        let clamped = c_lon != lon || c_lat != lat;
        Ok((GeoPoint { lon: c_lon, lat: c_lat }, clamped))
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let d_phi = (b.lat - a.lat).to_radians();
    let d_lambda = (b.lon - a.lon).to_radians();

    let s_phi = (d_phi / 2.0).sin();
    let s_lambda = (d_lambda / 2.0).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` towards `b`, clockwise from true
/// north, in `[0, 360)`.
pub fn initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if a.lon == b.lon && a.lat == b.lat {
        return Err(GeoError::UndefinedBearing);
    }
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let d_lambda = (b.lon - a.lon).to_radians();

    let y = d_lambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * d_lambda.cos();
    Ok(normalize_bearing(y.atan2(x).to_degrees()))
}

fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// Average speed in knots needed to cover `a → b` in `dt_s` seconds.
pub fn speed_knots(a: GeoPoint, b: GeoPoint, dt_s: f64) -> Result<f64, GeoError> {
    if !(dt_s > 0.0) || !dt_s.is_finite() {
        return Err(GeoError::InvalidInterval(dt_s));
    }
    Ok(haversine_m(a, b) / dt_s / KNOT_MS)
}

/// Forward projection along a great circle.
pub fn destination_point(
    origin: GeoPoint,
    bearing_deg: f64,
    distance_m: f64,
) -> Result<GeoPoint, GeoError> {
    if !(distance_m >= 0.0) || !distance_m.is_finite() {
        return Err(GeoError::InvalidInput(format!(
            "distance must be finite and non-negative, got {distance_m}"
        )));
    }
    if !bearing_deg.is_finite() {
        return Err(GeoError::InvalidInput(format!(
            "bearing must be finite, got {bearing_deg}"
        )));
    }
    if distance_m == 0.0 {
        return Ok(origin);
    }
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();

    let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).clamp(-1.0, 1.0);
    let phi2 = sin_phi2.asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);

    let lon = wrap_lon(lambda2.to_degrees());
    let lat = phi2.to_degrees().clamp(-90.0, 90.0);
    GeoPoint::new(lon, lat)
}

/// Wraps a longitude into `[-180, 180]`.
pub fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Component-wise linear interpolation in lon/lat space.
pub fn lerp_point(a: GeoPoint, b: GeoPoint, f: f64) -> Result<GeoPoint, GeoError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(GeoError::InvalidInput(format!(
            "interpolation fraction must be in [0, 1], got {f}"
        )));
    }
    if f == 1.0 {
        return Ok(b);
    }
    // A convex combination of two valid points is valid.
    Ok(GeoPoint {
        lon: a.lon + f * (b.lon - a.lon),
        lat: a.lat + f * (b.lat - a.lat),
    })
}
