//! Feature vectors and (Δlon, Δlat) targets built from resampled trips.
//!
//! Missing values are `NaN`. The column order is fixed by [`FEATURE_NAMES`]
//! and recorded in every saved model.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::geo::{destination_point, haversine_m, lerp_point, GeoPoint, KNOT_MS};
use crate::prep::Trip;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("grid index {index} out of range for trip of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid horizon set: {0}")]
    InvalidHorizons(String),
}

pub const N_FEATURES: usize = 12;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "v_type",
    "lon",
    "lat",
    "sp",
    "br",
    "extrap_diff_lon",
    "extrap_diff_lat",
    "last_diff_lon",
    "last_diff_lat",
    "origin",
    "orig_dist",
    "delta_t",
];

pub const F_VTYPE: usize = 0;
pub const F_LON: usize = 1;
pub const F_LAT: usize = 2;
pub const F_SPEED: usize = 3;
pub const F_BEARING: usize = 4;
pub const F_EXTRAP_LON: usize = 5;
pub const F_EXTRAP_LAT: usize = 6;
pub const F_LAST_LON: usize = 7;
pub const F_LAST_LAT: usize = 8;
pub const F_ORIGIN: usize = 9;
pub const F_ORIG_DIST: usize = 10;
pub const F_DELTA_T: usize = 11;

pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn position(&self) -> Option<GeoPoint> {
        GeoPoint::new(self.0[F_LON], self.0[F_LAT]).ok()
    }

    pub fn horizon_min(&self) -> f64 {
        self.0[F_DELTA_T]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureVector,
    pub target_dlon: f64,
    pub target_dlat: f64,
    /// Unix seconds of the source grid point.
    pub source_timestamp: i64,
}

impl TrainingExample {
    /// Current position plus target.
    pub fn future_position(&self) -> GeoPoint {
        let f = &self.features.0;
        GeoPoint::clamped(f[F_LON] + self.target_dlon, f[F_LAT] + self.target_dlat)
            .expect("finite target")
            .0
    }
}

/// Prediction horizons in minutes, positive and strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSet(Vec<u32>);

impl HorizonSet {
    pub fn new(horizons: Vec<u32>) -> Result<Self, FeatureError> {
        if horizons.is_empty() {
            return Err(FeatureError::InvalidHorizons("empty".into()));
        }
        if horizons[0] == 0 || horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::InvalidHorizons(format!(
                "{horizons:?} must be positive and strictly ascending"
            )));
        }
        Ok(HorizonSet(horizons))
    }

    pub fn minutes(&self) -> &[u32] {
        &self.0
    }

    pub fn max(&self) -> u32 {
        *self.0.last().expect("non-empty")
    }
}

impl Default for HorizonSet {
    fn default() -> Self {
        HorizonSet(vec![10, 20, 30, 40, 50, 60])
    }
}

/// Ordinal codes in first-seen order. Unknown and absent values encode as
/// [`MISSING`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryEncoder {
    values: Vec<u32>,
    codes: HashMap<u32, u32>,
}

impl CategoryEncoder {
    pub fn fit(values: impl IntoIterator<Item = Option<u32>>) -> Self {
        let mut enc = CategoryEncoder::default();
        for v in values.into_iter().flatten() {
            if !enc.codes.contains_key(&v) {
                enc.codes.insert(v, enc.values.len() as u32);
                enc.values.push(v);
            }
        }
        enc
    }

    pub fn from_values(values: Vec<u32>) -> Self {
        let codes = values.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        CategoryEncoder { values, codes }
    }

    /// Raw values in code order.
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn code(&self, value: Option<u32>) -> Option<u32> {
        value.and_then(|v| self.codes.get(&v).copied())
    }

    pub fn encode(&self, value: Option<u32>) -> f64 {
        self.code(value).map_or(MISSING, f64::from)
    }
}

/// Category encoders for vessel type and origin POI.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureEncoding {
    pub vessel_type: CategoryEncoder,
    pub origin: CategoryEncoder,
}

impl FeatureEncoding {
    pub fn fit(trips: &[Trip]) -> Self {
        FeatureEncoding {
            vessel_type: CategoryEncoder::fit(trips.iter().map(|t| t.vessel_type)),
            origin: CategoryEncoder::fit(trips.iter().map(|t| t.origin_poi)),
        }
    }
}

/// Trip position at `t` (unix seconds), interpolated between grid points.
pub fn position_at(trip: &Trip, t: i64) -> Option<GeoPoint> {
    let pts = &trip.points;
    let (first, last) = (pts.first()?, pts.last()?);
    if t < first.timestamp || t > last.timestamp {
        return None;
    }
    let j = pts.partition_point(|p| p.timestamp < t);
    let b = &pts[j];
    if b.timestamp == t {
        return Some(b.pos);
    }
    let a = &pts[j - 1];
    let f = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
    lerp_point(a.pos, b.pos, f).ok()
}

fn lon_diff(to: f64, from: f64) -> f64 {
    let d = to - from;
    if d > 180.0 {
        d - 360.0
    } else if d < -180.0 {
        d + 360.0
    } else {
        d
    }
}

/// Features for grid point `i` at a horizon of `dt_min` minutes.
pub fn extract_features(
    trip: &Trip,
    i: usize,
    dt_min: u32,
    encoding: &FeatureEncoding,
) -> Result<FeatureVector, FeatureError> {
    let p = trip.points.get(i).ok_or(FeatureError::IndexOutOfRange {
        index: i,
        len: trip.points.len(),
    })?;
    let dt_s = i64::from(dt_min) * 60;
    let pos = p.pos;

    let reach_m = p.speed * KNOT_MS * dt_s as f64;
    let (extrap_lon, extrap_lat) = match destination_point(pos, p.bearing, reach_m) {
        Ok(q) => (lon_diff(q.lon(), pos.lon()), q.lat() - pos.lat()),
        Err(_) => (MISSING, MISSING),
    };
    let (last_lon, last_lat) = match position_at(trip, p.timestamp - dt_s) {
        Some(past) => (lon_diff(pos.lon(), past.lon()), pos.lat() - past.lat()),
        None => (MISSING, MISSING),
    };

    Ok(FeatureVector([
        encoding.vessel_type.encode(trip.vessel_type),
        pos.lon(),
        pos.lat(),
        p.speed,
        p.bearing,
        extrap_lon,
        extrap_lat,
        last_lon,
        last_lat,
        encoding.origin.encode(trip.origin_poi),
        haversine_m(pos, trip.start_pos),
        f64::from(dt_min),
    ]))
}

fn trip_examples(trip: &Trip, horizons: &HorizonSet, encoding: &FeatureEncoding) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for (i, p) in trip.points.iter().enumerate() {
        for &dt in horizons.minutes() {
            let Some(future) = position_at(trip, p.timestamp + i64::from(dt) * 60) else {
                // horizons ascend, so larger ones fall off the end too
                break;
            };
            let features = extract_features(trip, i, dt, encoding).expect("index in range");
            out.push(TrainingExample {
                features,
                target_dlon: lon_diff(future.lon(), p.pos.lon()),
                target_dlat: future.lat() - p.pos.lat(),
                source_timestamp: p.timestamp,
            });
        }
    }
    out
}

/// One example per (trip, grid point, horizon) whose future position lies
/// inside the trip. Order: trip, grid index, horizon.
pub fn build_training_set(
    trips: &[Trip],
    horizons: &HorizonSet,
    encoding: &FeatureEncoding,
) -> Vec<TrainingExample> {
    let per_trip: Vec<Vec<TrainingExample>> = trips
        .par_iter()
        .map(|t| trip_examples(t, horizons, encoding))
        .collect();
    per_trip.into_iter().flatten().collect()
}

/// Inference-side feature vectors: every grid point at every horizon.
pub fn inference_rows(
    trip: &Trip,
    horizons: &HorizonSet,
    encoding: &FeatureEncoding,
) -> Vec<(usize, u32, FeatureVector)> {
    let mut out = Vec::with_capacity(trip.points.len() * horizons.minutes().len());
    for i in 0..trip.points.len() {
        for &dt in horizons.minutes() {
            out.push((i, dt, extract_features(trip, i, dt, encoding).expect("index in range")));
        }
    }
    out
}

/// Per-horizon vessel, trip and example counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonCounts {
    pub horizon_min: u32,
    pub vessels: usize,
    pub trips: usize,
    pub points: usize,
}

pub fn dataset_statistics(trips: &[Trip], horizons: &HorizonSet) -> Vec<HorizonCounts> {
    horizons
        .minutes()
        .iter()
        .map(|&dt| {
            let span = i64::from(dt) * 60;
            let mut vessels = std::collections::HashSet::new();
            let mut n_trips = 0;
            let mut points = 0;
            for t in trips {
                let (Some(a), Some(b)) = (t.points.first(), t.points.last()) else {
                    continue;
                };
                let n = t.points.iter().filter(|p| p.timestamp + span <= b.timestamp).count();
                debug_assert!(n == 0 || a.timestamp + span <= b.timestamp);
                if n > 0 {
                    n_trips += 1;
                    points += n;
                    vessels.insert(&t.vessel_id);
                }
            }
            HorizonCounts { horizon_min: dt, vessels: vessels.len(), trips: n_trips, points }
        })
        .collect()
}

/// Dumps examples as `dlon,dlat,ts,f0..f11`; missing values are empty fields.
pub fn write_matrix<W: Write>(sink: W, examples: &[TrainingExample]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    write!(w, "dlon,dlat,ts")?;
    for i in 0..N_FEATURES {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for ex in examples {
        write!(w, "{},{},{}", ex.target_dlon, ex.target_dlat, ex.source_timestamp)?;
        for v in ex.features.0 {
            if v.is_nan() {
                write!(w, ",")?;
            } else {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}
