//! Per-vessel trajectory cleaning: deduplication, kinematics, speed outliers,
//! stationary points, trip segmentation, origin POI and fixed-rate
//! resampling.
//!
//! Stage order is dedup → kinematics → outliers → stationarity/segmentation →
//! length filter → origin → resampling. Vessels are independent and processed
//! in parallel; results are collected in vessel-id order so output is
//! deterministic regardless of worker count.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::geo::{initial_bearing_deg, lerp_point, speed_knots, GeoPoint};
use crate::ingest::{AisRecord, PoiIndex, VesselId};

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("invalid preprocessing config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trips file line {line}: {message}")]
    Format { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    /// Stationary below this speed (knots).
    pub s_min: f64,
    /// Outlier above this speed (knots).
    pub s_max: f64,
    /// Longest gap inside one trip (seconds).
    pub gap_max: i64,
    /// Fewest raw points a trip may have.
    pub length_min: usize,
    /// Origin POI radius (meters).
    pub d_min: f64,
    /// Resampling period (seconds).
    pub rate: i64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            s_min: 1.0,
            s_max: 50.0,
            gap_max: 45 * 60,
            length_min: 30,
            d_min: crate::geo::NAUTICAL_MILE_M,
            rate: 90,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PrepError> {
        let err = |m: &str| Err(PrepError::Config(m.to_owned()));
        if !(self.s_min >= 0.0 && self.s_min < self.s_max && self.s_max.is_finite()) {
            return err("need 0 <= s_min < s_max");
        }
        if !(self.rate > 0 && self.gap_max > self.rate) {
            return err("need gap_max > rate > 0");
        }
        if self.length_min < 2 {
            return err("length_min must be at least 2");
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return err("d_min must be positive");
        }
        Ok(())
    }
}

/// A cleaned position with speed (knots) and bearing (degrees) computed from
/// its predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicPoint {
    pub timestamp: i64,
    pub pos: GeoPoint,
    pub speed: f64,
    pub bearing: f64,
}

/// A resampled voyage of one vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vessel_id: VesselId,
    pub trip_id: u32,
    pub vessel_type: Option<u32>,
    pub origin_poi: Option<u32>,
    /// First raw point of the trip.
    pub start_pos: GeoPoint,
    /// Evenly spaced grid points.
    pub points: Vec<KinematicPoint>,
}

/// Drop counts per stage. Every input record lands in exactly one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrepStats {
    pub vessels: u64,
    pub input_records: u64,
    pub duplicates: u64,
    pub outliers: u64,
    pub stationary: u64,
    pub short_trip_points: u64,
    pub antimeridian_points: u64,
    pub unresampleable_points: u64,
    /// Raw points inside kept trips.
    pub retained_points: u64,
    pub trips: u64,
    pub grid_points: u64,
}

impl PrepStats {
    pub fn dropped(&self) -> u64 {
        self.duplicates
            + self.outliers
            + self.stationary
            + self.short_trip_points
            + self.antimeridian_points
            + self.unresampleable_points
    }

    fn merge(&mut self, o: &PrepStats) {
        self.vessels += o.vessels;
        self.input_records += o.input_records;
        self.duplicates += o.duplicates;
        self.outliers += o.outliers;
        self.stationary += o.stationary;
        self.short_trip_points += o.short_trip_points;
        self.antimeridian_points += o.antimeridian_points;
        self.unresampleable_points += o.unresampleable_points;
        self.retained_points += o.retained_points;
        self.trips += o.trips;
        self.grid_points += o.grid_points;
    }
}

/// Keeps the first record of every run of equal timestamps.
pub fn deduplicate(mut records: Vec<AisRecord>) -> Vec<AisRecord> {
    records.dedup_by(|later, earlier| later.timestamp == earlier.timestamp);
    records
}

/// Speed and bearing of the hop `a → b`. Coincident points carry
/// `prev_bearing` forward.
fn hop(a: GeoPoint, ta: i64, b: GeoPoint, tb: i64, prev_bearing: f64) -> (f64, f64) {
    let dt = (tb - ta) as f64;
    let speed = speed_knots(a, b, dt).unwrap_or(0.0);
    let bearing = initial_bearing_deg(a, b).unwrap_or(prev_bearing);
    (speed, bearing)
}

fn annotate(points: impl ExactSizeIterator<Item = (i64, GeoPoint)>) -> Vec<KinematicPoint> {
    let mut out: Vec<KinematicPoint> = Vec::with_capacity(points.len());
    for (t, pos) in points {
        let kp = match out.last() {
            None => KinematicPoint { timestamp: t, pos, speed: 0.0, bearing: 0.0 },
            Some(prev) => {
                // the first point's bearing is a placeholder until it copies the second's
                let prev_bearing = if out.len() == 1 { 0.0 } else { prev.bearing };
                let (speed, bearing) = hop(prev.pos, prev.timestamp, pos, t, prev_bearing);
                KinematicPoint { timestamp: t, pos, speed, bearing }
            }
        };
        out.push(kp);
    }
    copy_head_kinematics(&mut out);
    out
}

fn copy_head_kinematics(points: &mut [KinematicPoint]) {
    if points.len() >= 2 {
        points[0].speed = points[1].speed;
        points[0].bearing = points[1].bearing;
    }
}

/// Speed and bearing for each record from its predecessor. The first point
/// copies the second's values; a lone point gets speed 0 and bearing 0.
pub fn annotate_kinematics(records: &[AisRecord]) -> Vec<KinematicPoint> {
    annotate(records.iter().map(|r| (r.timestamp, r.pos)))
}

/// Forward scan against the last retained point. A point faster than `s_max`
/// from that anchor is dropped; kept points get kinematics relative to it.
pub fn filter_speed_outliers(points: &[KinematicPoint], cfg: &PrepConfig) -> Vec<KinematicPoint> {
    let mut out: Vec<KinematicPoint> = Vec::with_capacity(points.len());
    for p in points {
        let Some(anchor) = out.last() else {
            out.push(*p);
            continue;
        };
        let prev_bearing = if out.len() == 1 { 0.0 } else { anchor.bearing };
        let (speed, bearing) = hop(anchor.pos, anchor.timestamp, p.pos, p.timestamp, prev_bearing);
        if speed > cfg.s_max {
            continue;
        }
        out.push(KinematicPoint { speed, bearing, ..*p });
    }
    copy_head_kinematics(&mut out);
    out
}

fn split_trips(
    points: &[KinematicPoint],
    cfg: &PrepConfig,
    stats: &mut PrepStats,
) -> Vec<Vec<KinematicPoint>> {
    let mut trips = Vec::new();
    let mut current: Vec<KinematicPoint> = Vec::new();
    let mut close = |current: &mut Vec<KinematicPoint>, stats: &mut PrepStats| {
        if current.is_empty() {
            return;
        }
        let trip = std::mem::take(current);
        if trip.len() < cfg.length_min {
            stats.short_trip_points += trip.len() as u64;
        } else {
            trips.push(trip);
        }
    };
    for p in points {
        if p.speed < cfg.s_min {
            stats.stationary += 1;
            close(&mut current, stats);
            continue;
        }
        if let Some(last) = current.last() {
            if p.timestamp - last.timestamp > cfg.gap_max {
                close(&mut current, stats);
            }
        }
        current.push(*p);
    }
    close(&mut current, stats);
    trips
}

/// Removes stationary points (speed < `s_min`), splitting the track at them
/// and at gaps longer than `gap_max`. Trips shorter than `length_min` are
/// discarded.
pub fn split_and_filter_stationary(
    points: &[KinematicPoint],
    cfg: &PrepConfig,
) -> Vec<Vec<KinematicPoint>> {
    split_trips(points, cfg, &mut PrepStats::default())
}

/// Id of the nearest POI if the trip starts within `d_min` of it.
pub fn assign_origin(trip_points: &[KinematicPoint], pois: &PoiIndex, cfg: &PrepConfig) -> Option<u32> {
    let first = trip_points.first()?;
    pois.nearest(first.pos)
        .filter(|&(_, d)| d <= cfg.d_min)
        .map(|(poi, _)| poi.poi_id)
}

/// Linear resampling onto `t0, t0 + rate, …` up to the last raw timestamp,
/// with kinematics recomputed on the grid. `None` if fewer than two grid
/// points result.
pub fn resample_trip(trip_points: &[KinematicPoint], cfg: &PrepConfig) -> Option<Vec<KinematicPoint>> {
    let first = trip_points.first()?;
    let last = trip_points.last()?;
    let n = ((last.timestamp - first.timestamp) / cfg.rate) as usize + 1;
    if n < 2 {
        return None;
    }
    let mut grid = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = first.timestamp + k as i64 * cfg.rate;
        while trip_points[j + 1].timestamp < t {
            j += 1;
        }
        // trip_points[j].timestamp < t <= trip_points[j + 1].timestamp, or t == t0
        let a = &trip_points[j];
        let pos = if t == a.timestamp {
            a.pos
        } else {
            let b = &trip_points[j + 1];
            if t == b.timestamp {
                b.pos
            } else {
                let f = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
                lerp_point(a.pos, b.pos, f).expect("fraction in (0, 1)")
            }
        };
        grid.push((t, pos));
    }
    Some(annotate(grid.into_iter()))
}

fn crosses_antimeridian(points: &[KinematicPoint]) -> bool {
    points
        .windows(2)
        .any(|w| (w[1].pos.lon() - w[0].pos.lon()).abs() > 180.0)
}

/// Runs every stage for one vessel's time-sorted records.
pub fn prepare_vessel(
    vessel_id: &VesselId,
    records: Vec<AisRecord>,
    pois: &PoiIndex,
    cfg: &PrepConfig,
) -> (Vec<Trip>, PrepStats) {
    let mut stats = PrepStats {
        vessels: 1,
        input_records: records.len() as u64,
        ..Default::default()
    };
    let vessel_type = records.iter().find_map(|r| r.vessel_type);

    let deduped = deduplicate(records);
    stats.duplicates = stats.input_records - deduped.len() as u64;
    let annotated = annotate_kinematics(&deduped);
    let clean = filter_speed_outliers(&annotated, cfg);
    stats.outliers = (annotated.len() - clean.len()) as u64;

    let mut trips = Vec::new();
    for raw in split_trips(&clean, cfg, &mut stats) {
        if crosses_antimeridian(&raw) {
            stats.antimeridian_points += raw.len() as u64;
            continue;
        }
        let Some(points) = resample_trip(&raw, cfg) else {
            stats.unresampleable_points += raw.len() as u64;
            continue;
        };
        stats.retained_points += raw.len() as u64;
        stats.grid_points += points.len() as u64;
        trips.push(Trip {
            vessel_id: vessel_id.clone(),
            trip_id: trips.len() as u32,
            vessel_type,
            origin_poi: assign_origin(&raw, pois, cfg),
            start_pos: raw[0].pos,
            points,
        });
    }
    stats.trips = trips.len() as u64;
    (trips, stats)
}

/// Runs the pipeline over every vessel in parallel. Output order follows
/// vessel id, then trip id.
pub fn prepare_all(
    groups: BTreeMap<VesselId, Vec<AisRecord>>,
    pois: &PoiIndex,
    cfg: &PrepConfig,
) -> (Vec<Trip>, PrepStats) {
    let per_vessel: Vec<(Vec<Trip>, PrepStats)> = groups
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(id, recs)| prepare_vessel(&id, recs, pois, cfg))
        .collect();
    let mut stats = PrepStats::default();
    let mut trips = Vec::new();
    for (t, s) in per_vessel {
        stats.merge(&s);
        trips.extend(t);
    }
    (trips, stats)
}

pub const TRIPS_HEADER: [&str; 9] = [
    "vessel_id",
    "trip_id",
    "vessel_type",
    "origin_poi",
    "timestamp",
    "lon",
    "lat",
    "speed",
    "bearing",
];

fn opt_to_string(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes trips as one CSV row per grid point.
pub fn write_trips<W: Write>(sink: W, trips: &[Trip]) -> Result<(), PrepError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let io = |e: csv::Error| PrepError::Io(std::io::Error::other(e));
    w.write_record(TRIPS_HEADER).map_err(io)?;
    for trip in trips {
        let vt = opt_to_string(trip.vessel_type);
        let op = opt_to_string(trip.origin_poi);
        let tid = trip.trip_id.to_string();
        for p in &trip.points {
            w.write_record([
                trip.vessel_id.0.as_str(),
                &tid,
                &vt,
                &op,
                &p.timestamp.to_string(),
                &p.pos.lon().to_string(),
                &p.pos.lat().to_string(),
                &p.speed.to_string(),
                &p.bearing.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// True when a CSV header row is the trips schema.
pub fn is_trips_header(header: &[&str]) -> bool {
    header.len() == TRIPS_HEADER.len() && header.iter().zip(TRIPS_HEADER).all(|(a, b)| a.trim() == b)
}

/// Reads a trips CSV. Consecutive rows sharing (vessel_id, trip_id) form
/// one trip.
pub fn read_trips<R: Read>(source: R) -> Result<Vec<Trip>, PrepError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let fmt_err = |line: u64, message: String| PrepError::Format { line, message };
    let headers = r.headers().map_err(|e| fmt_err(1, e.to_string()))?.clone();
    let hv: Vec<&str> = headers.iter().collect();
    if !is_trips_header(&hv) {
        return Err(fmt_err(1, format!("unexpected header {hv:?}")));
    }
    let mut trips: Vec<Trip> = Vec::new();
    for (i, row) in r.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| {
            if e.is_io_error() {
                PrepError::Io(std::io::Error::other(e))
            } else {
                fmt_err(line, e.to_string())
            }
        })?;
        let bad = |what: &str| fmt_err(line, format!("invalid {what}"));
        let opt = |s: &str, what: &str| -> Result<Option<u32>, PrepError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        let vessel_id = VesselId(row[0].to_owned());
        let trip_id: u32 = row[1].parse().map_err(|_| bad("trip_id"))?;
        let vessel_type = opt(&row[2], "vessel_type")?;
        let origin_poi = opt(&row[3], "origin_poi")?;
        let timestamp: i64 = row[4].parse().map_err(|_| bad("timestamp"))?;
        let lon: f64 = row[5].parse().map_err(|_| bad("lon"))?;
        let lat: f64 = row[6].parse().map_err(|_| bad("lat"))?;
        let speed: f64 = row[7].parse().map_err(|_| bad("speed"))?;
        let bearing: f64 = row[8].parse().map_err(|_| bad("bearing"))?;
        let pos = GeoPoint::new(lon, lat).map_err(|_| bad("position"))?;
        let point = KinematicPoint { timestamp, pos, speed, bearing };

        match trips.last_mut() {
            Some(t) if t.vessel_id == vessel_id && t.trip_id == trip_id => {
                if timestamp <= t.points.last().map_or(i64::MIN, |p| p.timestamp) {
                    return Err(fmt_err(line, "timestamps must increase within a trip".into()));
                }
                t.points.push(point);
            }
            _ => trips.push(Trip {
                vessel_id,
                trip_id,
                vessel_type,
                origin_poi,
                start_pos: pos,
                points: vec![point],
            }),
        }
    }
    Ok(trips)
}

/// Seconds between consecutive grid points, if the trips agree on one.
pub fn infer_rate(trips: &[Trip]) -> Option<i64> {
    let mut rate = None;
    for t in trips {
        for w in t.points.windows(2) {
            let d = w[1].timestamp - w[0].timestamp;
            match rate {
                None => rate = Some(d),
                Some(r) if r != d => return None,
                _ => {}
            }
        }
    }
    rate
}
