//! Record-at-a-time featurizer for live feeds and latency benchmarks.
//!
//! Each vessel keeps its last anchor point and a short raw history. An
//! incoming report is checked against the anchor: earlier or equal
//! timestamps are duplicates, anything faster than `s_max` is an outlier and
//! anything slower than `s_min` is stationary and ends the current trip. A
//! gap longer than `gap_max` also starts a new trip. The first point of a
//! trip has no kinematics yet and yields no features.
//!
//! Features are computed on the raw history rather than a resampled grid,
//! and trips are not held back until they reach `length_min` points.

use std::collections::HashMap;

use crate::features::{extract_features, FeatureEncoding, FeatureVector, HorizonSet};
use crate::geo::{initial_bearing_deg, speed_knots};
use crate::ingest::{AisRecord, PoiIndex, VesselId};
use crate::prep::{KinematicPoint, PrepConfig, Trip};

/// What happened to one pushed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamOutcome {
    Duplicate,
    Outlier,
    Stationary,
    /// First point of a new trip.
    TripStart,
    /// Feature vectors were produced, one per horizon.
    Featurized,
}

#[derive(Debug, Clone)]
struct VesselState {
    anchor: KinematicPoint,
    /// Current trip; `None` after a stop.
    trip: Option<Trip>,
    next_trip_id: u32,
}

#[derive(Debug, Clone)]
pub struct OnlineFeaturizer {
    cfg: PrepConfig,
    horizons: HorizonSet,
    encoding: FeatureEncoding,
    pois: PoiIndex,
    vessels: HashMap<VesselId, VesselState>,
}

impl OnlineFeaturizer {
    pub fn new(cfg: PrepConfig, horizons: HorizonSet, encoding: FeatureEncoding, pois: PoiIndex) -> Self {
        OnlineFeaturizer { cfg, horizons, encoding, pois, vessels: HashMap::new() }
    }

    pub fn horizons(&self) -> &HorizonSet {
        &self.horizons
    }

    pub fn n_vessels(&self) -> usize {
        self.vessels.len()
    }

    fn start_trip(&self, id: &VesselId, trip_id: u32, rec: &AisRecord) -> Trip {
        let origin = self
            .pois
            .nearest(rec.pos)
            .filter(|&(_, d)| d <= self.cfg.d_min)
            .map(|(p, _)| p.poi_id);
        Trip {
            vessel_id: id.clone(),
            trip_id,
            vessel_type: rec.vessel_type,
            origin_poi: origin,
            start_pos: rec.pos,
            points: vec![KinematicPoint { timestamp: rec.timestamp, pos: rec.pos, speed: 0.0, bearing: 0.0 }],
        }
    }

    /// Feeds one report. Feature vectors, if any, are appended to `out`.
    pub fn push(&mut self, rec: &AisRecord, out: &mut Vec<FeatureVector>) -> StreamOutcome {
        let Some(state) = self.vessels.get_mut(&rec.vessel_id) else {
            let trip = self.start_trip(&rec.vessel_id, 0, rec);
            let anchor = trip.points[0];
            self.vessels
                .insert(rec.vessel_id.clone(), VesselState { anchor, trip: Some(trip), next_trip_id: 1 });
            return StreamOutcome::TripStart;
        };

        let anchor = state.anchor;
        if rec.timestamp <= anchor.timestamp {
            return StreamOutcome::Duplicate;
        }
        let dt = rec.timestamp - anchor.timestamp;
        let speed = speed_knots(anchor.pos, rec.pos, dt as f64).unwrap_or(0.0);
        if speed > self.cfg.s_max {
            return StreamOutcome::Outlier;
        }
        let bearing = initial_bearing_deg(anchor.pos, rec.pos).unwrap_or(anchor.bearing);
        let point = KinematicPoint { timestamp: rec.timestamp, pos: rec.pos, speed, bearing };
        state.anchor = point;

        if speed < self.cfg.s_min {
            state.trip = None;
            return StreamOutcome::Stationary;
        }
        if dt > self.cfg.gap_max || state.trip.is_none() {
            let id = state.next_trip_id;
            state.next_trip_id += 1;
            let trip = self.start_trip(&rec.vessel_id, id, rec);
            let state = self.vessels.get_mut(&rec.vessel_id).expect("present");
            state.trip = Some(trip);
            return StreamOutcome::TripStart;
        }

        let trip = state.trip.as_mut().expect("checked above");
        if trip.points.len() == 1 {
            trip.points[0].speed = speed;
            trip.points[0].bearing = bearing;
        }
        trip.points.push(point);

        // keep one point at or before the longest look-back
        let horizon_s = i64::from(self.horizons.max()) * 60;
        let keep_from = trip.points.partition_point(|p| p.timestamp <= rec.timestamp - horizon_s);
        if keep_from > 1 && keep_from * 2 > trip.points.len() {
            trip.points.drain(..keep_from - 1);
        }

        let i = trip.points.len() - 1;
        for &h in self.horizons.minutes() {
            out.push(extract_features(trip, i, h, &self.encoding).expect("index in range"));
        }
        StreamOutcome::Featurized
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{F_DELTA_T, F_LAST_LAT, F_SPEED};
    use crate::geo::{destination_point, GeoPoint, KNOT_MS};

    fn rec(t: i64, pos: GeoPoint) -> AisRecord {
        AisRecord { vessel_id: VesselId::from("v"), timestamp: t, pos, vessel_type: Some(70) }
    }

    fn featurizer() -> OnlineFeaturizer {
        OnlineFeaturizer::new(
            PrepConfig::default(),
            HorizonSet::new(vec![10, 20]).unwrap(),
            FeatureEncoding::default(),
            PoiIndex::default(),
        )
    }

    #[test]
    fn classifies_records() {
        let mut f = featurizer();
        let mut out = Vec::new();
        let p0 = GeoPoint::new(-4.5, 48.3).unwrap();
        let at = |t: i64| destination_point(p0, 45.0, 10.0 * KNOT_MS * t as f64).unwrap();
        assert_eq!(f.push(&rec(0, p0), &mut out), StreamOutcome::TripStart);
        assert_eq!(f.push(&rec(60, at(60)), &mut out), StreamOutcome::Featurized);
        assert_eq!(out.len(), 2);
        assert!((out[0].0[F_SPEED] - 10.0).abs() < 1e-6);
        assert_eq!(out[1].0[F_DELTA_T], 20.0);
        assert_eq!(f.push(&rec(60, at(60)), &mut out), StreamOutcome::Duplicate);
        let far = destination_point(at(60), 0.0, 50_000.0).unwrap();
        assert_eq!(f.push(&rec(120, far), &mut out), StreamOutcome::Outlier);
        assert_eq!(f.push(&rec(120, at(120)), &mut out), StreamOutcome::Featurized);
        assert_eq!(f.push(&rec(180, at(120)), &mut out), StreamOutcome::Stationary);
        assert_eq!(f.push(&rec(240, at(180)), &mut out), StreamOutcome::TripStart);
        assert_eq!(f.push(&rec(10_000, at(9_940)), &mut out), StreamOutcome::TripStart);
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn look_back_available_after_pruning() {
        let mut f = featurizer();
        let mut out = Vec::new();
        let p0 = GeoPoint::new(-4.5, 48.3).unwrap();
        for k in 0..200 {
            let t = k * 30;
            f.push(&rec(t, destination_point(p0, 0.0, 5.0 * t as f64).unwrap()), &mut out);
        }
        let last = out.last().unwrap();
        // 20 min at 5 m/s due north
        let expect = (6000.0f64 / crate::geo::EARTH_RADIUS_M).to_degrees();
        assert!((last.0[F_LAST_LAT] - expect).abs() < 1e-9);
        let trip = f.vessels.values().next().unwrap().trip.as_ref().unwrap();
        assert!(trip.points.len() < 120);
    }
}
