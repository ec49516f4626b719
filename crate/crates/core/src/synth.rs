//! Seeded synthetic AIS fleets for tests, demos and benchmarks.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{destination_point, GeoPoint, KNOT_MS};
use crate::ingest::{AisRecord, Poi, PoiIndex, VesselId};

const PORTS: [(f64, f64); 4] = [(-4.49, 48.38), (-4.77, 48.36), (-5.05, 48.47), (-4.33, 48.10)];
const VESSEL_TYPES: [u32; 5] = [30, 37, 60, 70, 80];

#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub n_vessels: usize,
    /// Voyage length per vessel (seconds).
    pub duration_s: i64,
    pub report_interval_s: i64,
    /// Extra uniform delay added to each reporting interval (seconds).
    pub report_jitter_s: i64,
    /// Cruise speeds are drawn uniformly from this range (knots).
    pub speed_kn: (f64, f64),
    /// Per-report speed noise, uniform in `±speed_jitter_kn`.
    pub speed_jitter_kn: f64,
    /// Per-report heading random-walk step, uniform in `±heading_jitter_deg`.
    pub heading_jitter_deg: f64,
    /// Vessel start times are spread over `[0, stagger_s)` after `start_time`.
    pub stagger_s: i64,
    pub start_time: i64,
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_vessels: 100,
            duration_s: 4 * 3600,
            report_interval_s: 30,
            report_jitter_s: 0,
            speed_kn: (8.0, 20.0),
            speed_jitter_kn: 0.0,
            heading_jitter_deg: 0.0,
            stagger_s: 6 * 3600,
            start_time: 1_443_650_400,
            seed: 7,
        }
    }
}

impl FleetConfig {
    /// Same fleet with noisy speed and heading.
    pub fn jittered(self) -> Self {
        FleetConfig {
            speed_jitter_kn: 3.0,
            heading_jitter_deg: 2.0,
            report_jitter_s: 10,
            ..self
        }
    }
}

/// Injected data-quality problems.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultConfig {
    /// Chance that a report is followed by a same-timestamp copy.
    pub duplicate_prob: f64,
    /// Chance that a report's position is thrown tens of kilometres off.
    pub spike_prob: f64,
    pub stops_per_vessel: usize,
    pub stop_duration_s: i64,
    pub gaps_per_vessel: usize,
    pub gap_duration_s: i64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            duplicate_prob: 0.02,
            spike_prob: 0.01,
            stops_per_vessel: 1,
            stop_duration_s: 1800,
            gaps_per_vessel: 1,
            gap_duration_s: 3600,
        }
    }
}

impl FaultConfig {
    pub fn none() -> Self {
        FaultConfig {
            duplicate_prob: 0.0,
            spike_prob: 0.0,
            stops_per_vessel: 0,
            stop_duration_s: 0,
            gaps_per_vessel: 0,
            gap_duration_s: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFleet {
    /// All reports, ordered by timestamp (ties by vessel).
    pub records: Vec<AisRecord>,
    pub pois: PoiIndex,
    pub vessel_types: HashMap<VesselId, u32>,
}

pub fn ports() -> PoiIndex {
    PoiIndex::new(PORTS.iter().enumerate().map(|(i, &(lon, lat))| Poi {
        poi_id: i as u32 + 1,
        pos: GeoPoint::new(lon, lat).expect("valid port"),
        name: Some(format!("port{}", i + 1)),
    }))
}

fn vessel_id(i: usize) -> VesselId {
    VesselId::from(227_000_000 + i as u64)
}

fn in_windows(t: i64, windows: &[(i64, i64)]) -> bool {
    windows.iter().any(|&(a, b)| t >= a && t < b)
}

/// Windows of `len` seconds placed without overlap inside `(lo, hi)`.
fn random_windows(rng: &mut ChaCha8Rng, count: usize, len: i64, lo: i64, hi: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    if count == 0 || hi - lo <= len {
        return out;
    }
    let slot = (hi - lo) / count as i64;
    for k in 0..count as i64 {
        let a = lo + k * slot;
        let room = slot - len;
        if room <= 0 {
            break;
        }
        let start = a + rng.gen_range(0..room);
        out.push((start, start + len));
    }
    out
}

fn vessel_track(cfg: &FleetConfig, faults: &FaultConfig, i: usize, rng: &mut ChaCha8Rng, out: &mut Vec<AisRecord>) {
    let id = vessel_id(i);
    let vtype = VESSEL_TYPES[rng.gen_range(0..VESSEL_TYPES.len())];
    let (plon, plat) = PORTS[rng.gen_range(0..PORTS.len())];
    let port = GeoPoint::new(plon, plat).expect("valid port");
    let start = destination_point(port, rng.gen_range(0.0..360.0), rng.gen_range(0.0..800.0)).expect("finite");
    let heading0: f64 = rng.gen_range(0.0..360.0);
    let cruise = rng.gen_range(cfg.speed_kn.0..=cfg.speed_kn.1);
    let t0 = cfg.start_time + if cfg.stagger_s > 0 { rng.gen_range(0..cfg.stagger_s) } else { 0 };
    let t_end = t0 + cfg.duration_s;

    // margins keep the first and last hour clear of faults
    let margin = 3600.min(cfg.duration_s / 4);
    let stops = random_windows(rng, faults.stops_per_vessel, faults.stop_duration_s, t0 + margin, t_end - margin);
    let mut gaps = random_windows(rng, faults.gaps_per_vessel, faults.gap_duration_s, t0 + margin, t_end - margin);
    gaps.retain(|g| !stops.iter().any(|s| g.0 < s.1 && s.0 < g.1));

    let smooth = cfg.speed_jitter_kn == 0.0 && cfg.heading_jitter_deg == 0.0;
    let mut pos = start;
    let mut heading = heading0;
    let mut travelled = 0.0;
    let mut t = t0;
    let mut prev_t = t0;
    while t <= t_end {
        let dt = (t - prev_t) as f64;
        if !in_windows(prev_t, &stops) && dt > 0.0 {
            let speed = (cruise + rng.gen_range(-1.0..=1.0) * cfg.speed_jitter_kn).max(0.0);
            heading = (heading + rng.gen_range(-1.0..=1.0) * cfg.heading_jitter_deg).rem_euclid(360.0);
            let step = speed * KNOT_MS * dt;
            if smooth {
                // one great circle from the start keeps the track exactly straight
                travelled += step;
                pos = destination_point(start, heading0, travelled).expect("finite");
            } else {
                pos = destination_point(pos, heading, step).expect("finite");
            }
        }
        if !in_windows(t, &gaps) {
            let reported = if rng.gen_bool(faults.spike_prob) {
                destination_point(pos, rng.gen_range(0.0..360.0), rng.gen_range(20_000.0..80_000.0)).expect("finite")
            } else {
                pos
            };
            out.push(AisRecord { vessel_id: id.clone(), timestamp: t, pos: reported, vessel_type: Some(vtype) });
            if rng.gen_bool(faults.duplicate_prob) {
                let echo = destination_point(pos, 90.0, 50.0).expect("finite");
                out.push(AisRecord { vessel_id: id.clone(), timestamp: t, pos: echo, vessel_type: Some(vtype) });
            }
        }
        prev_t = t;
        t += cfg.report_interval_s
            + if cfg.report_jitter_s > 0 { rng.gen_range(0..=cfg.report_jitter_s) } else { 0 };
    }
}

/// Generates a fleet with the given faults injected.
pub fn generate(cfg: &FleetConfig, faults: &FaultConfig) -> SyntheticFleet {
    let mut records = Vec::new();
    let mut vessel_types = HashMap::new();
    for i in 0..cfg.n_vessels {
        // one stream per vessel so fleets of different sizes share a prefix
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let first = records.len();
        vessel_track(cfg, faults, i, &mut rng, &mut records);
        if let Some(t) = records.get(first).and_then(|r: &AisRecord| r.vessel_type) {
            vessel_types.insert(vessel_id(i), t);
        }
    }
    records.sort_by_key(|r| r.timestamp);
    SyntheticFleet { records, pois: ports(), vessel_types }
}

/// Straight-line, constant-speed vessels with clean reports.
pub fn constant_velocity_fleet(cfg: &FleetConfig) -> SyntheticFleet {
    generate(cfg, &FaultConfig::none())
}

/// Duplicates, GPS spikes, stops and gaps on top of a jittered fleet.
pub fn fuzzed_corpus(cfg: &FleetConfig) -> SyntheticFleet {
    generate(&cfg.clone().jittered(), &FaultConfig::default())
}

/// Writes records with the default `sourcemmsi,t,lon,lat` columns.
pub fn write_ais_csv<W: Write>(sink: W, records: &[AisRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "sourcemmsi,t,lon,lat")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.vessel_id, r.timestamp, r.pos.lon(), r.pos.lat())?;
    }
    w.flush()
}

pub fn write_vessel_types<W: Write>(sink: W, types: &HashMap<VesselId, u32>) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "vessel_id,vessel_type")?;
    let mut rows: Vec<_> = types.iter().collect();
    rows.sort();
    for (id, t) in rows {
        writeln!(w, "{id},{t}")?;
    }
    w.flush()
}

pub fn write_pois<W: Write>(sink: W, pois: &PoiIndex) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "poi_id,lon,lat,name")?;
    for p in pois.pois() {
        writeln!(w, "{},{},{},{}", p.poi_id, p.pos.lon(), p.pos.lat(), p.name.as_deref().unwrap_or(""))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_m;
    use crate::ingest::{group_by_vessel, parse_ais_csv, parse_poi_csv, parse_vessel_types, ColumnMapping};

    fn small() -> FleetConfig {
        FleetConfig { n_vessels: 5, duration_s: 7200, ..Default::default() }
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = constant_velocity_fleet(&small());
        let b = constant_velocity_fleet(&small());
        assert_eq!(a.records, b.records);
        let c = constant_velocity_fleet(&FleetConfig { seed: 8, ..small() });
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn constant_speed_holds() {
        let fleet = constant_velocity_fleet(&small());
        for (_, recs) in group_by_vessel(fleet.records) {
            let speeds: Vec<f64> = recs
                .windows(2)
                .map(|w| haversine_m(w[0].pos, w[1].pos) / (w[1].timestamp - w[0].timestamp) as f64)
                .collect();
            let (lo, hi) = speeds.iter().fold((f64::MAX, f64::MIN), |(l, h), &s| (l.min(s), h.max(s)));
            assert!(hi - lo < 1e-6 * hi, "speeds vary: {lo}..{hi}");
        }
    }

    #[test]
    fn faults_are_injected() {
        let fleet = fuzzed_corpus(&FleetConfig { n_vessels: 20, ..Default::default() });
        let groups = group_by_vessel(fleet.records.clone());
        let dups: usize = groups.values().map(|r| r.windows(2).filter(|w| w[0].timestamp == w[1].timestamp).count()).sum();
        assert!(dups > 0);
        let long_gaps = groups.values().filter(|r| r.windows(2).any(|w| w[1].timestamp - w[0].timestamp > 2700)).count();
        assert!(long_gaps > 0);
        assert!(fleet.records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn csv_writers_round_trip() {
        let fleet = constant_velocity_fleet(&small());
        let mut buf = Vec::new();
        write_ais_csv(&mut buf, &fleet.records).unwrap();
        let (back, stats) = parse_ais_csv(buf.as_slice(), &ColumnMapping::default()).unwrap();
        assert_eq!(stats.rows_valid() as usize, fleet.records.len());
        assert!(back.iter().zip(&fleet.records).all(|(a, b)| a.pos == b.pos && a.timestamp == b.timestamp));

        let mut buf = Vec::new();
        write_vessel_types(&mut buf, &fleet.vessel_types).unwrap();
        assert_eq!(parse_vessel_types(buf.as_slice()).unwrap(), fleet.vessel_types);

        let mut buf = Vec::new();
        write_pois(&mut buf, &fleet.pois).unwrap();
        assert_eq!(parse_poi_csv(buf.as_slice()).unwrap().pois(), fleet.pois.pois());
    }
}
