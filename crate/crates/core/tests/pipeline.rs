mod common;

use proptest::prelude::*;
use seacast::features::{self, FeatureEncoding, FeatureVector, HorizonSet};
use seacast::ingest::{self, AisRecord};
use seacast::prep::{self, PrepConfig};
use seacast::stream::{OnlineFeaturizer, StreamOutcome};
use seacast::synth::{self, FaultConfig, FleetConfig};

fn small_fleet(seed: u64, n: usize) -> FleetConfig {
    FleetConfig { n_vessels: n, duration_s: 3 * 3600, seed, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fuzzed_corpus_postconditions(seed in 0u64..1_000) {
        let fleet = synth::fuzzed_corpus(&small_fleet(seed, 8));
        let cfg = PrepConfig::default();
        let (trips, stats) = prep::prepare_all(ingest::group_by_vessel(fleet.records.clone()), &fleet.pois, &cfg);

        prop_assert_eq!(stats.input_records, fleet.records.len() as u64);
        prop_assert_eq!(stats.input_records, stats.dropped() + stats.retained_points);
        prop_assert_eq!(stats.trips, trips.len() as u64);
        prop_assert_eq!(stats.grid_points, trips.iter().map(|t| t.points.len() as u64).sum::<u64>());
        for t in &trips {
            prop_assert!(t.points.len() >= 2);
            prop_assert!(t.points.windows(2).all(|w| w[1].timestamp - w[0].timestamp == cfg.rate));
            if let Some(poi) = t.origin_poi {
                let p = fleet.pois.get(poi).unwrap();
                let d = common::distance((p.pos.lon(), p.pos.lat()), (t.start_pos.lon(), t.start_pos.lat()));
                prop_assert!(d <= cfg.d_min * (1.0 + 1e-9));
            }
        }

        let mut buf = Vec::new();
        prep::write_trips(&mut buf, &trips).unwrap();
        let back = prep::read_trips(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        prep::write_trips(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
        prop_assert_eq!(prep::infer_rate(&back), if back.is_empty() { None } else { Some(cfg.rate) });
    }

    #[test]
    fn dedup_is_idempotent_and_strictly_ordered(seed in 0u64..1_000) {
        let fleet = synth::fuzzed_corpus(&small_fleet(seed, 3));
        for (_, recs) in ingest::group_by_vessel(fleet.records) {
            let once = prep::deduplicate(recs);
            prop_assert!(once.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            prop_assert_eq!(prep::deduplicate(once.clone()), once);
        }
    }

    #[test]
    fn training_targets_reconstruct_future_position(seed in 0u64..1_000) {
        let fleet = synth::generate(&small_fleet(seed, 4).jittered(), &FaultConfig::none());
        let (trips, _) = prep::prepare_all(ingest::group_by_vessel(fleet.records), &fleet.pois, &PrepConfig::default());
        let hs = HorizonSet::default();
        let enc = FeatureEncoding::fit(&trips);
        for e in features::build_training_set(&trips, &hs, &enc) {
            let trip = trips.iter().find(|t| t.points.iter().any(|p| p.timestamp == e.source_timestamp)).unwrap();
            let h = e.features.horizon_min() as i64;
            let future = features::position_at(trip, e.source_timestamp + h * 60).unwrap();
            let got = e.future_position();
            prop_assert!((got.lon() - future.lon()).abs() < 1e-12 && (got.lat() - future.lat()).abs() < 1e-12);
        }
    }
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

#[test]
fn streaming_features_match_batch_on_grid_aligned_reports() {
    let cfg = FleetConfig {
        n_vessels: 5,
        report_interval_s: 90,
        stagger_s: 90 * 40,
        ..Default::default()
    };
    let fleet = synth::constant_velocity_fleet(&cfg);
    let (trips, _) = prep::prepare_all(ingest::group_by_vessel(fleet.records.clone()), &fleet.pois, &PrepConfig::default());
    assert_eq!(trips.len(), 5);
    let hs = HorizonSet::default();
    let enc = FeatureEncoding::fit(&trips);

    let mut stream = OnlineFeaturizer::new(PrepConfig::default(), hs.clone(), enc.clone(), fleet.pois.clone());
    let mut emitted: Vec<(AisRecord, Vec<FeatureVector>)> = Vec::new();
    for rec in &fleet.records {
        let mut out = Vec::new();
        let outcome = stream.push(rec, &mut out);
        assert!(matches!(outcome, StreamOutcome::TripStart | StreamOutcome::Featurized));
        emitted.push((rec.clone(), out));
    }
    assert_eq!(stream.n_vessels(), 5);

    let mut compared = 0;
    for (rec, vectors) in emitted.iter().filter(|(_, v)| !v.is_empty()) {
        let trip = trips.iter().find(|t| t.vessel_id == rec.vessel_id).unwrap();
        let i = trip.points.iter().position(|p| p.timestamp == rec.timestamp).unwrap();
        for (v, &h) in vectors.iter().zip(hs.minutes()) {
            let batch = features::extract_features(trip, i, h, &enc).unwrap();
            for (k, (a, b)) in v.0.iter().zip(batch.0).enumerate() {
                assert!(same(*a, b), "{:?} t={} h={h} field {k}: {a} vs {b}", rec.vessel_id, rec.timestamp);
            }
            compared += 1;
        }
    }
    assert!(compared > 1000);
}
