use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use seacast::bench::{self, BenchConfig};
use seacast::eval::{
    self, chronological_split, displacement_error_m, persistence_baseline, report_from_errors,
    GridAxis, GridInput, GridSpec, HorizonReport, SplitConfig,
};
use seacast::features::{build_training_set, dataset_statistics, inference_rows, FeatureEncoding, HorizonSet};
use seacast::gbdt::{self, load_model, save_model, GbdtModel, GbdtParams, PrepFingerprint};
use seacast::geo::GeoPoint;
use seacast::ingest::{
    apply_vessel_types, group_by_vessel, parse_ais_csv, parse_poi_csv, parse_vessel_types, AisRecord,
    ColumnMapping, IngestStats, PoiIndex, VesselId,
};
use seacast::prep::{infer_rate, is_trips_header, prepare_all, read_trips, write_trips, PrepConfig, PrepStats, Trip};
use seacast::stream::OnlineFeaturizer;

use crate::error::CliError;
use crate::{
    BenchArgs, ColumnArgs, EvaluateArgs, GridArgs, ModelArgs, PredictArgs, PrepArgs, PreprocessArgs, SideTables,
    TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_RATE: i64 = 90;

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Config(format!("invalid {what} value {x:?}"))))
        .collect()
}

fn horizons(s: &str) -> Result<HorizonSet> {
    Ok(HorizonSet::new(parse_list(s, "horizon")?)?)
}

fn prep_config(a: &PrepArgs, rate: i64) -> Result<PrepConfig> {
    let cfg = PrepConfig {
        s_min: a.smin,
        s_max: a.smax,
        gap_max: a.gap,
        length_min: a.minlen,
        d_min: a.dmin,
        rate: a.rate.unwrap_or(rate),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn gbdt_params(a: &ModelArgs) -> Result<GbdtParams> {
    let p = GbdtParams {
        n_estimators: a.rounds,
        learning_rate: a.lr,
        max_depth: a.depth,
        n_bins: a.bins,
        lambda: a.lambda,
        ..Default::default()
    };
    p.validate()?;
    Ok(p)
}

fn mapping(c: &ColumnArgs) -> ColumnMapping {
    ColumnMapping {
        vessel_id: c.col_id.clone(),
        timestamp: c.col_ts.clone(),
        lon: c.col_lon.clone(),
        lat: c.col_lat.clone(),
        vessel_type: c.col_type.clone(),
        timestamp_millis: c.ts_millis,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn is_trips_file(path: &Path) -> Result<bool> {
    let mut first = String::new();
    BufReader::new(open(path)?).read_line(&mut first)?;
    let fields: Vec<&str> = first.trim_end().split(',').collect();
    Ok(is_trips_header(&fields))
}

fn load_model_file(path: &Path) -> Result<GbdtModel> {
    let model = load_model(BufReader::new(open(path)?))?;
    if !model.matches_feature_layout() {
        return Err(CliError::Model(format!(
            "model features {:?} do not match this build's feature layout",
            model.feature_names
        )));
    }
    Ok(model)
}

struct RawInput {
    records: Vec<AisRecord>,
    stats: IngestStats,
    pois: PoiIndex,
}

fn read_raw(path: &Path, cols: &ColumnArgs, tables: &SideTables) -> Result<RawInput> {
    let map = mapping(cols);
    let pois = match &tables.pois {
        Some(p) => parse_poi_csv(BufReader::new(open(p)?))?,
        None => PoiIndex::default(),
    };
    let types: HashMap<VesselId, u32> = match &tables.vessel_types {
        Some(p) => parse_vessel_types(BufReader::new(open(p)?))?,
        None => HashMap::new(),
    };
    let (mut records, stats) = parse_ais_csv(BufReader::new(open(path)?), &map)?;
    apply_vessel_types(&mut records, &types);
    info!(
        "read {} rows: {} malformed, {} out of range",
        stats.rows_read, stats.rows_malformed, stats.rows_out_of_range
    );
    Ok(RawInput { records, stats, pois })
}

/// Trips from a trips file, or from raw AIS run through preprocessing.
fn load_trips(path: &Path, cols: &ColumnArgs, tables: &SideTables, cfg: &PrepConfig) -> Result<Vec<Trip>> {
    if is_trips_file(path)? {
        let trips = read_trips(BufReader::new(open(path)?))?;
        if let Some(r) = infer_rate(&trips) {
            if r != cfg.rate {
                warn!("trips are sampled every {r} s but {} s was expected", cfg.rate);
            }
        }
        return Ok(trips);
    }
    let raw = read_raw(path, cols, tables)?;
    let (trips, stats) = prepare_all(group_by_vessel(raw.records), &raw.pois, cfg);
    info!("preprocessed {} records into {} trips", stats.input_records, stats.trips);
    Ok(trips)
}

/// Writes to a temporary file next to `out` and renames it into place on
/// success, so failures never leave partial files. Without a path, writes to
/// stdout.
fn emit(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let Some(path) = out else {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        body(&mut lock)?;
        lock.flush()?;
        return Ok(());
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn dataset_label(explicit: &Option<String>, input: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        input.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    })
}

fn print_prep_stats(ingest: &IngestStats, s: &PrepStats) {
    println!("rows read:            {}", ingest.rows_read);
    println!("rows malformed:       {}", ingest.rows_malformed);
    println!("rows out of range:    {}", ingest.rows_out_of_range);
    println!("vessels:              {}", s.vessels);
    println!("duplicates dropped:   {}", s.duplicates);
    println!("outliers dropped:     {}", s.outliers);
    println!("stationary dropped:   {}", s.stationary);
    println!("short-trip points:    {}", s.short_trip_points);
    println!("antimeridian points:  {}", s.antimeridian_points);
    println!("unresampleable:       {}", s.unresampleable_points);
    println!("retained points:      {}", s.retained_points);
    println!("trips:                {}", s.trips);
    println!("grid points:          {}", s.grid_points);
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let hs = horizons(&a.horizons)?;
    let cfg = prep_config(&a.prep, DEFAULT_RATE)?;
    let raw = read_raw(&a.input, &a.cols, &a.tables)?;
    let (trips, stats) = prepare_all(group_by_vessel(raw.records), &raw.pois, &cfg);
    if trips.is_empty() {
        warn!("no trips survived preprocessing");
    }
    emit(Some(&a.out), |w| Ok(write_trips(w, &trips)?))?;
    print_prep_stats(&raw.stats, &stats);
    println!("horizon_min,vessels,trips,points");
    for c in dataset_statistics(&trips, &hs) {
        println!("{},{},{},{}", c.horizon_min, c.vessels, c.trips, c.points);
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let hs = horizons(&a.horizons)?;
    let params = gbdt_params(&a.model)?;
    let cfg = prep_config(&a.prep, DEFAULT_RATE)?;
    let trips = load_trips(&a.input, &a.cols, &a.tables, &cfg)?;
    let rate = infer_rate(&trips).unwrap_or(cfg.rate);
    let encoding = FeatureEncoding::fit(&trips);
    let examples = build_training_set(&trips, &hs, &encoding);
    if examples.is_empty() {
        return Err(CliError::InsufficientData("no training examples".into()));
    }
    if params.n_estimators == 0 {
        warn!("--rounds 0: the model predicts the mean displacement for every input");
    }
    let t0 = Instant::now();
    let (model, _) = gbdt::fit(&examples, &params)?;
    let secs = t0.elapsed().as_secs_f64();
    let model = model.with_metadata(encoding, PrepFingerprint { rate, horizons: hs });
    emit(Some(&a.out), |w| Ok(save_model(&model, w)?))?;
    println!("examples: {}", examples.len());
    println!("training time: {secs:.3} s");
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let explicit = a.horizons.as_deref().map(horizons).transpose()?;
    let model = load_model_file(&a.model)?;
    let hs = explicit.unwrap_or_else(|| model.prep.horizons.clone());
    let cfg = prep_config(&a.prep, model.prep.rate)?;
    let trips = load_trips(&a.input, &a.cols, &a.tables, &cfg)?;

    let mut clamped = 0usize;
    emit(a.out.as_deref(), |w| {
        writeln!(w, "vessel_id,timestamp,horizon_min,pred_lon,pred_lat")?;
        for trip in &trips {
            for (i, h, f) in inference_rows(trip, &hs, &model.encoding) {
                let p = model.predict_position(&f)?;
                clamped += usize::from(p.clamped);
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    trip.vessel_id,
                    trip.points[i].timestamp,
                    h,
                    p.point.lon(),
                    p.point.lat()
                )?;
            }
        }
        Ok(())
    })?;
    if clamped > 0 {
        warn!("{clamped} predictions were clamped to valid coordinates");
    }
    Ok(())
}

type PredictionKey = (VesselId, i64, u32);

fn read_predictions(path: &Path) -> Result<HashMap<PredictionKey, GeoPoint>> {
    let mut r = csv::Reader::from_reader(BufReader::new(open(path)?));
    let header = r.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let expect = ["vessel_id", "timestamp", "horizon_min", "pred_lon", "pred_lat"];
    if header.iter().ne(expect) {
        return Err(CliError::Io(format!("{}: unexpected header", path.display())));
    }
    let mut out = HashMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| CliError::Io(e.to_string()))?;
        let bad = || CliError::Io(format!("{}: invalid row {}", path.display(), i + 2));
        let ts: i64 = row[1].parse().map_err(|_| bad())?;
        let h: u32 = row[2].parse().map_err(|_| bad())?;
        let lon: f64 = row[3].parse().map_err(|_| bad())?;
        let lat: f64 = row[4].parse().map_err(|_| bad())?;
        let p = GeoPoint::new(lon, lat).map_err(|_| bad())?;
        out.insert((VesselId(row[0].to_owned()), ts, h), p);
    }
    Ok(out)
}

/// Scores stored predictions against the trips' true future positions, in
/// the same order a direct model evaluation uses.
fn score_predictions(trips: &[Trip], preds: &HashMap<PredictionKey, GeoPoint>, hs: &HorizonSet) -> (HorizonReport, usize) {
    let mut errors = Vec::new();
    let mut unmatched = 0;
    let enc = FeatureEncoding::default();
    for trip in trips {
        for e in build_training_set(std::slice::from_ref(trip), hs, &enc) {
            let h = e.features.horizon_min();
            match preds.get(&(trip.vessel_id.clone(), e.source_timestamp, h as u32)) {
                Some(&p) => errors.push((h, displacement_error_m(p, e.future_position()))),
                None => unmatched += 1,
            }
        }
    }
    (report_from_errors(hs, errors), unmatched)
}

fn write_reports(out: Option<&Path>, reports: &[(String, HorizonReport)]) -> Result<()> {
    emit(out, |w| {
        writeln!(w, "{}", eval::REPORT_HEADER)?;
        for (name, r) in reports {
            let mut buf = Vec::new();
            eval::write_report(&mut buf, name, r)?;
            let text = String::from_utf8(buf).expect("utf-8");
            for line in text.lines().skip(1) {
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    })
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let explicit = a.horizons.as_deref().map(horizons).transpose()?;
    let split = a.train_fraction.map(SplitConfig::new).transpose()?;
    let params = gbdt_params(&a.model_params)?;
    if a.model.is_none() && a.predictions.is_none() && split.is_none() {
        return Err(CliError::Config("one of --model, --predictions or --train-fraction is required".into()));
    }
    prep_config(&a.prep, DEFAULT_RATE)?;
    let name = dataset_label(&a.dataset, &a.input);

    let mut reports = Vec::new();
    if let Some(model_path) = &a.model {
        let model = load_model_file(model_path)?;
        let hs = explicit.unwrap_or_else(|| model.prep.horizons.clone());
        let cfg = prep_config(&a.prep, model.prep.rate)?;
        let trips = load_trips(&a.input, &a.cols, &a.tables, &cfg)?;
        let examples = build_training_set(&trips, &hs, &model.encoding);
        if examples.is_empty() {
            return Err(CliError::InsufficientData("empty test set".into()));
        }
        eprintln!("test examples: {}", examples.len());
        reports.push((name.clone(), eval::evaluate(&model, &examples, &hs)?));
        if a.baseline {
            reports.push((format!("{name}-persistence"), persistence_baseline(&examples, &hs)));
        }
    } else if let Some(pred_path) = &a.predictions {
        let hs = explicit.unwrap_or_default();
        let cfg = prep_config(&a.prep, DEFAULT_RATE)?;
        let preds = read_predictions(pred_path)?;
        let trips = load_trips(&a.input, &a.cols, &a.tables, &cfg)?;
        let (report, unmatched) = score_predictions(&trips, &preds, &hs);
        if unmatched > 0 {
            warn!("{unmatched} examples had no stored prediction");
        }
        if report.rows.iter().all(|r| r.count == 0) {
            return Err(CliError::InsufficientData("no predictions matched the input".into()));
        }
        reports.push((name.clone(), report));
        if a.baseline {
            let examples = build_training_set(&trips, &hs, &FeatureEncoding::default());
            reports.push((format!("{name}-persistence"), persistence_baseline(&examples, &hs)));
        }
    } else {
        let split = split.expect("checked above");
        let hs = explicit.unwrap_or_default();
        let cfg = prep_config(&a.prep, DEFAULT_RATE)?;
        let trips = load_trips(&a.input, &a.cols, &a.tables, &cfg)?;
        let rate = infer_rate(&trips).unwrap_or(cfg.rate);
        let encoding = FeatureEncoding::fit(&trips);
        let examples = build_training_set(&trips, &hs, &encoding);
        let n = examples.len();
        let (train, test) = chronological_split(examples, &split)?;
        eprintln!(
            "split: {} train ({:.1}%) / {} test ({:.1}%)",
            train.len(),
            100.0 * train.len() as f64 / n as f64,
            test.len(),
            100.0 * test.len() as f64 / n as f64
        );
        if test.is_empty() {
            return Err(CliError::InsufficientData("empty test set".into()));
        }
        let t0 = Instant::now();
        let (model, _) = gbdt::fit(&train, &params)?;
        eprintln!("training time: {:.3} s", t0.elapsed().as_secs_f64());
        let model = model.with_metadata(encoding, PrepFingerprint { rate, horizons: hs.clone() });
        reports.push((name.clone(), eval::evaluate(&model, &test, &hs)?));
        if a.baseline {
            reports.push((format!("{name}-persistence"), persistence_baseline(&test, &hs)));
        }
    }
    write_reports(a.out.as_deref(), &reports)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig { batch_sizes: parse_list(&a.batch_sizes, "batch size")?, repetitions: a.repetitions };
    cfg.validate()?;
    let model = load_model_file(&a.model)?;
    let prep = prep_config(&a.prep, model.prep.rate)?;
    if is_trips_file(&a.input)? {
        return Err(CliError::Config("bench needs raw AIS input, not a trips file".into()));
    }
    let mut raw = read_raw(&a.input, &a.cols, &a.tables)?;
    raw.records.sort_by_key(|r| r.timestamp);
    let featurizer = OnlineFeaturizer::new(prep, model.prep.horizons.clone(), model.encoding.clone(), raw.pois);
    let reports = bench::run(featurizer, &model, &raw.records, &cfg)?;
    emit(a.out.as_deref(), |w| Ok(bench::write_reports(w, &reports)?))
}

pub fn grid(a: &GridArgs) -> Result<()> {
    let axis: GridAxis = a.axis.parse()?;
    let mut spec = GridSpec::new(axis);
    if let Some(v) = &a.values {
        spec.values = parse_list(v, "grid")?;
    }
    spec.horizons = horizons(&a.horizons)?;
    spec.split = SplitConfig::new(a.train_fraction)?;
    spec.params = gbdt_params(&a.model)?;
    spec.prep = prep_config(&a.prep, DEFAULT_RATE)?;
    spec.parallel = a.parallel;
    spec.validate()?;

    let rows = if is_trips_file(&a.input)? {
        if axis == GridAxis::Rate {
            return Err(CliError::Config("a rate sweep needs raw AIS input".into()));
        }
        let trips = read_trips(BufReader::new(open(&a.input)?))?;
        eval::grid_search(&GridInput::Trips(&trips), &spec)?
    } else {
        let raw = read_raw(&a.input, &a.cols, &a.tables)?;
        let groups = group_by_vessel(raw.records);
        eval::grid_search(&GridInput::Raw { groups: &groups, pois: &raw.pois }, &spec)?
    };
    for r in &rows {
        if let Err(e) = &r.outcome {
            eprintln!("{} = {}: {e}", r.axis.name(), r.value);
        }
    }
    emit(a.out.as_deref(), |w| Ok(eval::write_grid(w, &spec.horizons, &rows)?))
}
