//! Chronological splits, per-horizon displacement-error reports, the
//! persistence baseline and one-axis hyperparameter sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::features::{build_training_set, FeatureEncoding, HorizonSet, TrainingExample};
use crate::gbdt::{self, GbdtError, GbdtModel, GbdtParams, PrepFingerprint};
use crate::geo::{haversine_m, GeoPoint};
use crate::ingest::{AisRecord, PoiIndex, VesselId};
use crate::prep::{prepare_all, PrepConfig, Trip};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    train_fraction: f64,
}

impl SplitConfig {
    pub fn new(train_fraction: f64) -> Result<Self, EvalError> {
        if train_fraction > 0.0 && train_fraction < 1.0 {
            Ok(SplitConfig { train_fraction })
        } else {
            Err(EvalError::Config(format!("train fraction must be in (0, 1), got {train_fraction}")))
        }
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    /// Training-set size for `n` examples.
    pub fn train_len(&self, n: usize) -> usize {
        // the small slack keeps e.g. 100 × 0.8 from rounding up to 81
        let k = (n as f64 * self.train_fraction - 1e-9).ceil();
        (k.max(0.0) as usize).min(n)
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.8 }
    }
}

/// Orders examples by source timestamp (stable) and cuts after the first
/// `⌈N·train_fraction⌉`.
pub fn chronological_split(
    mut examples: Vec<TrainingExample>,
    cfg: &SplitConfig,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>), EvalError> {
    if examples.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "need at least 2 examples to split, got {}",
            examples.len()
        )));
    }
    examples.sort_by_key(|e| e.source_timestamp);
    let test = examples.split_off(cfg.train_len(examples.len()));
    Ok((examples, test))
}

pub fn displacement_error_m(predicted: GeoPoint, actual: GeoPoint) -> f64 {
    haversine_m(predicted, actual)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonStats {
    pub horizon_min: u32,
    pub count: usize,
    /// `None` when `count == 0`.
    pub mean_m: Option<f64>,
    /// Population standard deviation; `None` when `count == 0`.
    pub std_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub rows: Vec<HorizonStats>,
}

impl HorizonReport {
    pub fn get(&self, horizon_min: u32) -> Option<&HorizonStats> {
        self.rows.iter().find(|r| r.horizon_min == horizon_min)
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.mean_m).collect()
    }
}

/// Mean and population standard deviation, two-pass.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Report from `(horizon_min, error_m)` pairs. Statistics are accumulated in
/// the given order; pairs whose horizon is not in `horizons` are ignored.
pub fn report_from_errors(
    horizons: &HorizonSet,
    errors: impl IntoIterator<Item = (f64, f64)>,
) -> HorizonReport {
    let mut groups = vec![Vec::new(); horizons.minutes().len()];
    let mut stray = 0usize;
    for (h, err) in errors {
        match horizons.minutes().iter().position(|&m| f64::from(m) == h) {
            Some(k) => groups[k].push(err),
            None => stray += 1,
        }
    }
    if stray > 0 {
        log::warn!("{stray} errors have a horizon outside {:?} and were ignored", horizons.minutes());
    }
    let rows = horizons
        .minutes()
        .iter()
        .zip(&groups)
        .map(|(&h, errs)| {
            let stats = mean_std(errs);
            HorizonStats {
                horizon_min: h,
                count: errs.len(),
                mean_m: stats.map(|s| s.0),
                std_m: stats.map(|s| s.1),
            }
        })
        .collect();
    HorizonReport { rows }
}

/// Report for an arbitrary predictor of the future position.
pub fn evaluate_with<F>(examples: &[TrainingExample], horizons: &HorizonSet, predict: F) -> HorizonReport
where
    F: Fn(&TrainingExample) -> GeoPoint + Sync,
{
    let errors: Vec<f64> = examples
        .par_iter()
        .map(|e| displacement_error_m(predict(e), e.future_position()))
        .collect();
    report_from_errors(horizons, examples.iter().map(|e| e.features.horizon_min()).zip(errors))
}

pub fn evaluate(
    model: &GbdtModel,
    examples: &[TrainingExample],
    horizons: &HorizonSet,
) -> Result<HorizonReport, EvalError> {
    let vectors: Vec<_> = examples.iter().map(|e| e.features).collect();
    let predicted = model.predict_positions(&vectors)?;
    let errors = examples
        .iter()
        .zip(predicted)
        .map(|(e, p)| (e.features.horizon_min(), displacement_error_m(p.point, e.future_position())));
    Ok(report_from_errors(horizons, errors))
}

/// Zero-movement predictor.
pub fn persistence_baseline(examples: &[TrainingExample], horizons: &HorizonSet) -> HorizonReport {
    evaluate_with(examples, horizons, |e| {
        e.features.position().expect("feature vectors carry a valid position")
    })
}

pub const REPORT_HEADER: &str = "dataset,horizon_min,count,mean_m,std_m";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_report<W: Write>(mut sink: W, dataset: &str, report: &HorizonReport) -> std::io::Result<()> {
    writeln!(sink, "{REPORT_HEADER}")?;
    for r in &report.rows {
        writeln!(sink, "{dataset},{},{},{},{}", r.horizon_min, r.count, opt(r.mean_m), opt(r.std_m))?;
    }
    sink.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAxis {
    Rate,
    LearningRate,
    MaxDepth,
    NEstimators,
}

impl FromStr for GridAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate" | "sr" => Ok(GridAxis::Rate),
            "learning_rate" | "lr" => Ok(GridAxis::LearningRate),
            "max_depth" | "depth" => Ok(GridAxis::MaxDepth),
            "n_estimators" | "rounds" => Ok(GridAxis::NEstimators),
            other => Err(EvalError::Config(format!(
                "unknown axis {other:?}; expected rate, learning_rate, max_depth or n_estimators"
            ))),
        }
    }
}

impl GridAxis {
    pub fn name(self) -> &'static str {
        match self {
            GridAxis::Rate => "rate",
            GridAxis::LearningRate => "learning_rate",
            GridAxis::MaxDepth => "max_depth",
            GridAxis::NEstimators => "n_estimators",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            GridAxis::Rate => vec![30.0, 60.0, 90.0, 120.0, 150.0],
            GridAxis::LearningRate => vec![0.001, 0.005, 0.01, 0.05, 0.1],
            GridAxis::MaxDepth => vec![6.0, 9.0, 12.0, 15.0, 18.0],
            GridAxis::NEstimators => vec![500.0, 625.0, 750.0, 875.0, 1000.0],
        }
    }

    fn is_integral(self) -> bool {
        !matches!(self, GridAxis::LearningRate)
    }
}

/// One-axis sweep around a fixed base configuration.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub axis: GridAxis,
    pub values: Vec<f64>,
    pub prep: PrepConfig,
    pub params: GbdtParams,
    pub horizons: HorizonSet,
    pub split: SplitConfig,
    /// Run rows concurrently; timing columns are left blank.
    pub parallel: bool,
}

impl GridSpec {
    pub fn new(axis: GridAxis) -> Self {
        GridSpec {
            axis,
            values: axis.default_values(),
            prep: PrepConfig::default(),
            params: GbdtParams::default(),
            horizons: HorizonSet::default(),
            split: SplitConfig::default(),
            parallel: false,
        }
    }

    /// Base configuration with `value` applied on the sweep axis.
    pub fn configure(&self, value: f64) -> Result<(PrepConfig, GbdtParams), EvalError> {
        let mut prep = self.prep.clone();
        let mut params = self.params.clone();
        if self.axis.is_integral() && (value.fract() != 0.0 || value < 0.0) {
            return Err(EvalError::Config(format!("{} needs a whole number, got {value}", self.axis.name())));
        }
        match self.axis {
            GridAxis::Rate => prep.rate = value as i64,
            GridAxis::LearningRate => params.learning_rate = value,
            GridAxis::MaxDepth => params.max_depth = value as usize,
            GridAxis::NEstimators => params.n_estimators = value as usize,
        }
        prep.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        params.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        Ok((prep, params))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.values.is_empty() {
            return Err(EvalError::Config("no candidate values".into()));
        }
        for &v in &self.values {
            self.configure(v)?;
        }
        Ok(())
    }
}

/// Data a sweep trains on. A rate sweep needs raw records so every row can
/// be re-preprocessed.
pub enum GridInput<'a> {
    Raw {
        groups: &'a BTreeMap<VesselId, Vec<AisRecord>>,
        pois: &'a PoiIndex,
    },
    Trips(&'a [Trip]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMetrics {
    pub model_size_bytes: usize,
    /// Microseconds per prediction over the test set.
    pub inference_us: Option<f64>,
    pub training_s: Option<f64>,
    /// Mean error per horizon, in `GridSpec::horizons` order.
    pub errors_m: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub axis: GridAxis,
    pub value: f64,
    pub outcome: Result<GridMetrics, String>,
}

fn run_row(input: &GridInput<'_>, spec: &GridSpec, value: f64, timed: bool) -> Result<GridMetrics, String> {
    let (prep, params) = spec.configure(value).map_err(|e| e.to_string())?;
    let owned;
    let trips: &[Trip] = match input {
        GridInput::Raw { groups, pois } => {
            owned = prepare_all((*groups).clone(), pois, &prep).0;
            &owned
        }
        GridInput::Trips(t) => t,
    };
    let encoding = FeatureEncoding::fit(trips);
    let examples = build_training_set(trips, &spec.horizons, &encoding);
    let (train, test) = chronological_split(examples, &spec.split).map_err(|e| e.to_string())?;
    if test.is_empty() {
        return Err("empty test set".into());
    }

    let t0 = Instant::now();
    let (model, _) = gbdt::fit(&train, &params).map_err(|e| e.to_string())?;
    let training_s = t0.elapsed().as_secs_f64();
    let model = model.with_metadata(encoding, PrepFingerprint { rate: prep.rate, horizons: spec.horizons.clone() });

    let mut bytes = Vec::new();
    gbdt::save_model(&model, &mut bytes).map_err(|e| e.to_string())?;

    let inference_us = timed.then(|| {
        let vectors: Vec<_> = test.iter().map(|e| e.features).collect();
        let t0 = Instant::now();
        let deltas = model.predict_delta_batch(&vectors).expect("width matches");
        std::hint::black_box(&deltas);
        t0.elapsed().as_secs_f64() * 1e6 / test.len() as f64
    });
    let report = evaluate(&model, &test, &spec.horizons).map_err(|e| e.to_string())?;
    Ok(GridMetrics {
        model_size_bytes: bytes.len(),
        inference_us,
        training_s: timed.then_some(training_s),
        errors_m: report.means(),
    })
}

/// One row per candidate value. Row failures are recorded, not propagated;
/// only an invalid spec is an error.
pub fn grid_search(input: &GridInput<'_>, spec: &GridSpec) -> Result<Vec<GridRow>, EvalError> {
    spec.validate()?;
    if spec.axis == GridAxis::Rate && matches!(input, GridInput::Trips(_)) {
        return Err(EvalError::Config("a rate sweep needs raw AIS input".into()));
    }
    let row = |&value: &f64| {
        let outcome = run_row(input, spec, value, !spec.parallel);
        if let Err(e) = &outcome {
            log::warn!("{} = {value}: {e}", spec.axis.name());
        }
        GridRow { axis: spec.axis, value, outcome }
    };
    Ok(if spec.parallel {
        spec.values.par_iter().map(row).collect()
    } else {
        spec.values.iter().map(row).collect()
    })
}

pub fn grid_header(horizons: &HorizonSet) -> String {
    let mut h = String::from("axis,value,model_size_bytes,inference_us,training_s");
    for m in horizons.minutes() {
        h.push_str(&format!(",err{m}"));
    }
    h
}

pub fn write_grid<W: Write>(mut sink: W, horizons: &HorizonSet, rows: &[GridRow]) -> std::io::Result<()> {
    writeln!(sink, "{}", grid_header(horizons))?;
    for r in rows {
        write!(sink, "{},{}", r.axis.name(), r.value)?;
        match &r.outcome {
            Ok(m) => {
                write!(sink, ",{},{},{}", m.model_size_bytes, opt(m.inference_us), opt(m.training_s))?;
                for e in &m.errors_m {
                    write!(sink, ",{}", opt(*e))?;
                }
            }
            Err(_) => write!(sink, "{}", ",".repeat(3 + horizons.minutes().len()))?,
        }
        writeln!(sink)?;
    }
    sink.flush()
}
