//! Per-record preprocessing and inference timing.
//!
//! The first half of the input warms up the featurizer untimed. Each batch is
//! then taken from the second half and replayed `repetitions` times from the
//! same warmed-up state; the reported per-record figures are medians.

use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::features::FeatureVector;
use crate::gbdt::GbdtModel;
use crate::ingest::AisRecord;
use crate::stream::OnlineFeaturizer;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("{records} records is less than twice the largest batch ({batch})")]
    InsufficientData { records: usize, batch: usize },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub batch_size: usize,
    pub preprocess_us_per_record: f64,
    pub inference_us_per_record: f64,
    /// `(preprocess + inference) × batch_size / 1e6`.
    pub throughput_s_per_batch: f64,
    /// Feature vectors produced by the batch.
    pub predictions: usize,
}

impl BenchReport {
    pub fn new(batch_size: usize, preprocess_us: f64, inference_us: f64, predictions: usize) -> Self {
        BenchReport {
            batch_size,
            preprocess_us_per_record: preprocess_us,
            inference_us_per_record: inference_us,
            throughput_s_per_batch: throughput(preprocess_us, inference_us, batch_size),
            predictions,
        }
    }
}

pub fn throughput(preprocess_us: f64, inference_us: f64, batch_size: usize) -> f64 {
    (preprocess_us + inference_us) * batch_size as f64 / 1e6
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { batch_sizes: vec![10_000, 100_000], repetitions: 3 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(BenchError::Config("batch sizes must be positive".into()));
        }
        if self.repetitions < 3 {
            return Err(BenchError::Config("at least 3 repetitions are required".into()));
        }
        Ok(())
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// One timed pass: (preprocess µs/record, inference µs/record, predictions).
fn timed_pass(warm: &OnlineFeaturizer, model: &GbdtModel, batch: &[AisRecord]) -> (f64, f64, usize) {
    let mut featurizer = warm.clone();
    let mut features: Vec<FeatureVector> = Vec::with_capacity(batch.len() * featurizer.horizons().minutes().len());

    let t0 = Instant::now();
    for rec in batch {
        featurizer.push(rec, &mut features);
    }
    let pre = t0.elapsed();

    let t0 = Instant::now();
    let deltas = model.predict_delta_batch(&features).expect("featurizer emits full-width vectors");
    std::hint::black_box(&deltas);
    let inf = t0.elapsed();

    let n = batch.len() as f64;
    (pre.as_secs_f64() * 1e6 / n, inf.as_secs_f64() * 1e6 / n, features.len())
}

/// Runs every batch size. `records` must be in feed (timestamp) order.
pub fn run(
    featurizer: OnlineFeaturizer,
    model: &GbdtModel,
    records: &[AisRecord],
    cfg: &BenchConfig,
) -> Result<Vec<BenchReport>, BenchError> {
    cfg.validate()?;
    let largest = *cfg.batch_sizes.iter().max().expect("validated non-empty");
    if records.len() < 2 * largest {
        return Err(BenchError::InsufficientData { records: records.len(), batch: largest });
    }
    let half = records.len() / 2;
    let mut warm = featurizer;
    let mut scratch = Vec::new();
    for rec in &records[..half] {
        warm.push(rec, &mut scratch);
        scratch.clear();
    }

    let mut reports = Vec::with_capacity(cfg.batch_sizes.len());
    for &b in &cfg.batch_sizes {
        let batch = &records[half..half + b];
        let mut pre = Vec::with_capacity(cfg.repetitions);
        let mut inf = Vec::with_capacity(cfg.repetitions);
        let mut predictions = 0;
        for _ in 0..cfg.repetitions {
            let (p, i, n) = timed_pass(&warm, model, batch);
            pre.push(p);
            inf.push(i);
            predictions = n;
        }
        let report = BenchReport::new(b, median(&mut pre), median(&mut inf), predictions);
        log::info!(
            "batch {b}: preprocess {:.3} us/record, inference {:.3} us/record",
            report.preprocess_us_per_record,
            report.inference_us_per_record
        );
        reports.push(report);
    }
    Ok(reports)
}

pub const BENCH_HEADER: &str =
    "batch_size,predictions,preprocess_us_per_record,inference_us_per_record,throughput_s_per_batch";

pub fn write_reports<W: Write>(mut sink: W, reports: &[BenchReport]) -> std::io::Result<()> {
    writeln!(sink, "{BENCH_HEADER}")?;
    for r in reports {
        writeln!(
            sink,
            "{},{},{},{},{}",
            r.batch_size, r.predictions, r.preprocess_us_per_record, r.inference_us_per_record, r.throughput_s_per_batch
        )?;
    }
    sink.flush()
}
