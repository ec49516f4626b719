//! Histogram gradient-boosted regression trees with squared-error loss.
//!
//! Two independent ensembles are trained, one per target coordinate, over a
//! shared [`BinSchema`]. Training is deterministic: histogram sums are
//! accumulated in row order, parallel work is reduced in feature order, and
//! gain ties go to the lowest feature index, then the lowest threshold.

mod bins;
mod io;
mod tree;

pub use bins::{BinSchema, MISSING_BIN};
pub use io::{load_model, save_model, FORMAT_MAGIC, FORMAT_VERSION};
pub use tree::{Tree, TreeNode, GAIN_REL_EPS};

use thiserror::Error;

use crate::features::{FeatureEncoding, FeatureVector, HorizonSet, TrainingExample, FEATURE_NAMES, F_LAT, F_LON, N_FEATURES};
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("feature schema mismatch: model expects {expected} features, got {got}")]
    Schema { expected: usize, got: usize },
    #[error("model format error in section {section}: {message}")]
    Format { section: String, message: String },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_bins: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum gain for a split.
    pub gamma: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_estimators: 750,
            learning_rate: 0.01,
            max_depth: 12,
            n_bins: 256,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let err = |m: String| Err(GbdtError::InvalidParams(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_depth < 1 {
            return err("max_depth must be at least 1".into());
        }
        if !(2..=256).contains(&self.n_bins) {
            return err(format!("n_bins must be in [2, 256], got {}", self.n_bins));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return err(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return err(format!("min_child_weight must be non-negative, got {}", self.min_child_weight));
        }
        Ok(())
    }
}

/// Dense row-major matrix; `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self, GbdtError> {
        if data.len() != n_rows * n_cols {
            return Err(GbdtError::InvalidInput(format!(
                "{} values do not fill a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { n_rows, n_cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: impl IntoIterator<Item = R>) -> Result<Self, GbdtError> {
        let mut data = Vec::new();
        let mut n_rows = 0;
        let mut n_cols = None;
        for r in rows {
            let r = r.as_ref();
            match n_cols {
                None => n_cols = Some(r.len()),
                Some(c) if c != r.len() => {
                    return Err(GbdtError::InvalidInput("ragged rows".into()));
                }
                _ => {}
            }
            data.extend_from_slice(r);
            n_rows += 1;
        }
        Matrix::new(n_rows, n_cols.unwrap_or(0), data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.n_cols).copied()
    }
}

/// One boosted ensemble for a single target.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Ensemble {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut out = self.base_score;
        for t in &self.trees {
            out += self.learning_rate * t.predict(x);
        }
        out
    }

    /// Predicts every row of `rows` into `out`, tree by tree over blocks of
    /// rows so each tree stays cache-resident. Bitwise equal to
    /// [`Ensemble::predict`] per row.
    pub fn predict_rows<R: AsRef<[f64]>>(&self, rows: &[R], out: &mut [f64]) {
        assert_eq!(rows.len(), out.len(), "one output slot per row");
        for (block, dst) in rows.chunks(PREDICT_BLOCK).zip(out.chunks_mut(PREDICT_BLOCK)) {
            dst.fill(self.base_score);
            for t in &self.trees {
                let mut xs = block.chunks_exact(LANES);
                let mut os = dst.chunks_exact_mut(LANES);
                for (x, o) in (&mut xs).zip(&mut os) {
                    let leaves = t.predict_lanes::<LANES>(std::array::from_fn(|k| x[k].as_ref()));
                    for (o, v) in o.iter_mut().zip(leaves) {
                        *o += self.learning_rate * v;
                    }
                }
                for (x, o) in xs.remainder().iter().zip(os.into_remainder()) {
                    *o += self.learning_rate * t.predict(x.as_ref());
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.trees.iter().map(Tree::n_nodes).sum()
    }
}

const PREDICT_BLOCK: usize = 4096;
const LANES: usize = 8;

/// Mean squared error after each boosting round; entry 0 is the base score.
pub type LossTrace = Vec<f64>;

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

fn fit_binned(
    binned: &bins::BinnedMatrix,
    schema: &BinSchema,
    targets: &[f64],
    params: &GbdtParams,
) -> (Ensemble, LossTrace) {
    let n = targets.len();
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut rows: Vec<u32> = Vec::with_capacity(n);
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut trace = Vec::with_capacity(params.n_estimators + 1);
    trace.push(mse(&pred, targets));

    for _ in 0..params.n_estimators {
        for i in 0..n {
            grad[i] = pred[i] - targets[i];
        }
        rows.clear();
        rows.extend(0..n as u32);
        let grown = tree::grow_tree(binned, schema, params, &grad, &mut rows);
        for &(start, end, value) in &grown.leaves {
            let step = params.learning_rate * value;
            for &r in &rows[start..end] {
                pred[r as usize] += step;
            }
        }
        trees.push(grown.tree);
        trace.push(mse(&pred, targets));
    }
    let ensemble = Ensemble {
        base_score,
        learning_rate: params.learning_rate,
        trees,
    };
    (ensemble, trace)
}

fn check_targets(targets: &[f64], n_rows: usize) -> Result<(), GbdtError> {
    if targets.len() != n_rows {
        return Err(GbdtError::InvalidInput(format!(
            "{} targets for {n_rows} rows",
            targets.len()
        )));
    }
    if n_rows == 0 {
        return Err(GbdtError::InvalidInput("no training examples".into()));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(GbdtError::InvalidInput(format!("non-finite target at row {i}")));
    }
    Ok(())
}

/// Fits a single-target ensemble on an arbitrary matrix.
pub fn fit_ensemble(
    matrix: &Matrix,
    targets: &[f64],
    params: &GbdtParams,
) -> Result<(Ensemble, LossTrace), GbdtError> {
    params.validate()?;
    check_targets(targets, matrix.n_rows())?;
    let schema = BinSchema::build(matrix, params.n_bins)?;
    let binned = schema.bin_matrix(matrix);
    Ok(fit_binned(&binned, &schema, targets, params))
}

/// Preprocessing settings a model was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepFingerprint {
    pub rate: i64,
    pub horizons: HorizonSet,
}

impl Default for PrepFingerprint {
    fn default() -> Self {
        PrepFingerprint { rate: 90, horizons: HorizonSet::default() }
    }
}

/// Two ensembles (Δlon, Δlat) plus everything needed to rebuild features at
/// inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub lon: Ensemble,
    pub lat: Ensemble,
    pub feature_names: Vec<String>,
    pub encoding: FeatureEncoding,
    pub prep: PrepFingerprint,
}

/// Result of [`GbdtModel::predict_position`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionPrediction {
    pub point: GeoPoint,
    /// The raw sum fell outside valid coordinates and was saturated.
    pub clamped: bool,
}

fn apply_delta(features: &FeatureVector, (dlon, dlat): (f64, f64)) -> Result<PositionPrediction, GbdtError> {
    let (point, clamped) = GeoPoint::clamped(features.0[F_LON] + dlon, features.0[F_LAT] + dlat)
        .map_err(|e| GbdtError::InvalidInput(e.to_string()))?;
    Ok(PositionPrediction { point, clamped })
}

/// Per-round training loss for both targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub lon: LossTrace,
    pub lat: LossTrace,
}

/// Fits the two-target model on feature vectors and (Δlon, Δlat) targets.
pub fn fit(examples: &[TrainingExample], params: &GbdtParams) -> Result<(GbdtModel, TrainingTrace), GbdtError> {
    params.validate()?;
    if examples.is_empty() {
        return Err(GbdtError::InvalidInput("no training examples".into()));
    }
    let matrix = Matrix::from_rows(examples.iter().map(|e| e.features.0))?;
    let dlon: Vec<f64> = examples.iter().map(|e| e.target_dlon).collect();
    let dlat: Vec<f64> = examples.iter().map(|e| e.target_dlat).collect();
    check_targets(&dlon, matrix.n_rows())?;
    check_targets(&dlat, matrix.n_rows())?;

    let schema = BinSchema::build(&matrix, params.n_bins)?;
    let binned = schema.bin_matrix(&matrix);
    let ((lon, lon_trace), (lat, lat_trace)) = rayon::join(
        || fit_binned(&binned, &schema, &dlon, params),
        || fit_binned(&binned, &schema, &dlat, params),
    );
    let model = GbdtModel {
        params: params.clone(),
        lon,
        lat,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        encoding: FeatureEncoding::default(),
        prep: PrepFingerprint::default(),
    };
    Ok((model, TrainingTrace { lon: lon_trace, lat: lat_trace }))
}

impl GbdtModel {
    pub fn with_metadata(mut self, encoding: FeatureEncoding, prep: PrepFingerprint) -> Self {
        self.encoding = encoding;
        self.prep = prep;
        self
    }

    /// True when the model was trained on the current feature layout.
    pub fn matches_feature_layout(&self) -> bool {
        self.feature_names.len() == FEATURE_NAMES.len()
            && self.feature_names.iter().zip(FEATURE_NAMES).all(|(a, b)| a == b)
    }

    pub fn n_nodes(&self) -> usize {
        self.lon.n_nodes() + self.lat.n_nodes()
    }

    /// Predicted (Δlon, Δlat) in degrees.
    pub fn predict_delta(&self, features: &[f64]) -> Result<(f64, f64), GbdtError> {
        if features.len() != self.feature_names.len() {
            return Err(GbdtError::Schema {
                expected: self.feature_names.len(),
                got: features.len(),
            });
        }
        Ok((self.lon.predict(features), self.lat.predict(features)))
    }

    /// (Δlon, Δlat) for many vectors at once; same values as
    /// [`GbdtModel::predict_delta`] on each.
    pub fn predict_delta_batch(&self, features: &[FeatureVector]) -> Result<Vec<(f64, f64)>, GbdtError> {
        if self.feature_names.len() != N_FEATURES {
            return Err(GbdtError::Schema { expected: self.feature_names.len(), got: N_FEATURES });
        }
        let mut lon = vec![0.0; features.len()];
        let mut lat = vec![0.0; features.len()];
        self.lon.predict_rows(features, &mut lon);
        self.lat.predict_rows(features, &mut lat);
        Ok(lon.into_iter().zip(lat).collect())
    }

    /// Latest position plus predicted delta, saturated to valid coordinates.
    pub fn predict_position(&self, features: &FeatureVector) -> Result<PositionPrediction, GbdtError> {
        let delta = self.predict_delta(&features.0)?;
        apply_delta(features, delta)
    }

    /// [`GbdtModel::predict_position`] for many vectors, using batch inference.
    pub fn predict_positions(&self, features: &[FeatureVector]) -> Result<Vec<PositionPrediction>, GbdtError> {
        let deltas = self.predict_delta_batch(features)?;
        features.iter().zip(deltas).map(|(f, d)| apply_delta(f, d)).collect()
    }
}
