use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "seacast", version, about = "Vessel future-location prediction from AIS data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, segment and resample raw AIS into a trips file
    Preprocess(PreprocessArgs),
    /// Fit a model on a trips file
    Train(TrainArgs),
    /// Predict future positions for every trip point and horizon
    Predict(PredictArgs),
    /// Report per-horizon displacement errors
    Evaluate(EvaluateArgs),
    /// Time per-record preprocessing and inference
    Bench(BenchArgs),
    /// Sweep one hyperparameter around the base configuration
    Grid(GridArgs),
}

/// Column names in the raw AIS CSV.
#[derive(Args, Debug, Clone)]
pub struct ColumnArgs {
    #[arg(long, default_value = "sourcemmsi")]
    pub col_id: String,
    #[arg(long, default_value = "t")]
    pub col_ts: String,
    #[arg(long, default_value = "lon")]
    pub col_lon: String,
    #[arg(long, default_value = "lat")]
    pub col_lat: String,
    /// Optional vessel type column
    #[arg(long)]
    pub col_type: Option<String>,
    /// Timestamps are in milliseconds
    #[arg(long)]
    pub ts_millis: bool,
}

/// Side tables used when reading raw AIS.
#[derive(Args, Debug, Clone)]
pub struct SideTables {
    /// POI table (poi_id,lon,lat[,name])
    #[arg(long)]
    pub pois: Option<PathBuf>,
    /// Vessel type table (vessel_id,vessel_type)
    #[arg(long)]
    pub vessel_types: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PrepArgs {
    /// Resampling period in seconds
    #[arg(long)]
    pub rate: Option<i64>,
    /// Stationary below this speed (knots)
    #[arg(long, default_value_t = 1.0)]
    pub smin: f64,
    /// Outlier above this speed (knots)
    #[arg(long, default_value_t = 50.0)]
    pub smax: f64,
    /// Longest gap inside a trip (seconds)
    #[arg(long, default_value_t = 2700)]
    pub gap: i64,
    /// Fewest raw points per trip
    #[arg(long, default_value_t = 30)]
    pub minlen: usize,
    /// Origin POI radius (meters)
    #[arg(long, default_value_t = 1852.0)]
    pub dmin: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 750)]
    pub rounds: usize,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw AIS CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Trips CSV to write
    #[arg(long)]
    pub out: PathBuf,
    /// Horizons (minutes) for the dataset statistics
    #[arg(long, default_value = "10,20,30,40,50,60")]
    pub horizons: String,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Trips CSV (raw AIS is preprocessed on the fly)
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "10,20,30,40,50,60")]
    pub horizons: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trips CSV or raw AIS CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Predictions CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Horizons (minutes); defaults to the model's
    #[arg(long)]
    pub horizons: Option<String>,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trips CSV or raw AIS CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Evaluate this model on the whole input
    #[arg(long, conflicts_with_all = ["predictions", "train_fraction"])]
    pub model: Option<PathBuf>,
    /// Score a predictions CSV against the input instead of running a model
    #[arg(long, conflicts_with = "train_fraction")]
    pub predictions: Option<PathBuf>,
    /// Train on the earliest fraction and evaluate on the rest
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Report CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset label for the report
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also report the persistence baseline
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub horizons: Option<String>,
    #[command(flatten)]
    pub model_params: ModelArgs,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw AIS CSV
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "10000,100000")]
    pub batch_sizes: String,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Bench CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Trips CSV or raw AIS CSV (raw is required for the rate axis)
    #[arg(long)]
    pub input: PathBuf,
    /// rate, learning_rate (lr), max_depth (depth) or n_estimators (rounds)
    #[arg(long)]
    pub axis: String,
    /// Comma-separated candidates; defaults to the standard set for the axis
    #[arg(long)]
    pub values: Option<String>,
    /// Grid CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "10,20,30,40,50,60")]
    pub horizons: String,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Run candidates concurrently (timing columns left blank)
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tables: SideTables,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub cols: ColumnArgs,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FLPXR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FLPXR_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Grid(a) => commands::grid(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
