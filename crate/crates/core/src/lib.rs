//! Short-horizon vessel position forecasting from AIS reports.
//!
//! The pipeline runs [`ingest`] → [`prep`] → [`features`] → [`gbdt`], with
//! [`eval`] and [`bench`] measuring the result. [`stream`] featurizes one
//! record at a time and [`synth`] generates seeded test fleets.

pub mod bench;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod geo;
pub mod ingest;
pub mod prep;
pub mod stream;
pub mod synth;
