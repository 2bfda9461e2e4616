//! Expert tracing and sparse signal propagation for cross-sectional stock prediction.
//!
//! The crate is organised as a pipeline:
//!
//! - [`data`]: posts, bars, trading calendar, returns and daily cross-sectional normalisation
//! - [`tracer`]: identifies experts and inverse experts from their posting track record
//! - [`signals`]: turns classified calls into continuous expected-return signals
//! - [`pretrain`]: multi-scale LSTM trained with an information-coefficient loss
//! - [`graph`]: industry and rolling-correlation stock graphs
//! - [`dualgat`]: dual graph attention network and the plain `Wx` propagation baseline
//! - [`backtest`]: IC / rank IC / ICIR and a decile long-short backtest with costs
//! - [`synth`]: seeded synthetic market and posting population with planted roles
//! - [`pipeline`]: stage orchestration with content-hash manifests

pub mod backtest;
pub mod data;
pub mod dualgat;
pub mod error;
pub mod graph;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pretrain;
pub mod signals;
pub mod stats;
pub mod synth;
pub mod tracer;

pub use error::{Error, Result};
