//! Metrics, reference forecasters and evaluation protocols.

pub mod metrics;
pub mod naive2;
mod report;
mod runner;

pub use metrics::{mae, mase, mse, owa, smape};
pub use naive2::{naive2_forecast, Naive2Model};
pub use report::{average_reports, MetricReport};
pub use runner::{evaluate, EvalOptions, Forecaster, Naive2Forecaster, OracleForecaster, Protocol, RepeatLast};
