//! PowerNet: short-term power demand forecasting with a stacked LSTM
//! consumption encoder fused with a weather/calendar MLP.
//!
//! The crate covers the whole pipeline: meter and weather ingestion
//! ([`dataio`]), feature construction ([`features`]), the network with
//! hand-derived backpropagation ([`model`]), Adam training with early
//! stopping and grid search ([`training`]), error metrics ([`metrics`]),
//! comparison baselines ([`baselines`]), multi-step forecasting
//! ([`forecast`]) and electricity-theft detection ([`anomaly`]).

pub mod anomaly;
pub mod baselines;
pub mod checkpoint;
pub mod dataio;
pub mod features;
pub mod forecast;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod training;
