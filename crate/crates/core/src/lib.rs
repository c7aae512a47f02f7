//! Subseasonal forecasting engine: climatology and anomaly computation,
//! cosine-skill verification, weighted local linear regression with
//! multitask backward stepwise feature selection, skill-based k-nearest
//! neighbor autoregression, l2-normalized ensembling, debiased
//! dynamical-forecast reconstruction, and a biweekly backtest harness.

pub mod autoknn;
pub mod cfsdebias;
pub mod climatology;
pub mod dataframe;
pub mod error;
pub mod geotime;
pub mod harness;
pub mod llr;
pub mod multillr;
pub mod skill;

pub use error::{Error, Result};
