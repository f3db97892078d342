//! Panel local projections of county outcomes on local shocks.
//!
//! The pipeline: load a county × period panel ([`panel`]), describe a model
//! ([`design::ModelSpec`]), materialize one regression per horizon
//! ([`design::PreparedModel`]), fit each with two-way fixed effects and
//! Driscoll-Kraay errors ([`estimator`]), and assemble the response path,
//! cumulative effect and jackknife inference ([`irf`]). [`spatial`] adds
//! neighbor shocks, [`hei`] turns a response into historical impacts and
//! [`synth`] generates panels with a known answer.

// NaN must fail validation, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod design;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod hei;
pub mod irf;
pub mod linalg;
pub mod panel;
pub mod report;
pub mod spatial;
pub mod synth;

pub use design::{ModelSpec, PreparedModel};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{fit, FitOptions, FitResult};
pub use exec::Exec;
pub use irf::{estimate_irf, ImpulseResponse, IrfOptions};
pub use panel::{CountyId, Frequency, PanelDataset, SeriesRef};
