//! Certified lower bounds for discrete Gromov-Wasserstein problems through
//! moment-SOS relaxations.
//!
//! The pipeline is: load two [`spaces::MetricMeasureSpace`]s, assemble a
//! [`spaces::CostTensor`], build a relaxation with [`relax`], solve it with
//! [`sdpsolve`], then extract a coupling and certify it with [`certify`].
//! [`oracle`] supplies independent upper bounds and [`metric`] wraps the
//! whole thing into the distortion distance and its metric checks.

pub mod certify;
pub mod cli;
pub mod error;
pub mod metric;
pub mod moment_index;
pub mod oracle;
pub mod relax;
pub mod report;
pub mod sdpsolve;
pub mod spaces;

pub use error::{Error, Result};
