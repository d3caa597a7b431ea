//! Empirical-Bayes and hierarchical-Bayes shrinkage estimators for the
//! normal-means and Poisson-count problems, plus a simulation harness that
//! benchmarks their risk and interval coverage.

pub mod bench;
pub mod calib;
pub mod data;
pub mod dist;
pub mod error;
pub mod horseshoe;
pub mod mgps;
pub mod npmle;
pub mod polya_gamma;
pub mod poppred;
pub mod quad;
pub mod rule;
pub mod stats;
pub mod tweedie;

pub use data::NormalMeansData;
pub use dist::{GammaParams, RngStream};
pub use error::{Error, Result};
pub use rule::{monotonicity_diagnostic, DiagnosticReport, RuleMethod, ShrinkageRule};
