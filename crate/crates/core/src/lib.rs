//! Bayesian variable selection for short-term longitudinal omics panels.
//!
//! The pipeline works on the first-difference scale of a panel of `n`
//! subjects observed at `T` time points:
//!
//! * [`longdata`] loads and validates the panel.
//! * [`deltadesign`] builds the differenced response and the block
//!   lower-triangular design matrices (one block per feature).
//! * [`gprior`] fits Zellner g-prior posteriors, with `g = sqrt(n)` or the
//!   SURE-minimising `g`.
//! * [`bayesfactor`] turns each univariate fit into a null-based Bayes factor
//!   and an evidence class.
//! * [`bglss`] runs the spike-and-slab Bayesian group lasso Gibbs sampler for
//!   the joint (multivariate) model.
//! * [`simgen`] and [`evalharness`] reproduce the simulation studies.

pub mod bayesfactor;
pub mod bglss;
pub mod deltadesign;
pub mod evalharness;
pub mod gprior;
pub mod linalg;
pub mod longdata;
pub mod rng;
pub mod simgen;

pub use bayesfactor::{BayesFactorReport, Evidence, ScreenResult};
pub use bglss::{ChainSummary, GibbsConfig};
pub use deltadesign::DifferencedDesign;
pub use gprior::{GPriorSpec, GRule, NigPosterior};
pub use longdata::{ColumnConfig, LongitudinalDataset};
pub use simgen::{Preset, SimScenario, SimTruth};
