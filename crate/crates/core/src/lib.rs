//! Zero-inflated multi-study Poisson NMF with covariate-dependent probit
//! stick-breaking priors on the scores.

pub mod conformance;
pub mod distributions;
pub mod evaluate;
pub mod gibbs;
pub mod model;
pub mod simulate;
pub mod stick;

pub use distributions::RngStream;
pub use gibbs::{run_chain, RunConfig, SweepDiagnostics};
pub use model::{ChainOutput, CountDataset, HyperParameters, LatentState, StudyData};
