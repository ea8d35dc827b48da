//! Sparse sufficient dimension reduction for metric-space responses with a
//! latent graphical group penalty, fitted by ADMM.

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod selection;
pub mod solver;
pub mod synthetic;

pub use config::Tolerances;
pub use data::{ResponseSet, Sample};
pub use error::{Error, Result};
pub use graph::{NeighborhoodGraph, TauScheme};
pub use kernels::{KernelEstimates, KernelKind};
pub use matrix::{DirectionMatrix, EigenDecomposition, SymmetricMatrix};
pub use metrics::{DistanceMatrix, ResponseObject};
pub use solver::{admm_fit, AdmmConfig, AdmmState, FitContext, FitResult, PenaltySpec};
pub use selection::{cross_validate, ladle, CvConfig, CvResult, LadleResult};
pub use synthetic::{CovarianceKind, ExperimentReport, GraphSource, HarnessOptions, Method, ScenarioSpec};
