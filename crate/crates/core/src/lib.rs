//! Perturbation theory for spectral projectors of sample covariance
//! operators, with Monte Carlo checks of the first-order expansion, the
//! bias of empirical eigenvectors and its split-sample correction.

pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod perturbation;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{SymEigen, SymmetricOperator, VectorH};
pub use perturbation::{ContourSpec, PerturbationBounds, PerturbationDecomposition};
pub use sampling::{BasisSpec, CovarianceModel, ModelSpec, SampleSet};
pub use spectral::{EigenCluster, SpectralDecomposition};
pub use verify::{ExperimentReport, Verdict};
