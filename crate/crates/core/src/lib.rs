//! Time-varying spatio-temporal covariance models, random composite
//! likelihood estimation, kriging and forecast verification.

pub mod error;
pub mod gp;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod rcl;
pub mod scoring;
pub mod specialfn;
pub mod trend;

pub use error::{Error, Result};
pub use gp::{Dataset, Neighborhood, PredictiveDistribution};
pub use kernels::{
    CovarianceModel, GneitModel, SepModel, SpaceTimePoint, TimeFn, TimeShape, TvarModel, Variant,
};
pub use rcl::{FitResult, GridData, ModelSpec, OptimizerConfig, PartitionPlan, PartitionShape};
