//! System identification for partially observed linear dynamical systems.
//!
//! The pipeline learns `(A, B, C, D)` from a single input/output trajectory:
//! a stabilizing linear combination of past observations is found by solving a
//! convex feasibility problem, the stabilized observations are correlated with
//! past inputs to estimate Markov parameters, and Ho-Kalman realizes a
//! state-space model from them. The [`lowerbound`] module builds pairs of
//! systems that are statistically almost indistinguishable yet far apart in
//! parameter space.

pub mod algebra;
pub mod distribution;
pub mod error;
pub mod generators;
pub mod ho_kalman;
pub mod io;
pub mod linalg;
pub mod lowerbound;
pub mod markov;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod stabilizer;

pub use algebra::{condition_report, ConditionReport};
pub use distribution::{DistributionKind, DistributionSpec, NoiseModel};
pub use error::{Result, SysIdError};
pub use generators::{Family, GeneratorSpec};
pub use ho_kalman::{align_similarity, ho_kalman, markov_distance, EvalReport, Realization};
pub use lowerbound::{ClosenessReport, PairKind, ProcessCovariance, UnobservablePair};
pub use markov::{estimate_markov, naive_estimate, EstimatorKind, MarkovEstimate, VarianceReport};
pub use model::{markov_parameters, simulate, HiddenStates, SystemMatrices, Trajectory};
pub use pipeline::{identify, Identification};
pub use stabilizer::{
    stabilize, ConstraintConfig, Mode, SolverOptions, Stabilization, StabilizerCoefficients, SystemBounds,
};

pub use nalgebra::{DMatrix, DVector};
