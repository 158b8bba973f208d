//! Distributionally robust Gaussian process regression and linear inverse
//! problems over a Wasserstein (weighted Gelbrich) ambiguity set.
//!
//! Fields on [0, 1] are expanded in the Dirichlet-Laplacian eigenbasis and
//! truncated at `N` modes. The adversary perturbs the joint Gaussian of basis
//! coefficients and observation noise within a ball around the nominal model;
//! the decision-maker answers with a linear estimator. [`solver`] finds the
//! equilibrium by Frank-Wolfe ascent on the Bayes-optimal risk.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod gelbrich;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod problem;
pub mod solver;
pub mod spectral;

pub use nalgebra::{DMatrix, DVector};

pub use analysis::{
    correlation_from_covariance, foerstner_distance, prior_posterior_distance, DistanceReport,
};
pub use error::{Error, Result};
pub use gelbrich::{
    contains, gelbrich_distance_sq, linear_oracle, psd_sqrt, GelbrichBall, OracleSolution,
};
pub use model::{
    bayes_risk, field_second_moments, marginal_intervals, mmse_gradient, mmse_value,
    nominal_covariance, observation_map, optimal_affine_estimator, posterior_coefficient_gaussian,
    prior_coefficient_gaussian, risk_matrix, sample_paths, AffineEstimator, CoefficientGaussian,
    DesignLabel, DesignPoints, JointGaussian, ObservationMap, Target,
};
pub use operator::{make_operator, OperatorKind, SpectralOperator};
pub use problem::{table1_columns, DesignSpec, Problem, ProblemSpec, TableColumn};
pub use solver::{
    determinant_diagnostic, invertibility_guard, solve_equilibrium, solve_equilibrium_observed,
    truncation_convergence, EquilibriumResult, LineSearch, SolverConfig, StopReason,
};
pub use spectral::{
    matern_coefficients, roughness_weights, PriorSpectrum, SpectralBasis, WeightSequence,
};
