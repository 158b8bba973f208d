//! End-to-end problem assembly from a handful of scalar parameters, the
//! baseline experiment and its one-at-a-time variations.

use serde::{Deserialize, Serialize};

use crate::analysis::prior_posterior_distance;
use crate::error::{invalid, Result};
use crate::gelbrich::GelbrichBall;
use crate::model::{
    mmse_value, optimal_affine_estimator, AffineEstimator, DesignLabel, DesignPoints,
    JointGaussian, ObservationMap, Target,
};
use crate::operator::{OperatorKind, SpectralOperator};
use crate::solver::{solve_equilibrium, EquilibriumResult, SolverConfig};
use crate::spectral::{PriorSpectrum, SpectralBasis, WeightSequence};

/// Observations used for the posterior figures on the whole-interval design.
pub const WHOLE_OBSERVATIONS: [f64; 10] = [
    -0.17, -0.09, 0.02, 0.04, 0.12, 0.05, -0.03, 0.03, -0.28, -0.15,
];
/// Observations used for the posterior figures on the half-interval design.
pub const HALF_OBSERVATIONS: [f64; 10] = [
    0.03, -0.05, 0.08, -0.08, 0.15, 0.12, -0.25, -0.24, 0.16, 0.02,
];

/// Default observation vector for a design, when one exists.
pub fn default_observations(label: DesignLabel, m: usize) -> Option<Vec<f64>> {
    match (label, m) {
        (DesignLabel::Whole, 10) => Some(WHOLE_OBSERVATIONS.to_vec()),
        (DesignLabel::Half, 10) => Some(HALF_OBSERVATIONS.to_vec()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    Whole,
    Half,
    Points(Vec<f64>),
}

impl DesignSpec {
    pub fn build(&self, m: usize) -> Result<DesignPoints> {
        match self {
            DesignSpec::Whole => DesignPoints::whole(m),
            DesignSpec::Half => DesignPoints::half(m),
            DesignSpec::Points(xs) => {
                if xs.len() != m {
                    return invalid(format!("{} design points given but m = {m}", xs.len()));
                }
                DesignPoints::custom(xs.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
    pub delta_sq: f64,
    pub sigma: f64,
    pub n_modes: usize,
    pub n_obs: usize,
    pub design: DesignSpec,
    pub operator: OperatorKind,
    pub target: Target,
}

impl ProblemSpec {
    /// α = 2, β = 0.51, δ² = 0.1, σ = 0.1, N = 200, m = 10 on the whole
    /// interval, Gaussian process regression.
    pub fn baseline() -> Self {
        Self {
            alpha: 2.0,
            kappa: 0.0,
            beta: 0.51,
            delta_sq: 0.1,
            sigma: 0.1,
            n_modes: 200,
            n_obs: 10,
            design: DesignSpec::Whole,
            operator: OperatorKind::Identity,
            target: Target::Regression,
        }
    }

    pub fn with_modes(&self, n_modes: usize) -> Self {
        Self {
            n_modes,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<Problem> {
        if !(self.delta_sq >= 0.0) || !self.delta_sq.is_finite() {
            return invalid(format!(
                "delta_sq must be non-negative, got {}",
                self.delta_sq
            ));
        }
        let basis = SpectralBasis::dirichlet_1d(self.n_modes)?;
        let prior = basis.matern(self.alpha, self.kappa)?;
        let weights = basis.roughness(self.beta)?;
        let operator = SpectralOperator::new(self.operator, &basis)?;
        let design = self.design.build(self.n_obs)?;
        let map = ObservationMap::new(&basis, &operator, &design, self.target)?;
        let sigma0 = JointGaussian::nominal(&prior, self.sigma, self.n_obs)?;
        let ball = GelbrichBall::from_delta_sq(&sigma0, weights.weights(), self.delta_sq)?;
        Ok(Problem {
            spec: self.clone(),
            basis,
            prior,
            weights,
            operator,
            design,
            map,
            sigma0,
            ball,
        })
    }
}

/// A fully assembled instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub basis: SpectralBasis,
    pub prior: PriorSpectrum,
    pub weights: WeightSequence,
    pub operator: SpectralOperator,
    pub design: DesignPoints,
    pub map: ObservationMap,
    pub sigma0: JointGaussian,
    pub ball: GelbrichBall,
}

impl Problem {
    pub fn nominal_value(&self) -> Result<f64> {
        mmse_value(&self.sigma0, &self.map)
    }

    pub fn nominal_estimator(&self) -> Result<AffineEstimator> {
        optimal_affine_estimator(&self.sigma0, &self.map)
    }

    pub fn nominal_distance(&self) -> Result<f64> {
        prior_posterior_distance(&self.sigma0, &self.map)
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<EquilibriumResult> {
        solve_equilibrium(&self.ball, &self.map, config)
    }

    pub fn distance_under(&self, sigma: &JointGaussian) -> Result<f64> {
        prior_posterior_distance(sigma, &self.map)
    }
}

/// One column of the prior-to-posterior distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableColumn {
    pub label: String,
    pub spec: ProblemSpec,
}

/// The baseline followed by one-at-a-time variations of α, β, δ² and σ.
pub fn table1_columns(base: &ProblemSpec) -> Vec<TableColumn> {
    let mut cols = vec![TableColumn {
        label: "baseline".into(),
        spec: base.clone(),
    }];
    let mut vary = |label: &str, f: &dyn Fn(&mut ProblemSpec)| {
        let mut spec = base.clone();
        f(&mut spec);
        cols.push(TableColumn {
            label: label.into(),
            spec,
        });
    };
    vary("alpha=0.51", &|s| s.alpha = 0.51);
    vary("alpha=4", &|s| s.alpha = 4.0);
    vary("beta=0.7", &|s| s.beta = 0.7);
    vary("beta=1", &|s| s.beta = 1.0);
    vary("delta_sq=0.01", &|s| s.delta_sq = 0.01);
    vary("delta_sq=1", &|s| s.delta_sq = 1.0);
    vary("sigma=0.01", &|s| s.sigma = 0.01);
    vary("sigma=1", &|s| s.sigma = 1.0);
    cols
}

/// Solves the same problem at several truncation levels.
pub fn solve_levels(
    spec: &ProblemSpec,
    levels: &[usize],
    config: &SolverConfig,
) -> Result<Vec<(usize, EquilibriumResult)>> {
    levels
        .iter()
        .map(|&n| Ok((n, spec.with_modes(n).build()?.solve(config)?)))
        .collect()
}
