//! Diagonal forward operators acting on basis coefficients.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::SpectralBasis;

/// Heat multipliers below this are flushed to zero.
pub const MULTIPLIER_FLUSH: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// Gaussian process regression, `u = b`.
    Identity,
    /// Solution map of the Dirichlet Poisson problem `Δu = b`.
    InverseLaplacian,
    /// Heat semigroup at a fixed time, `b` is the initial condition.
    Heat { time: f64 },
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Identity => "identity",
            OperatorKind::InverseLaplacian => "inverse_laplacian",
            OperatorKind::Heat { .. } => "heat",
        }
    }
}

/// A forward map `T` that is diagonal in the spectral basis:
/// `T(e_n) = t_n e_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    kind: OperatorKind,
    multipliers: DVector<f64>,
}

impl SpectralOperator {
    pub fn new(kind: OperatorKind, basis: &SpectralBasis) -> Result<Self> {
        let lambdas = basis.lambdas();
        let multipliers = match kind {
            OperatorKind::Identity => DVector::from_element(lambdas.len(), 1.0),
            OperatorKind::InverseLaplacian => lambdas.map(|l| -1.0 / l),
            OperatorKind::Heat { time } => {
                if !(time >= 0.0) || !time.is_finite() {
                    return invalid(format!("heat time must be non-negative, got {time}"));
                }
                lambdas.map(|l| {
                    let t = (-l * time).exp();
                    if t < MULTIPLIER_FLUSH {
                        0.0
                    } else {
                        t
                    }
                })
            }
        };
        Ok(Self { kind, multipliers })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn multipliers(&self) -> &DVector<f64> {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn apply(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.multipliers.len() {
            return invalid(format!(
                "coefficient vector has length {}, operator has {} modes",
                coeffs.len(),
                self.multipliers.len()
            ));
        }
        Ok(coeffs.component_mul(&self.multipliers))
    }
}

pub fn make_operator(kind: OperatorKind, basis: &SpectralBasis) -> Result<SpectralOperator> {
    SpectralOperator::new(kind, basis)
}

pub fn apply_to_coefficients(op: &SpectralOperator, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
    op.apply(coeffs)
}
