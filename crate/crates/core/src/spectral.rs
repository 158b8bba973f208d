//! Dirichlet-Laplacian spectral basis on [0, 1], Matérn coefficient spectra
//! and roughness weights for the transport cost.
//!
//! On the unit interval the eigenpairs are `λ_n = n²π²` and
//! `e_n(x) = √2 sin(nπx)`, an orthonormal system in L²(0, 1). A Matérn prior
//! draws coefficient `n` with standard deviation `(κ² + λ_n)^{-α/2}`; the
//! perturbation space penalises mode `n` by `w_n = λ_n^β`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Truncated Dirichlet-Laplacian eigenbasis on the closed interval [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    lambdas: DVector<f64>,
}

impl SpectralBasis {
    /// The first `n_modes` eigenpairs of `-d²/dx²` with zero boundary values.
    pub fn dirichlet_1d(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return invalid("truncation level must be at least 1");
        }
        let lambdas = DVector::from_fn(n_modes, |i, _| {
            let n = (i + 1) as f64;
            n * n * PI * PI
        });
        Ok(Self { lambdas })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &DVector<f64> {
        &self.lambdas
    }

    /// `e_{mode+1}(x)`; `mode` is zero-based. No range check on `x`.
    #[inline]
    pub fn eigenfunction(&self, mode: usize, x: f64) -> f64 {
        SQRT_2 * (((mode + 1) as f64) * PI * x).sin()
    }

    /// Row `i` holds `(e_1(x_i), …, e_N(x_i))`.
    pub fn evaluate(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        check_unit_interval(xs)?;
        Ok(DMatrix::from_fn(xs.len(), self.len(), |i, n| {
            self.eigenfunction(n, xs[i])
        }))
    }

    /// Prior coefficient spectrum with `κ_n = (κ² + λ_n)^{-α/2}`.
    pub fn matern(&self, alpha: f64, kappa: f64) -> Result<PriorSpectrum> {
        matern_coefficients(self, alpha, kappa)
    }

    pub fn roughness(&self, beta: f64) -> Result<WeightSequence> {
        roughness_weights(self, beta)
    }
}

pub(crate) fn check_unit_interval(xs: &[f64]) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return invalid(format!("point {x} lies outside [0, 1]"));
    }
    Ok(())
}

/// Standard deviations of the prior basis coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpectrum {
    pub alpha: f64,
    pub kappa: f64,
    coeff_stds: Vec<f64>,
}

impl PriorSpectrum {
    pub fn coeff_stds(&self) -> &[f64] {
        &self.coeff_stds
    }

    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(self.coeff_stds.len(), self.coeff_stds.iter().map(|s| s * s))
    }

    pub fn len(&self) -> usize {
        self.coeff_stds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff_stds.is_empty()
    }
}

pub fn matern_coefficients(basis: &SpectralBasis, alpha: f64, kappa: f64) -> Result<PriorSpectrum> {
    // d = 1, so the Matérn smoothness must exceed 1/2.
    if !(alpha > 0.5) || !alpha.is_finite() {
        return invalid(format!("alpha must exceed 1/2, got {alpha}"));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return invalid(format!("kappa must be non-negative, got {kappa}"));
    }
    let coeff_stds = basis
        .lambdas()
        .iter()
        .map(|&lambda| {
            if kappa == 0.0 {
                lambda.powf(-alpha / 2.0)
            } else {
                (kappa * kappa + lambda).powf(-alpha / 2.0)
            }
        })
        .collect();
    Ok(PriorSpectrum {
        alpha,
        kappa,
        coeff_stds,
    })
}

/// Per-mode transport-cost weights `w_n = λ_n^β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    pub beta: f64,
    weights: Vec<f64>,
}

impl WeightSequence {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn roughness_weights(basis: &SpectralBasis, beta: f64) -> Result<WeightSequence> {
    if !(beta > 0.5) || !beta.is_finite() {
        return invalid(format!("beta must exceed 1/2, got {beta}"));
    }
    let weights = basis.lambdas().iter().map(|l| l.powf(beta)).collect();
    Ok(WeightSequence { beta, weights })
}
