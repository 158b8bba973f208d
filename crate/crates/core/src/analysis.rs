//! Covariance comparisons: the affine-invariant (Förstner) distance between
//! prior and posterior coefficient covariances, and correlation matrices for
//! the field-level heatmaps.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{check_symmetric, symmetrize, SortedEigen};
use crate::model::{factor_observation_cov, JointGaussian, ObservationMap};

/// Relative eigenvalue cutoff defining the range of a numerically singular
/// prior.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-14;

/// `sqrt(Σ ln² μ_i)` over the generalized eigenvalues `μ` of the pencil
/// `(a, b)`.
pub fn foerstner_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(a, "first matrix")?;
    check_symmetric(b, "second matrix")?;
    if a.shape() != b.shape() {
        return invalid("matrices must have the same dimension");
    }
    for (m, what) in [(a, "first matrix"), (b, "second matrix")] {
        let min = SortedEigen::new(m).min();
        if !(min > 1e-14 * m.trace().abs()) {
            return invalid(format!(
                "{what} is not positive definite (min eigenvalue {min:e})"
            ));
        }
    }
    // Jacobi scaling first: the pencil is congruence invariant and scaling
    // keeps the Cholesky factor well conditioned for graded spectra.
    let scale = DVector::from_iterator(b.nrows(), b.diagonal().iter().map(|v| 1.0 / v.sqrt()));
    let sa = scale_both(a, &scale);
    let sb = scale_both(b, &scale);
    let chol = Cholesky::new(sb).ok_or_else(|| {
        crate::error::Error::InvalidArgument("second matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let left = l.solve_lower_triangular(&sa).unwrap();
    let m = l.solve_lower_triangular(&left.transpose()).unwrap();
    let mu = SortedEigen::new(&symmetrize(&m)).values;
    if mu.iter().any(|&v| !(v > 0.0)) {
        return invalid("generalized eigenvalues are not all positive");
    }
    Ok(mu.iter().map(|v| v.ln().powi(2)).sum::<f64>().sqrt())
}

fn scale_both(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s[i] * m[(i, j)] * s[j])
}

/// Förstner distance between the prior and posterior covariance of the input
/// coefficients `b` under `Σ`.
///
/// The posterior differs from the prior only along the canonical directions
/// shared with the data, so the generalized eigenvalues are `1 − ρ_i²` for the
/// canonical correlations `ρ_i` between `b` and `Y`, and one. Computing those
/// from the `m × m` problem avoids inverting the prior, which for smooth
/// priors has eigenvalues far below double precision relative to its trace.
pub fn prior_posterior_distance(sigma: &JointGaussian, map: &ObservationMap) -> Result<f64> {
    let correlations = canonical_correlations_sq(sigma, map)?;
    let mut total = 0.0;
    for rho_sq in correlations.iter() {
        if *rho_sq >= 1.0 {
            return invalid("posterior covariance is singular (perfectly informative direction)");
        }
        total += (-rho_sq.max(0.0)).ln_1p().powi(2);
    }
    Ok(total.sqrt())
}

/// Squared canonical correlations between the input coefficients and the
/// observations, in ascending order.
pub fn canonical_correlations_sq(
    sigma: &JointGaussian,
    map: &ObservationMap,
) -> Result<DVector<f64>> {
    let s = sigma.matrix();
    if s.nrows() != map.dim() || s.ncols() != map.dim() {
        return invalid("covariance does not match the model dimension");
    }
    if map.n_obs() == 0 {
        return Ok(DVector::zeros(0));
    }
    let select = map.input_selector();
    let s_select_t = s * select.transpose();
    let prior = symmetrize(&(&select * &s_select_t));
    let cross = (map.b() * &s_select_t).transpose();
    let k = symmetrize(&(map.b() * s * map.b().transpose()));
    let chol = factor_observation_cov(k)?;

    let scale = DVector::from_iterator(
        prior.nrows(),
        prior
            .diagonal()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }),
    );
    let eig = SortedEigen::new(&scale_both(&prior, &scale));
    let cutoff = PSEUDO_INVERSE_CUTOFF * eig.max();
    // whitened = Λ^{-1/2} Qᵀ D C over the retained eigenpairs
    let scaled_cross = DMatrix::from_fn(cross.nrows(), cross.ncols(), |i, j| {
        scale[i] * cross[(i, j)]
    });
    let projected = eig.vectors.transpose() * scaled_cross;
    let kept: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i] > cutoff)
        .collect();
    let whitened = DMatrix::from_fn(kept.len(), cross.ncols(), |r, j| {
        projected[(kept[r], j)] / eig.values[kept[r]].sqrt()
    });
    let right = chol
        .l()
        .solve_lower_triangular(&whitened.transpose())
        .unwrap();
    let m = symmetrize(&(&right * right.transpose()));
    Ok(SortedEigen::new(&m).values)
}

/// `R[i,j] = C[i,j] / sqrt(C[i,i] C[j,j])` with an exact unit diagonal.
pub fn correlation_from_covariance(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return invalid("covariance must be square");
    }
    if c.diagonal().iter().any(|&v| !(v > 0.0)) {
        return invalid("covariance has a non-positive variance on the diagonal");
    }
    let sd: Vec<f64> = c.diagonal().iter().map(|v| v.sqrt()).collect();
    Ok(DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            c[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub nominal: f64,
    pub worst_case: f64,
    pub config_label: String,
}
