//! The truncated joint Gaussian model of basis coefficients and observation
//! noise, together with conditioning, the MMSE value function and field-level
//! summaries (second moments, intervals, sample paths).
//!
//! Coordinates of the joint vector are `(⟨b,e_1⟩, …, ⟨b,e_N⟩, ε_1, …, ε_m)`.
//! Observations are `Y = B r` with `B = [H, I_m]` and `H[j,n] = t_n e_n(x_j)`;
//! the estimand is `A r` with `A = [diag(t), 0]` (regression) or `[I, 0]`
//! (inverse problem). All L² norms reduce to Euclidean norms of coefficient
//! vectors because the basis is orthonormal.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_psd, check_symmetric, symmetrize, SortedEigen};
use crate::operator::SpectralOperator;
use crate::spectral::{check_unit_interval, PriorSpectrum, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignLabel {
    /// `x_i = i / (m + 1)`, equispaced on (0, 1).
    Whole,
    /// `x_i = i / (2(m + 1))`, equispaced on (0, 1/2).
    Half,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoints {
    xs: Vec<f64>,
    label: DesignLabel,
}

impl DesignPoints {
    pub fn whole(m: usize) -> Result<Self> {
        Self::equispaced(m, 1.0, DesignLabel::Whole)
    }

    pub fn half(m: usize) -> Result<Self> {
        Self::equispaced(m, 0.5, DesignLabel::Half)
    }

    fn equispaced(m: usize, right: f64, label: DesignLabel) -> Result<Self> {
        if m == 0 {
            return invalid("design must contain at least one point");
        }
        let xs = (1..=m).map(|i| right * i as f64 / (m + 1) as f64).collect();
        Ok(Self { xs, label })
    }

    pub fn custom(xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return invalid("design must contain at least one point");
        }
        if xs.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return invalid("design points must lie in the open interval (0, 1)");
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("design points must be strictly increasing");
        }
        Ok(Self {
            xs,
            label: DesignLabel::Custom,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.xs
    }

    pub fn label(&self) -> DesignLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Which quantity the decision-maker estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The regression function `u = T(b)`.
    Regression,
    /// The unknown input `b` itself.
    Inverse,
}

/// Estimand selector `A` and observation selector `B = [H, I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    n_coeffs: usize,
    target: Target,
}

impl ObservationMap {
    pub fn new(
        basis: &SpectralBasis,
        op: &SpectralOperator,
        design: &DesignPoints,
        target: Target,
    ) -> Result<Self> {
        if design.is_empty() {
            return invalid("design must contain at least one point");
        }
        if op.len() != basis.len() {
            return invalid("operator and basis disagree on the truncation level");
        }
        let n = basis.len();
        let t = op.multipliers();
        let e = basis.evaluate(design.points())?;
        let h = DMatrix::from_fn(design.len(), n, |j, k| t[k] * e[(j, k)]);
        let a_block = match target {
            Target::Regression => DMatrix::from_diagonal(t),
            Target::Inverse => DMatrix::identity(n, n),
        };
        let mut map = Self::from_blocks(&a_block, &h)?;
        map.target = target;
        Ok(map)
    }

    /// `A = [a_block, 0]`, `B = [h, I]` for arbitrary blocks. `h` may have
    /// zero rows (no observations).
    pub fn from_blocks(a_block: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Self> {
        let n = a_block.ncols();
        if !a_block.is_square() || h.ncols() != n {
            return invalid(format!(
                "estimand block {}x{} and observation block {}x{} are incompatible",
                a_block.nrows(),
                a_block.ncols(),
                h.nrows(),
                h.ncols()
            ));
        }
        let m = h.nrows();
        let mut a = DMatrix::zeros(n, n + m);
        a.view_mut((0, 0), (n, n)).copy_from(a_block);
        let mut b = DMatrix::zeros(m, n + m);
        b.view_mut((0, 0), (m, n)).copy_from(h);
        b.view_mut((0, n), (m, m)).fill_with_identity();
        Ok(Self {
            a,
            b,
            n_coeffs: n,
            target: Target::Inverse,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn h(&self) -> DMatrix<f64> {
        self.b.columns(0, self.n_coeffs).into_owned()
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn n_obs(&self) -> usize {
        self.b.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Selector of the raw input coefficients, `[I, 0]`, whatever the target.
    pub fn input_selector(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n_coeffs, self.dim());
        s.view_mut((0, 0), (self.n_coeffs, self.n_coeffs))
            .fill_with_identity();
        s
    }

    fn check_dim(&self, sigma: &DMatrix<f64>) -> Result<()> {
        if sigma.nrows() != self.dim() || sigma.ncols() != self.dim() {
            return invalid(format!(
                "covariance is {}x{}, model dimension is {}",
                sigma.nrows(),
                sigma.ncols(),
                self.dim()
            ));
        }
        Ok(())
    }
}

pub fn observation_map(
    basis: &SpectralBasis,
    op: &SpectralOperator,
    design: &DesignPoints,
    target: Target,
) -> Result<ObservationMap> {
    ObservationMap::new(basis, op, design, target)
}

/// Centered Gaussian on the coefficient-plus-noise space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    sigma: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        check_psd(&sigma, "covariance")?;
        Ok(Self {
            sigma: symmetrize(&sigma),
        })
    }

    /// Skips the eigenvalue check; the matrix is still symmetrized.
    pub(crate) fn new_unchecked(sigma: DMatrix<f64>) -> Self {
        Self {
            sigma: symmetrize(&sigma),
        }
    }

    /// `Σ0 = blockdiag(diag(κ_1², …, κ_N²), σ² I_m)`.
    pub fn nominal(prior: &PriorSpectrum, sigma: f64, m: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return invalid(format!(
                "noise standard deviation must be positive, got {sigma}"
            ));
        }
        let n = prior.len();
        let diag = DVector::from_fn(n + m, |i, _| {
            if i < n {
                prior.coeff_stds()[i].powi(2)
            } else {
                sigma * sigma
            }
        });
        Ok(Self {
            sigma: DMatrix::from_diagonal(&diag),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

pub fn nominal_covariance(prior: &PriorSpectrum, sigma: f64, m: usize) -> Result<JointGaussian> {
    JointGaussian::nominal(prior, sigma, m)
}

/// Linear estimator `y ↦ Φ y` producing estimand coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEstimator {
    phi: DMatrix<f64>,
}

impl AffineEstimator {
    pub fn new(phi: DMatrix<f64>) -> Self {
        Self { phi }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn predict_coefficients(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.phi.ncols() {
            return invalid(format!(
                "expected {} observations, got {}",
                self.phi.ncols(),
                y.len()
            ));
        }
        Ok(&self.phi * DVector::from_column_slice(y))
    }

    /// `φ(y)(x) = Σ_n ĉ_n e_n(x)` on the given points.
    pub fn predict_field(&self, basis: &SpectralBasis, y: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
        let c = self.predict_coefficients(y)?;
        if c.len() != basis.len() {
            return invalid("estimator and basis disagree on the truncation level");
        }
        let e = basis.evaluate(xs)?;
        Ok((e * c).iter().copied().collect())
    }
}

/// Joint second moments needed for conditioning under a given `Σ`.
pub(crate) struct Conditioned {
    /// `A Σ Aᵀ`
    pub prior: DMatrix<f64>,
    /// `A Σ Bᵀ`
    pub cross: DMatrix<f64>,
    /// Cholesky factor of `K = B Σ Bᵀ`; `None` when there are no observations.
    pub chol: Option<Cholesky<f64, Dyn>>,
}

impl Conditioned {
    pub fn new(sigma: &DMatrix<f64>, map: &ObservationMap) -> Result<Self> {
        map.check_dim(sigma)?;
        let a_sigma = map.a() * sigma;
        let prior = symmetrize(&(&a_sigma * map.a().transpose()));
        let cross = &a_sigma * map.b().transpose();
        if map.n_obs() == 0 {
            return Ok(Self {
                prior,
                cross,
                chol: None,
            });
        }
        let k = symmetrize(&(map.b() * sigma * map.b().transpose()));
        Ok(Self {
            prior,
            cross,
            chol: Some(factor_observation_cov(k)?),
        })
    }

    /// `Φ = (AΣBᵀ)(BΣBᵀ)⁻¹`.
    pub fn gain(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(chol) => chol.solve(&self.cross.transpose()).transpose(),
            None => DMatrix::zeros(self.cross.nrows(), 0),
        }
    }

    /// `(AΣBᵀ)(BΣBᵀ)⁻¹(BΣAᵀ)`, the covariance explained by the data.
    pub fn explained(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(chol) => {
                let half = chol
                    .l()
                    .solve_lower_triangular(&self.cross.transpose())
                    .unwrap();
                symmetrize(&(half.transpose() * half))
            }
            None => DMatrix::zeros(self.prior.nrows(), self.prior.nrows()),
        }
    }

    pub fn explained_trace(&self) -> f64 {
        match &self.chol {
            Some(chol) => {
                let half = chol
                    .l()
                    .solve_lower_triangular(&self.cross.transpose())
                    .unwrap();
                half.norm_squared()
            }
            None => 0.0,
        }
    }

    pub fn value(&self) -> f64 {
        self.prior.trace() - self.explained_trace()
    }
}

/// Invertibility threshold for the observation covariance, relative to its
/// trace.
pub const OBSERVATION_FLOOR_RELATIVE: f64 = 1e-12;

pub(crate) fn factor_observation_cov(k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let floor = OBSERVATION_FLOOR_RELATIVE * k.trace().abs();
    let eig = SortedEigen::new(&k);
    let min = eig.min();
    let singular = || Error::SingularModel {
        det: eig.values.iter().product(),
        min_eigenvalue: min,
    };
    if !(min >= floor) || !(min > 0.0) {
        return Err(singular());
    }
    Cholesky::new(k).ok_or_else(singular)
}

/// `J(Σ) = tr(AΣAᵀ) − tr((AΣBᵀ)(BΣBᵀ)⁻¹(BΣAᵀ))`: the integrated posterior
/// variance, i.e. the Bayes risk of the conditional mean under `Σ`.
pub fn mmse_value(sigma: &JointGaussian, map: &ObservationMap) -> Result<f64> {
    Ok(Conditioned::new(sigma.matrix(), map)?.value())
}

/// The conditional-mean estimator under `Σ`.
pub fn optimal_affine_estimator(
    sigma: &JointGaussian,
    map: &ObservationMap,
) -> Result<AffineEstimator> {
    Ok(AffineEstimator::new(
        Conditioned::new(sigma.matrix(), map)?.gain(),
    ))
}

/// `Obj(φ, Σ) = tr((A − ΦB) Σ (A − ΦB)ᵀ)` for a zero-intercept linear rule.
pub fn bayes_risk(
    estimator: &AffineEstimator,
    sigma: &JointGaussian,
    map: &ObservationMap,
) -> Result<f64> {
    let residual = residual_operator(estimator, map)?;
    map.check_dim(sigma.matrix())?;
    Ok((&residual * sigma.matrix() * residual.transpose()).trace())
}

/// `G(φ) = (A − ΦB)ᵀ(A − ΦB)`, the matrix of the linear map `Σ ↦ Obj(φ, Σ)`.
/// At `φ = φ*(Σ)` it is also the gradient of `J` at `Σ`.
pub fn risk_matrix(estimator: &AffineEstimator, map: &ObservationMap) -> Result<DMatrix<f64>> {
    let residual = residual_operator(estimator, map)?;
    Ok(symmetrize(&(residual.transpose() * residual)))
}

fn residual_operator(estimator: &AffineEstimator, map: &ObservationMap) -> Result<DMatrix<f64>> {
    let phi = estimator.gain();
    if phi.nrows() != map.a().nrows() || phi.ncols() != map.n_obs() {
        return invalid(format!(
            "estimator gain is {}x{}, expected {}x{}",
            phi.nrows(),
            phi.ncols(),
            map.a().nrows(),
            map.n_obs()
        ));
    }
    Ok(map.a() - phi * map.b())
}

/// `∇J(Σ)`.
pub fn mmse_gradient(sigma: &JointGaussian, map: &ObservationMap) -> Result<DMatrix<f64>> {
    let est = optimal_affine_estimator(sigma, map)?;
    risk_matrix(&est, map)
}

/// Gaussian over basis coefficients of the estimand.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl CoefficientGaussian {
    pub fn centered(cov: DMatrix<f64>) -> Self {
        Self {
            mean: DVector::zeros(cov.nrows()),
            cov,
        }
    }
}

/// Prior of the estimand coefficients under `Σ`: mean zero, covariance `AΣAᵀ`.
pub fn prior_coefficient_gaussian(
    sigma: &JointGaussian,
    map: &ObservationMap,
) -> Result<CoefficientGaussian> {
    map.check_dim(sigma.matrix())?;
    let prior = symmetrize(&(map.a() * sigma.matrix() * map.a().transpose()));
    Ok(CoefficientGaussian::centered(prior))
}

/// Posterior of the estimand coefficients given `y`. The covariance does not
/// depend on `y`.
pub fn posterior_coefficient_gaussian(
    sigma: &JointGaussian,
    map: &ObservationMap,
    y: &[f64],
) -> Result<CoefficientGaussian> {
    if y.len() != map.n_obs() {
        return invalid(format!(
            "expected {} observations, got {}",
            map.n_obs(),
            y.len()
        ));
    }
    let cond = Conditioned::new(sigma.matrix(), map)?;
    let mean = cond.gain() * DVector::from_column_slice(y);
    let cov = symmetrize(&(&cond.prior - cond.explained()));
    Ok(CoefficientGaussian { mean, cov })
}

/// `E[f(x_i) f(x_j)]` for a field with the given coefficient covariance.
pub fn field_second_moments(
    coeff_cov: &DMatrix<f64>,
    basis: &SpectralBasis,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    check_symmetric(coeff_cov, "coefficient covariance")?;
    if coeff_cov.nrows() != basis.len() {
        return invalid("coefficient covariance and basis disagree on the truncation level");
    }
    let e = basis.evaluate(grid)?;
    Ok(symmetrize(&(&e * coeff_cov * e.transpose())))
}

/// Draws `count` independent field paths on `grid`. Path `i` uses its own
/// ChaCha stream, so any subset of paths can be regenerated independently.
pub fn sample_paths(
    gaussian: &CoefficientGaussian,
    basis: &SpectralBasis,
    grid: &[f64],
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = gaussian.cov.nrows();
    if n != basis.len() || gaussian.mean.len() != n {
        return invalid("coefficient Gaussian and basis disagree on the truncation level");
    }
    let eig = check_psd(&gaussian.cov, "coefficient covariance")?;
    let root = eig.map(|v| v.max(0.0).sqrt());
    let e = basis.evaluate(grid)?;
    let mut out = DMatrix::zeros(count, grid.len());
    for path in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let coeffs = &gaussian.mean + &root * z;
        out.set_row(path, &(&e * coeffs).transpose());
    }
    Ok(out)
}

/// Pointwise 95% intervals `mean(x) ± 1.96 sd(x)`.
pub fn marginal_intervals(
    gaussian: &CoefficientGaussian,
    basis: &SpectralBasis,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gaussian.cov.nrows();
    if n != basis.len() || gaussian.mean.len() != n {
        return invalid("coefficient Gaussian and basis disagree on the truncation level");
    }
    check_unit_interval(grid)?;
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for &x in grid {
        let phi = DVector::from_fn(n, |k, _| basis.eigenfunction(k, x));
        let mean = phi.dot(&gaussian.mean);
        let var = (gaussian.cov.transpose() * &phi).dot(&phi).max(0.0);
        let half = 1.96 * var.sqrt();
        lower.push(mean - half);
        upper.push(mean + half);
    }
    Ok((lower, upper))
}

/// Pointwise marginal variances `e(x)ᵀ C e(x)`.
pub fn marginal_variances(
    coeff_cov: &DMatrix<f64>,
    basis: &SpectralBasis,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let e = basis.evaluate(grid)?;
    if coeff_cov.nrows() != basis.len() {
        return invalid("coefficient covariance and basis disagree on the truncation level");
    }
    let ec = &e * coeff_cov;
    Ok((0..grid.len())
        .map(|i| ec.row(i).dot(&e.row(i)).max(0.0))
        .collect())
}

/// Mean path `Σ_n mean_n e_n(x)` on the grid.
pub fn mean_path(
    gaussian: &CoefficientGaussian,
    basis: &SpectralBasis,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let e = basis.evaluate(grid)?;
    if gaussian.mean.len() != basis.len() {
        return invalid("coefficient mean and basis disagree on the truncation level");
    }
    Ok((e * &gaussian.mean).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{OperatorKind, SpectralOperator};
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::f64::consts::{PI, SQRT_2};

    const WHOLE_Y: [f64; 10] = [
        -0.17, -0.09, 0.02, 0.04, 0.12, 0.05, -0.03, 0.03, -0.28, -0.15,
    ];

    fn scalar_map() -> ObservationMap {
        ObservationMap::from_blocks(&DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap()
    }

    fn random_psd(rng: &mut impl Rng, n: usize, ridge: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * ridge
    }

    fn random_map(rng: &mut impl Rng, n: usize, m: usize) -> ObservationMap {
        let a = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0)));
        let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        ObservationMap::from_blocks(&a, &h).unwrap()
    }

    #[test]
    fn designs() {
        let w = DesignPoints::whole(10).unwrap();
        assert_relative_eq!(w.points()[0], 1.0 / 11.0);
        let h = DesignPoints::half(10).unwrap();
        assert_relative_eq!(h.points()[9], 10.0 / 22.0);
        assert!(DesignPoints::whole(0).is_err());
        assert!(DesignPoints::custom(vec![]).is_err());
        assert!(DesignPoints::custom(vec![0.3, 0.2]).is_err());
        assert!(DesignPoints::custom(vec![0.0, 0.2]).is_err());
        assert!(DesignPoints::custom(vec![0.2, 0.3]).is_ok());
    }

    #[test]
    fn nominal_covariance_blocks() {
        let basis = SpectralBasis::dirichlet_1d(5).unwrap();
        let prior = basis.matern(2.0, 0.0).unwrap();
        let s0 = nominal_covariance(&prior, 0.1, 3).unwrap();
        assert_relative_eq!(s0.matrix()[(0, 0)], PI.powi(-4), epsilon = 1e-15);
        assert_relative_eq!(s0.matrix()[(0, 0)], 0.0102660, epsilon = 1e-7);
        assert_relative_eq!(s0.matrix()[(5, 5)], 0.01, epsilon = 1e-15);
        for i in 0..5 {
            for j in 5..8 {
                assert_eq!(s0.matrix()[(i, j)], 0.0);
            }
        }
        assert!(nominal_covariance(&prior, 0.0, 3).is_err());
        assert!(nominal_covariance(&prior, -1.0, 3).is_err());
    }

    #[test]
    fn observation_map_entries() {
        let basis = SpectralBasis::dirichlet_1d(4).unwrap();
        let design = DesignPoints::whole(10).unwrap();
        let id = SpectralOperator::new(OperatorKind::Identity, &basis).unwrap();
        let map = observation_map(&basis, &id, &design, Target::Regression).unwrap();
        assert_relative_eq!(map.b()[(0, 0)], 0.39843, epsilon = 1e-5);
        assert_eq!(map.b()[(3, 4 + 3)], 1.0);
        assert_eq!(map.b()[(3, 4 + 2)], 0.0);

        let heat0 = SpectralOperator::new(OperatorKind::Heat { time: 0.0 }, &basis).unwrap();
        let map0 = observation_map(&basis, &heat0, &design, Target::Regression).unwrap();
        assert_eq!(map0.h(), map.h());

        let lap = SpectralOperator::new(OperatorKind::InverseLaplacian, &basis).unwrap();
        let inv = observation_map(&basis, &lap, &design, Target::Inverse).unwrap();
        for i in 0..4 {
            for j in 0..inv.dim() {
                assert_eq!(inv.a()[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        let reg = observation_map(&basis, &lap, &design, Target::Regression).unwrap();
        assert_relative_eq!(reg.a()[(0, 0)], -1.0 / (PI * PI));
    }

    #[test]
    fn scalar_conditioning() {
        let map = scalar_map();
        let s = JointGaussian::new(DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(mmse_value(&s, &map).unwrap(), 0.5, epsilon = 1e-15);
        let est = optimal_affine_estimator(&s, &map).unwrap();
        assert_relative_eq!(est.gain()[(0, 0)], 0.5, epsilon = 1e-15);
        let post = posterior_coefficient_gaussian(&s, &map, &[0.8]).unwrap();
        assert_relative_eq!(post.mean[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(post.cov[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uninformative_data_gives_prior_variance() {
        let basis = SpectralBasis::dirichlet_1d(20).unwrap();
        let prior = basis.matern(2.0, 0.0).unwrap();
        let design = DesignPoints::whole(10).unwrap();
        let id = SpectralOperator::new(OperatorKind::Identity, &basis).unwrap();
        let map = observation_map(&basis, &id, &design, Target::Regression).unwrap();
        let s = nominal_covariance(&prior, 1e6, 10).unwrap();
        let total: f64 = prior.variances().sum();
        assert_relative_eq!(mmse_value(&s, &map).unwrap(), total, max_relative = 1e-9);
    }

    #[test]
    fn zero_signal_gives_zero_gain() {
        let map = scalar_map();
        let s =
            JointGaussian::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).unwrap();
        let est = optimal_affine_estimator(&s, &map).unwrap();
        assert_eq!(est.gain()[(0, 0)], 0.0);
    }

    #[test]
    fn singular_observation_covariance_is_reported() {
        let map = ObservationMap::from_blocks(
            &DMatrix::identity(1, 1),
            &DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        )
        .unwrap();
        // zero noise, rank-one signal, two observations
        let s = JointGaussian::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 0.0, 0.0,
        ])))
        .unwrap();
        match mmse_value(&s, &map) {
            Err(Error::SingularModel { det, .. }) => assert!(det.abs() < 1e-12),
            other => panic!("expected singular-model error, got {other:?}"),
        }
    }

    #[test]
    fn mmse_matches_monte_carlo_bayes_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = random_map(&mut rng, 2, 1);
        let sigma = random_psd(&mut rng, 3, 0.1);
        let s = JointGaussian::new(sigma.clone()).unwrap();
        let j = mmse_value(&s, &map).unwrap();
        let est = optimal_affine_estimator(&s, &map).unwrap();
        let residual = map.a() - est.gain() * map.b();
        let l = Cholesky::new(sigma).unwrap().l();
        let samples = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let z = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let loss = (&residual * (&l * z)).norm_squared();
            sum += loss;
            sum_sq += loss * loss;
        }
        let mean = sum / samples as f64;
        let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((mean - j).abs() < 3.0 * se, "mc {mean} ± {se}, exact {j}");
    }

    #[test]
    fn small_noise_nearly_interpolates() {
        // At σ = 0.01 the smooth prior still shrinks this rough data vector
        // by up to 0.09 at the design points; the interpolation limit is
        // reached an order of magnitude lower.
        let basis = SpectralBasis::dirichlet_1d(200).unwrap();
        let prior = basis.matern(2.0, 0.0).unwrap();
        let design = DesignPoints::whole(10).unwrap();
        let id = SpectralOperator::new(OperatorKind::Identity, &basis).unwrap();
        let map = observation_map(&basis, &id, &design, Target::Regression).unwrap();
        let s = nominal_covariance(&prior, 1e-3, 10).unwrap();
        let est = optimal_affine_estimator(&s, &map).unwrap();
        let fit = est
            .predict_field(&basis, &WHOLE_Y, design.points())
            .unwrap();
        let dev = fit
            .iter()
            .zip(WHOLE_Y)
            .map(|(f, y)| (f - y).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.05 * 0.28, "max deviation {dev}");
    }

    #[test]
    fn posterior_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 3, 2);
        let s = JointGaussian::new(random_psd(&mut rng, 5, 0.2)).unwrap();
        let post = posterior_coefficient_gaussian(&s, &map, &[0.0, 0.0]).unwrap();
        assert!(post.mean.amax() == 0.0);
        let post_y = posterior_coefficient_gaussian(&s, &map, &[1.0, -2.0]).unwrap();
        assert_eq!(post.cov, post_y.cov);
        assert!(posterior_coefficient_gaussian(&s, &map, &[1.0]).is_err());

        // no observations at all
        let empty =
            ObservationMap::from_blocks(&DMatrix::identity(2, 2), &DMatrix::zeros(0, 2)).unwrap();
        let s2 = JointGaussian::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let post = posterior_coefficient_gaussian(&s2, &empty, &[]).unwrap();
        assert_eq!(post.mean, DVector::zeros(2));
        assert_eq!(&post.cov, s2.matrix());
        assert_relative_eq!(mmse_value(&s2, &empty).unwrap(), 3.0);
    }

    #[test]
    fn field_moments() {
        let basis = SpectralBasis::dirichlet_1d(7).unwrap();
        let z = field_second_moments(&DMatrix::zeros(7, 7), &basis, &[0.1, 0.5]).unwrap();
        assert_eq!(z, DMatrix::zeros(2, 2));
        let id = field_second_moments(&DMatrix::identity(7, 7), &basis, &[0.5]).unwrap();
        // n = 1, 3, 5, 7 are odd
        assert_relative_eq!(id[(0, 0)], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_prior_variance_matches_series() {
        let basis = SpectralBasis::dirichlet_1d(200).unwrap();
        let prior = basis.matern(2.0, 0.0).unwrap();
        let c = DMatrix::from_diagonal(&prior.variances());
        let v = field_second_moments(&c, &basis, &[0.5]).unwrap()[(0, 0)];
        let series: f64 = (1..=200)
            .map(|n| {
                let lam = (n as f64 * PI).powi(2);
                2.0 * lam.powi(-2) * ((n as f64) * PI / 2.0).sin().powi(2)
            })
            .sum();
        assert_relative_eq!(v, series, epsilon = 1e-12);
        // infinite series is 1/48
        assert!((v - 1.0 / 48.0).abs() < 1e-9);
    }

    #[test]
    fn matern_kernel_on_small_grid() {
        let basis = SpectralBasis::dirichlet_1d(50).unwrap();
        let prior = basis.matern(1.5, 2.0).unwrap();
        let grid = [0.13, 0.5, 0.91];
        let c = DMatrix::from_diagonal(&prior.variances());
        let k = field_second_moments(&c, &basis, &grid).unwrap();
        for (i, &x) in grid.iter().enumerate() {
            for (j, &y) in grid.iter().enumerate() {
                let direct: f64 = (1..=50)
                    .map(|n| {
                        let nf = n as f64;
                        let std = (4.0 + nf * nf * PI * PI).powf(-0.75);
                        std * std * 2.0 * (nf * PI * x).sin() * (nf * PI * y).sin()
                    })
                    .sum();
                assert!((k[(i, j)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_contracts() {
        let basis = SpectralBasis::dirichlet_1d(3).unwrap();
        let grid = [0.0, 0.25, 0.5];
        let g = CoefficientGaussian {
            mean: DVector::from_vec(vec![1.0, 0.5, -0.2]),
            cov: DMatrix::zeros(3, 3),
        };
        let paths = sample_paths(&g, &basis, &grid, 4, 11).unwrap();
        let mean = mean_path(&g, &basis, &grid).unwrap();
        for r in 0..4 {
            for c in 0..3 {
                assert_relative_eq!(paths[(r, c)], mean[c], epsilon = 1e-14);
            }
        }

        let g = CoefficientGaussian::centered(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 0.3, 0.1,
        ])));
        let a = sample_paths(&g, &basis, &grid, 5, 42).unwrap();
        let b = sample_paths(&g, &basis, &grid, 5, 42).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = sample_paths(&g, &basis, &grid, 5, 43).unwrap();
        assert!(a != c);

        let bad = CoefficientGaussian::centered(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, -0.5, 0.1,
        ])));
        assert!(sample_paths(&bad, &basis, &grid, 1, 0).is_err());
    }

    #[test]
    fn sample_variance_converges() {
        let basis = SpectralBasis::dirichlet_1d(1).unwrap();
        let g = CoefficientGaussian::centered(DMatrix::from_element(1, 1, 0.7));
        let paths = sample_paths(&g, &basis, &[0.5], 10_000, 5).unwrap();
        let n = paths.nrows() as f64;
        let mean = paths.sum() / n;
        let var = paths.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let truth = 0.7 * 2.0;
        assert!((var - truth).abs() < 0.05 * truth, "sample variance {var}");
    }

    #[test]
    fn intervals() {
        let basis = SpectralBasis::dirichlet_1d(1).unwrap();
        let g = CoefficientGaussian::centered(DMatrix::identity(1, 1));
        let (lo, hi) = marginal_intervals(&g, &basis, &[0.0, 0.5]).unwrap();
        assert_eq!((lo[0], hi[0]), (0.0, 0.0));
        assert_relative_eq!(hi[1], 1.96 * SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(hi[1], 2.7719, epsilon = 1e-4);
        assert_relative_eq!(lo[1], -hi[1]);

        let basis = SpectralBasis::dirichlet_1d(2).unwrap();
        let g = CoefficientGaussian {
            mean: DVector::from_vec(vec![0.3, -0.1]),
            cov: DMatrix::zeros(2, 2),
        };
        let (lo, hi) = marginal_intervals(&g, &basis, &[0.3]).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn mmse_is_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let map = random_map(&mut rng, 3, 2);
            let s1 = random_psd(&mut rng, 5, 0.05);
            let s2 = random_psd(&mut rng, 5, 0.05);
            let mid = JointGaussian::new((&s1 + &s2) * 0.5).unwrap();
            let j1 = mmse_value(&JointGaussian::new(s1).unwrap(), &map).unwrap();
            let j2 = mmse_value(&JointGaussian::new(s2).unwrap(), &map).unwrap();
            assert!(mmse_value(&mid, &map).unwrap() >= 0.5 * (j1 + j2) - 1e-9);
        }
    }

    #[test]
    fn conditional_mean_is_optimal_and_shrinks_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let map = random_map(&mut rng, 3, 2);
        let s = JointGaussian::new(random_psd(&mut rng, 5, 0.1)).unwrap();
        let est = optimal_affine_estimator(&s, &map).unwrap();
        let j = mmse_value(&s, &map).unwrap();
        assert_relative_eq!(bayes_risk(&est, &s, &map).unwrap(), j, max_relative = 1e-12);
        for _ in 0..100 {
            let other = AffineEstimator::new(
                est.gain() + DMatrix::from_fn(3, 2, |_, _| rng.random_range(-0.5..0.5)),
            );
            assert!(bayes_risk(&other, &s, &map).unwrap() >= j);
        }
        let prior = prior_coefficient_gaussian(&s, &map).unwrap();
        let post = posterior_coefficient_gaussian(&s, &map, &[0.1, 0.2]).unwrap();
        assert!(post.cov.trace() <= prior.cov.trace() + 1e-10);
        assert!(SortedEigen::new(&post.cov).min() > -1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let map = random_map(&mut rng, 3, 2);
            let sigma = random_psd(&mut rng, 5, 0.3);
            let grad = mmse_gradient(&JointGaussian::new(sigma.clone()).unwrap(), &map).unwrap();
            let h = 1e-5;
            let mut worst = 0.0_f64;
            for i in 0..5 {
                for j in i..5 {
                    let mut bump = DMatrix::zeros(5, 5);
                    bump[(i, j)] = h;
                    bump[(j, i)] = h;
                    let f = |m: DMatrix<f64>| {
                        mmse_value(&JointGaussian::new_unchecked(m), &map).unwrap()
                    };
                    let fd = (f(&sigma + &bump) - f(&sigma - &bump)) / (2.0 * h);
                    let analytic = if i == j {
                        grad[(i, i)]
                    } else {
                        2.0 * grad[(i, j)]
                    };
                    worst = worst.max((fd - analytic).abs());
                }
            }
            assert!(worst < 1e-5, "max fd error {worst}");
        }
    }
}
