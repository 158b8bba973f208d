//! The weighted Gelbrich ball around the nominal covariance and the linear
//! maximization oracle used by Frank-Wolfe.
//!
//! The weight matrix `W = diag(w_1, …, w_N, 1, …, 1)` charges transport of the
//! input coefficients with the roughness weights and leaves the noise
//! coordinates unweighted. After the substitution `S = W^{1/2} Σ W^{1/2}` the
//! ball becomes an ordinary Bures-Wasserstein ball around `S0`, and the
//! maximizer of `⟨D, Σ⟩` is the push-forward `S*(γ) = L S0 L` with
//! `L = γ (γI − D̃)⁻¹`, `D̃ = W^{-1/2} D W^{-1/2}`, for the unique `γ` placing
//! it on the sphere.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_psd, inner, symmetrize, SortedEigen};
use crate::model::JointGaussian;

/// Doublings allowed while searching for an upper bisection bracket.
pub const MAX_BRACKET_DOUBLINGS: usize = 200;

#[derive(Debug, Clone)]
pub struct GelbrichBall {
    sigma0: DMatrix<f64>,
    weights: DVector<f64>,
    delta: f64,
    sqrt_sigma0: DMatrix<f64>,
    /// `W^{1/2} Σ0 W^{1/2}`
    s0: DMatrix<f64>,
    sqrt_w: DVector<f64>,
}

impl GelbrichBall {
    /// `coeff_weights` holds `w_1..w_N`; the remaining coordinates of `sigma0`
    /// are noise and get weight one.
    pub fn new(sigma0: &JointGaussian, coeff_weights: &[f64], delta: f64) -> Result<Self> {
        let dim = sigma0.dim();
        if coeff_weights.len() > dim {
            return invalid(format!(
                "{} weights for a {dim}-dimensional covariance",
                coeff_weights.len()
            ));
        }
        if coeff_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return invalid("transport weights must be positive and finite");
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return invalid(format!(
                "radius must be non-negative and finite, got {delta}"
            ));
        }
        let eig = SortedEigen::new(sigma0.matrix());
        if !(eig.min() > 0.0) {
            return invalid(format!(
                "nominal covariance must be positive definite, smallest eigenvalue {}",
                eig.min()
            ));
        }
        let weights = DVector::from_fn(dim, |i, _| coeff_weights.get(i).copied().unwrap_or(1.0));
        let sqrt_w = weights.map(f64::sqrt);
        let s0 = scale_both(sigma0.matrix(), &sqrt_w);
        Ok(Self {
            sigma0: sigma0.matrix().clone(),
            weights,
            delta,
            sqrt_sigma0: eig.map(|v| v.max(0.0).sqrt()),
            s0,
            sqrt_w,
        })
    }

    /// Ball with radius given as `δ²`.
    pub fn from_delta_sq(
        sigma0: &JointGaussian,
        coeff_weights: &[f64],
        delta_sq: f64,
    ) -> Result<Self> {
        if !(delta_sq >= 0.0) {
            return invalid(format!(
                "squared radius must be non-negative, got {delta_sq}"
            ));
        }
        Self::new(sigma0, coeff_weights, delta_sq.sqrt())
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_sq(&self) -> f64 {
        self.delta * self.delta
    }

    pub fn dim(&self) -> usize {
        self.sigma0.nrows()
    }

    fn check_dim(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return invalid(format!(
                "{what} is {}x{}, ball dimension is {}",
                m.nrows(),
                m.ncols(),
                self.dim()
            ));
        }
        Ok(())
    }
}

/// `diag(s) m diag(s)`
fn scale_both(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s[i] * m[(i, j)] * s[j])
}

/// Unique symmetric PSD square root; tiny negative eigenvalues are clipped.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(check_psd(sigma, "matrix")?.map(|v| v.max(0.0).sqrt()))
}

fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    SortedEigen::new(m)
        .values
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

/// Squared weighted Gelbrich distance between centered Gaussians with
/// covariances `sigma` and `sigma0`.
pub fn weighted_gelbrich_sq(
    sigma: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<f64> {
    if sigma.shape() != sigma0.shape() || weights.len() != sigma.nrows() {
        return invalid("covariances and weights must have matching dimensions");
    }
    let root0 = psd_sqrt(sigma0)?;
    check_psd(sigma, "covariance")?;
    Ok(distance_sq_with_root(sigma, sigma0, &root0, weights))
}

fn distance_sq_with_root(
    sigma: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    root0: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> f64 {
    let w_tr = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| weights[i] * m[(i, i)]).sum::<f64>();
    let wsw = scale_both(sigma, weights);
    let inner_m = root0 * wsw * root0;
    (w_tr(sigma) + w_tr(sigma0) - 2.0 * trace_sqrt(&inner_m)).max(0.0)
}

/// `tr(WΣ) + tr(WΣ0) − 2 tr((√Σ0 W Σ W √Σ0)^{1/2})`.
pub fn gelbrich_distance_sq(sigma: &DMatrix<f64>, ball: &GelbrichBall) -> Result<f64> {
    ball.check_dim(sigma, "covariance")?;
    check_psd(sigma, "covariance")?;
    Ok(distance_sq_with_root(
        sigma,
        &ball.sigma0,
        &ball.sqrt_sigma0,
        &ball.weights,
    ))
}

pub fn contains(sigma: &DMatrix<f64>, ball: &GelbrichBall, tol: f64) -> bool {
    match gelbrich_distance_sq(sigma, ball) {
        Ok(d) => d <= ball.delta_sq() + tol,
        Err(_) => false,
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub sigma: DMatrix<f64>,
    /// Dual multiplier of the radius constraint; infinite for a zero radius.
    pub gamma: f64,
    /// Squared distance of `sigma` to the center, as seen by the bisection.
    pub distance_sq: f64,
}

/// Maximizes `⟨D, Σ⟩` over the ball.
///
/// The bisection stops once the distance of the candidate is within
/// `bisect_tol · δ²` of `δ²` from below, or when the bracket can no longer
/// shrink in floating point. The returned candidate always lies on the
/// feasible side.
pub fn linear_oracle(
    d: &DMatrix<f64>,
    ball: &GelbrichBall,
    bisect_tol: f64,
) -> Result<OracleSolution> {
    ball.check_dim(d, "direction")?;
    if !(bisect_tol > 0.0) {
        return invalid(format!(
            "bisection tolerance must be positive, got {bisect_tol}"
        ));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return invalid("direction has non-finite entries");
    }
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateGradient);
    }
    if ball.delta == 0.0 {
        return Ok(OracleSolution {
            sigma: ball.sigma0.clone(),
            gamma: f64::INFINITY,
            distance_sq: 0.0,
        });
    }

    let inv_sqrt_w = ball.sqrt_w.map(|v| 1.0 / v);
    let d_tilde = symmetrize(&scale_both(d, &inv_sqrt_w));
    let eig = SortedEigen::new(&d_tilde);
    let lam_max = eig.max();
    if eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence(
            "eigendecomposition of the direction failed".into(),
        ));
    }
    if !(lam_max > 0.0) {
        return Err(Error::DegenerateGradient);
    }
    let q = &eig.vectors;
    let rotated = q.transpose() * &ball.s0 * q;
    let s: Vec<f64> = (0..rotated.nrows())
        .map(|i| rotated[(i, i)].max(0.0))
        .collect();
    let lams: Vec<f64> = eig.values.iter().copied().collect();

    // distance²(S*(γ), S0) = Σ_i (λ_i / (γ − λ_i))² s_i, strictly decreasing
    let dist = |gamma: f64| -> f64 {
        lams.iter()
            .zip(&s)
            .map(|(&l, &si)| {
                let r = l / (gamma - l);
                r * r * si
            })
            .sum()
    };

    let target = ball.delta_sq();
    let mut lo = lam_max * (1.0 + 1e-12) + 1e-12;
    let (mut hi, mut f_hi) = if dist(lo) <= target {
        // the sphere is not reachable inside the bracket; lo itself is feasible
        (lo, dist(lo))
    } else {
        let mut step = 1.0;
        let mut hi = lo + step;
        let mut f_hi = dist(hi);
        let mut doublings = 0;
        while f_hi >= target {
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS {
                return Err(Error::NoConvergence(format!(
                    "no upper bracket for the oracle multiplier after {MAX_BRACKET_DOUBLINGS} doublings"
                )));
            }
            step *= 2.0;
            hi = lo + step;
            f_hi = dist(hi);
        }
        (hi, f_hi)
    };

    if cfg!(debug_assertions) && hi > lo {
        let samples: Vec<f64> = (0..10)
            .map(|k| dist(lo + (hi - lo) * (k as f64 + 0.5) / 10.0))
            .collect();
        debug_assert!(
            samples.windows(2).all(|w| w[1] <= w[0]),
            "oracle distance is not decreasing on the bracket [{lo:e}, {hi:e}]: {samples:?}"
        );
    }

    while hi > lo && target - f_hi > bisect_tol * target {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = dist(mid);
        if f_mid > target {
            lo = mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }

    let gamma = hi;
    let l = eig.map(|v| gamma / (gamma - v));
    let s_star = symmetrize(&(&l * &ball.s0 * &l));
    let sigma = symmetrize(&scale_both(&s_star, &inv_sqrt_w));
    Ok(OracleSolution {
        sigma,
        gamma,
        distance_sq: f_hi,
    })
}

/// `⟨D, Σ⟩`, exposed for callers comparing oracle output against candidates.
pub fn linear_value(d: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    inner(d, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_ball(w: f64, s0: f64, delta: f64) -> GelbrichBall {
        let sigma0 = JointGaussian::new(DMatrix::from_element(1, 1, s0)).unwrap();
        GelbrichBall::new(&sigma0, &[w], delta).unwrap()
    }

    fn random_pd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn scalar_distances() {
        let b = scalar_ball(1.0, 1.0, 0.5);
        assert_relative_eq!(
            gelbrich_distance_sq(&DMatrix::from_element(1, 1, 4.0), &b).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            gelbrich_distance_sq(&DMatrix::from_element(1, 1, 1.0), &b).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        let b4 = scalar_ball(4.0, 1.0, 0.5);
        assert_relative_eq!(
            gelbrich_distance_sq(&DMatrix::from_element(1, 1, 4.0), &b4).unwrap(),
            4.0,
            epsilon = 1e-13
        );
        assert!(gelbrich_distance_sq(&DMatrix::identity(2, 2), &b).is_err());
    }

    #[test]
    fn membership() {
        let zero = scalar_ball(1.0, 1.0, 0.0);
        assert!(contains(&DMatrix::from_element(1, 1, 1.0), &zero, 0.0));
        let b = scalar_ball(1.0, 1.0, 0.5);
        assert!(!contains(&DMatrix::from_element(1, 1, 4.0), &b, 1e-9));
        // (sqrt(2.25) - 1)^2 = 0.25 exactly
        assert!(contains(&DMatrix::from_element(1, 1, 2.25), &b, 0.0));
    }

    #[test]
    fn scalar_oracle_closed_forms() {
        let b = scalar_ball(1.0, 1.0, 0.5);
        for d in [0.01, 1.0, 300.0] {
            let sol = linear_oracle(&DMatrix::from_element(1, 1, d), &b, 1e-12).unwrap();
            assert_relative_eq!(sol.sigma[(0, 0)], 2.25, epsilon = 1e-9);
        }
        let b4 = scalar_ball(4.0, 1.0, 0.5);
        let sol = linear_oracle(&DMatrix::from_element(1, 1, 1.0), &b4, 1e-12).unwrap();
        assert_relative_eq!(sol.sigma[(0, 0)], 1.5625, epsilon = 1e-9);
    }

    #[test]
    fn oracle_edge_cases() {
        let b = scalar_ball(1.0, 1.0, 0.5);
        assert_eq!(
            linear_oracle(&DMatrix::zeros(1, 1), &b, 1e-10).unwrap_err(),
            Error::DegenerateGradient
        );
        let zero = scalar_ball(1.0, 1.0, 0.0);
        let sol = linear_oracle(&DMatrix::from_element(1, 1, 1.0), &zero, 1e-10).unwrap();
        assert_eq!(sol.sigma[(0, 0)], 1.0);
        assert!(sol.gamma.is_infinite());
        assert!(linear_oracle(&DMatrix::identity(2, 2), &b, 1e-10).is_err());
    }

    #[test]
    fn bracket_failure_is_reported() {
        // a tiny radius against a huge direction needs more than 200 doublings
        let b = scalar_ball(1.0, 1.0, 1e-200);
        let err = linear_oracle(&DMatrix::from_element(1, 1, 1e200), &b, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoConvergence(_)));
    }

    #[test]
    fn psd_sqrt_examples() {
        assert_eq!(
            psd_sqrt(&DMatrix::identity(3, 3)).unwrap(),
            DMatrix::identity(3, 3)
        );
        let r = psd_sqrt(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert_relative_eq!(
            r,
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            epsilon = 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let a = &m * m.transpose();
            let r = psd_sqrt(&a).unwrap();
            assert!((&r * &r - &a).norm() < 1e-9);
        }
        assert!(psd_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn oracle_lands_on_sphere_and_beats_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let sigma0 = JointGaussian::new(random_pd(&mut rng, n)).unwrap();
            let w: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.5..5.0)).collect();
            let ball = GelbrichBall::new(&sigma0, &w, rng.random_range(0.05..1.0)).unwrap();
            let root = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let d = &root * root.transpose();
            let sol = linear_oracle(&d, &ball, 1e-10).unwrap();
            let dist = gelbrich_distance_sq(&sol.sigma, &ball).unwrap();
            assert!(contains(&sol.sigma, &ball, 1e-6));
            assert!(
                dist >= ball.delta_sq() - 1e-6,
                "{dist} vs {}",
                ball.delta_sq()
            );
            assert!(inner(&d, &sol.sigma) >= inner(&d, ball.sigma0()));
        }
    }

    #[test]
    fn substitution_is_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 4;
            let sigma0 = random_pd(&mut rng, n);
            let w: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..5.0)).collect();
            let delta = rng.random_range(0.1..1.0);
            let weighted =
                GelbrichBall::new(&JointGaussian::new(sigma0.clone()).unwrap(), &w, delta).unwrap();
            let sw = weighted.weights().map(f64::sqrt);
            let plain = GelbrichBall::new(
                &JointGaussian::new(scale_both(&sigma0, &sw)).unwrap(),
                &[],
                delta,
            )
            .unwrap();
            let root = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let d = &root * root.transpose();
            let a = linear_oracle(&d, &weighted, 1e-13).unwrap();
            let b = linear_oracle(&scale_both(&d, &sw.map(|v| 1.0 / v)), &plain, 1e-13).unwrap();
            assert!((scale_both(&a.sigma, &sw) - &b.sigma).norm() < 1e-9);
        }
    }

    #[test]
    fn distance_matches_explicit_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s0 = random_pd(&mut rng, 3);
        let s = random_pd(&mut rng, 3);
        let w = DVector::from_vec(vec![2.0, 3.0, 1.0]);
        let direct = {
            let root0 = psd_sqrt(&s0).unwrap();
            let wm = DMatrix::from_diagonal(&w);
            let inner_m = &root0 * &wm * &s * &wm * &root0;
            (&wm * &s).trace() + (&wm * &s0).trace() - 2.0 * psd_sqrt(&inner_m).unwrap().trace()
        };
        assert_relative_eq!(
            weighted_gelbrich_sq(&s, &s0, &w).unwrap(),
            direct,
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(&mut rng, n);
            let b = random_pd(&mut rng, n);
            let w = DVector::from_fn(n, |_, _| rng.random_range(0.2..4.0));
            let ab = weighted_gelbrich_sq(&a, &b, &w).unwrap();
            let ba = weighted_gelbrich_sq(&b, &a, &w).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
        }
    }
}
