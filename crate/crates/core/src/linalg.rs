//! Small dense symmetric-matrix helpers shared by the model, the Gelbrich
//! geometry and the analysis code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues in ascending
/// order; column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Entries below this fraction of the largest one are treated as zero. This
/// is far below the backward error of any symmetric eigensolver.
const FLUSH_RELATIVE: f64 = 1e-32;

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        // nalgebra's implicit QR returns NaN for matrices with exactly zero
        // rows and for strongly graded ones, both of which the vanishing
        // heat-semigroup multipliers produce. Negligible entries are flushed
        // and zero rows are split off before decomposing the rest.
        let n = m.nrows();
        let scale = m.amax();
        let mut work = symmetrize(m);
        if scale > 0.0 && scale.is_finite() {
            work /= scale;
        }
        work.apply(|v| {
            if v.abs() < FLUSH_RELATIVE {
                *v = 0.0
            }
        });
        let unscale = if scale > 0.0 && scale.is_finite() {
            scale
        } else {
            1.0
        };
        let active: Vec<usize> = (0..n)
            .filter(|&i| work.row(i).iter().any(|v| *v != 0.0))
            .collect();
        let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| {
            work[(active[i], active[j])]
        });
        // (value, embedded eigenvector) pairs; inactive rows are null directions
        let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(n);
        if !active.is_empty() {
            let eig = SymmetricEigen::new(sub);
            for k in 0..active.len() {
                let mut v = DVector::zeros(n);
                for (r, &row) in active.iter().enumerate() {
                    v[row] = eig.eigenvectors[(r, k)];
                }
                pairs.push((eig.eigenvalues[k] * unscale, v));
            }
        }
        let mut is_active = vec![false; n];
        for &i in &active {
            is_active[i] = true;
        }
        for (i, _) in is_active.iter().enumerate().filter(|(_, a)| !**a) {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            pairs.push((0.0, v));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
        let mut vectors = DMatrix::zeros(n, n);
        for (j, (_, v)) in pairs.iter().enumerate() {
            vectors.set_column(j, v);
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        let mut left = self.vectors.clone();
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col *= scaled[j];
        }
        symmetrize(&(left * self.vectors.transpose()))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius inner product `⟨a, b⟩ = tr(aᵀ b)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Checks that `m` is square and symmetric up to a relative tolerance.
pub fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{what} has non-finite entries"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if asymmetry(m) > 1e-10 * scale {
        return invalid(format!("{what} is not symmetric"));
    }
    Ok(())
}

/// Symmetric, and minimum eigenvalue no smaller than `-1e-10 * trace`.
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<SortedEigen> {
    check_symmetric(m, what)?;
    let eig = SortedEigen::new(m);
    let floor = -1e-10 * m.trace().abs().max(f64::MIN_POSITIVE);
    if m.nrows() > 0 && eig.min() < floor {
        return invalid(format!(
            "{what} is not positive semidefinite (min eigenvalue {:e})",
            eig.min()
        ));
    }
    Ok(eig)
}

/// Composite trapezoid weights for `points` equispaced nodes on [0, 1].
pub fn trapezoid_weights(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let h = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i == 0 || i == points - 1 {
                h / 2.0
            } else {
                h
            }
        })
        .collect()
}

pub fn linspace01(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let eig = SortedEigen::new(&m);
        assert!(eig.values[0] <= eig.values[1] && eig.values[1] <= eig.values[2]);
        let back = eig.map(|v| v);
        assert!((back - &m).amax() < 1e-12);
    }

    #[test]
    fn negligible_entries_and_zero_rows_are_handled() {
        let mut m = DMatrix::identity(4, 4) * 0.5;
        m[(0, 3)] = 1e-310;
        m[(3, 0)] = 1e-310;
        m[(2, 2)] = 3e-320;
        m[(1, 1)] = 0.0;
        let eig = SortedEigen::new(&m);
        assert!(eig.values.iter().all(|v| v.is_finite()));
        assert!((eig.max() - 0.5).abs() < 1e-15);
        assert_eq!(eig.min(), 0.0);
        let back = eig.map(|v| v);
        assert!((back - &m).amax() < 1e-15);
        let tiny = SortedEigen::new(&(DMatrix::identity(2, 2) * 1e-200));
        assert!((tiny.max() - 1e-200).abs() < 1e-214);
        assert_eq!(
            SortedEigen::new(&DMatrix::zeros(3, 3)).values,
            DVector::zeros(3)
        );
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_psd(&m, "m").is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(check_symmetric(&m, "m").is_err());
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let w = trapezoid_weights(11);
        let xs = linspace01(11);
        let integral: f64 = w.iter().zip(&xs).map(|(w, x)| w * x).sum();
        assert!((integral - 0.5).abs() < 1e-15);
    }
}
