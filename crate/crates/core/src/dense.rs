//! Dense double-precision matrices for grid operators.
//!
//! Linear solves and eigenproblems always run in `f64` regardless of the
//! field scalar; the generic samples are converted at the boundary.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::{Geometry, SpatialGrid};
use crate::scalar::Real;

/// Matrix of a real-to-real linear grid operator, built column by column.
pub(crate) fn operator_matrix<T, F>(grid: &SpatialGrid<T>, apply: F) -> DMatrix<f64>
where
    T: Real,
    F: Fn(&[Complex<T>]) -> Vec<Complex<T>>,
{
    let n = grid.points();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![Complex::new(T::zero(), T::zero()); n];
    for j in 0..n {
        e[j] = Complex::new(T::one(), T::zero());
        let col = apply(&e);
        for (i, z) in col.iter().enumerate() {
            m[(i, j)] = z.re.f64();
        }
        e[j] = Complex::new(T::zero(), T::zero());
    }
    m
}

/// Index of the mirror node `-x_j` on the periodic line.
pub(crate) fn mirror(n: usize, j: usize) -> usize {
    (n - j) % n
}

/// Representative nodes of the even subspace: `x_0 = -R` and `x >= 0`.
pub(crate) fn even_nodes(n: usize) -> Vec<usize> {
    let mut v = vec![0];
    v.extend(n / 2..n);
    v
}

/// Solves `A u = rhs` for a parity-preserving operator restricted to even
/// functions (periodic line) or directly (radial mesh).
pub(crate) fn solve_even<T, F>(grid: &SpatialGrid<T>, apply: F, rhs: &[Complex<T>]) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&[Complex<T>]) -> Vec<Complex<T>>,
{
    let n = grid.points();
    match grid.geometry() {
        Geometry::Radial => {
            let a = operator_matrix(grid, &apply);
            let b = DVector::from_iterator(n, rhs.iter().map(|z| z.re.f64()));
            let x = lu_solve(a, b)?;
            Ok(x.iter().map(|&v| T::lit(v)).collect())
        }
        Geometry::PeriodicLine => {
            let nodes = even_nodes(n);
            let k = nodes.len();
            let mut a = DMatrix::zeros(k, k);
            let mut e = vec![Complex::new(T::zero(), T::zero()); n];
            for (col, &j) in nodes.iter().enumerate() {
                e[j] = Complex::new(T::one(), T::zero());
                e[mirror(n, j)] = Complex::new(T::one(), T::zero());
                let out = apply(&e);
                for (row, &i) in nodes.iter().enumerate() {
                    a[(row, col)] = out[i].re.f64();
                }
                e[j] = Complex::new(T::zero(), T::zero());
                e[mirror(n, j)] = Complex::new(T::zero(), T::zero());
            }
            let b = DVector::from_iterator(k, nodes.iter().map(|&i| rhs[i].re.f64()));
            let c = lu_solve(a, b)?;
            let mut u = vec![T::zero(); n];
            for (idx, &j) in nodes.iter().enumerate() {
                u[j] = T::lit(c[idx]);
                u[mirror(n, j)] = T::lit(c[idx]);
            }
            Ok(u)
        }
    }
}

pub(crate) fn lu_solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::IllConditioned { condition });
    }
    lu.solve(&b).ok_or(Error::IllConditioned { condition })
}

/// Smallest eigenvalue of the pencil `(A, B)` restricted to the subspace
/// `{u : C^T u = 0}`; `A` symmetric, `B` symmetric positive definite.
pub(crate) fn constrained_min_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>, constraints: &[DVector<f64>]) -> Result<f64> {
    let n = a.nrows();
    let z = if constraints.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let k = constraints.len();
        let c = DMatrix::from_columns(constraints);
        let qr = c.qr();
        let mut qt = DMatrix::identity(n, n);
        qr.q_tr_mul(&mut qt);
        // rows k.. of Q^T span the orthogonal complement of range(C)
        qt.rows(k, n - k).transpose()
    };
    let az = z.transpose() * a * &z;
    let bz = z.transpose() * b * &z;
    let az = (&az + az.transpose()) * 0.5;
    let bz = (&bz + bz.transpose()) * 0.5;
    let chol = bz
        .cholesky()
        .ok_or_else(|| Error::Eigen("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&az)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigenvalues();
    if eig.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(eig.iter().cloned().fold(f64::INFINITY, f64::min))
}
