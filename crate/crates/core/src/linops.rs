//! Linearized operators `L+ = -Δ + 1 - (1+4/N) Q^{4/N}` and `L- = -Δ + 1 - Q^{4/N}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Serialize;

use crate::dense::{constrained_min_eigenvalue, operator_matrix, solve_even};
use crate::error::Result;
use crate::field::ComplexField;
use crate::grid::SpatialGrid;
use crate::profiles::{critical_power, ProfileBundle};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    Lplus,
    Lminus,
}

#[derive(Clone, Debug)]
pub struct LinearizedOperator<T: Real> {
    pub kind: OperatorKind,
    pub grid: SpatialGrid<T>,
    /// `c Q^{4/N}` with `c = 1 + 4/N` for `L+` and `c = 1` for `L-`.
    pub potential_profile: ComplexField<T>,
}

impl<T: Real> LinearizedOperator<T> {
    pub fn new(kind: OperatorKind, q: &ComplexField<T>) -> Self {
        let p = critical_power::<T>(q.grid().dim());
        let c = match kind {
            OperatorKind::Lplus => T::one() + p,
            OperatorKind::Lminus => T::one(),
        };
        let potential_profile = q.map(|_, z| Complex::new(c * z.norm().powf(p), T::zero()));
        Self {
            kind,
            grid: q.grid().clone(),
            potential_profile,
        }
    }

    pub fn apply(&self, f: &ComplexField<T>) -> Result<ComplexField<T>> {
        f.same_grid(&self.potential_profile)?;
        let lap = f.laplacian()?;
        let mut out = f.zip_map(&lap, |a, l| a - l)?;
        out = out.zip_map(&self.potential_profile.zip_map(f, |w, a| a * w.re)?, |a, b| a - b)?;
        Ok(out)
    }

    fn apply_values(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let lap = self.grid.laplacian(v);
        v.iter()
            .zip(lap.iter())
            .zip(self.potential_profile.values())
            .map(|((&a, &l), w)| a - l - a * w.re)
            .collect()
    }
}

/// Radial solution of `L+ ρ = |y|² Q` and its residual `||L+ρ - |y|²Q||_2`.
pub fn solve_rho<T: Real>(q: &ComplexField<T>) -> Result<(ComplexField<T>, T)> {
    let op = LinearizedOperator::new(OperatorKind::Lplus, q);
    let rhs = q.map(|x, z| z * x * x);
    let sol = solve_even(q.grid(), |v| op.apply_values(v), rhs.values())?;
    let rho = ComplexField::from_real(q.grid(), &sol)?;
    let res = (&op.apply(&rho)? - &rhs).l2();
    Ok((rho, res))
}

/// Residuals of the algebraic identities satisfied by `L±` and the profiles.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityResiduals<T> {
    /// `||L- Q||`
    pub lminus_q: T,
    /// `||L+ ΛQ + 2Q||`
    pub lplus_lam_q: T,
    /// `||L- |y|²Q + 4ΛQ||`
    pub lminus_y2_q: T,
    /// `||L+ ρ - |y|²Q||`
    pub lplus_rho: T,
    /// `||L- (yQ) + 2∇Q||`
    pub lminus_y_q: T,
    /// `||L- (yQ) + ∇Q||`, the translation identity with unit coefficient; equals `||∇Q||`
    pub lminus_y_q_unit: T,
}

impl<T: Real> IdentityResiduals<T> {
    pub fn max(&self) -> T {
        self.lminus_q
            .max(self.lplus_lam_q)
            .max(self.lminus_y2_q)
            .max(self.lplus_rho)
            .max(self.lminus_y_q)
    }

    /// The five identities in a fixed order with their names.
    pub fn named(&self) -> [(&'static str, T); 5] {
        [
            ("L-Q", self.lminus_q),
            ("L+LamQ+2Q", self.lplus_lam_q),
            ("L-(|y|^2Q)+4LamQ", self.lminus_y2_q),
            ("L+rho-|y|^2Q", self.lplus_rho),
            ("L-(yQ)+2gradQ", self.lminus_y_q),
        ]
    }
}

pub fn identity_residuals<T: Real>(b: &ProfileBundle<T>) -> Result<IdentityResiduals<T>> {
    let lp = LinearizedOperator::new(OperatorKind::Lplus, &b.q);
    let lm = LinearizedOperator::new(OperatorKind::Lminus, &b.q);
    let lminus_q = lm.apply(&b.q)?.l2();
    let lplus_lam_q = (&lp.apply(&b.lam_q)? + &b.q.scale_real(T::lit(2.0))).l2();
    let lminus_y2_q = (&lm.apply(&b.y2_q)? + &b.lam_q.scale_real(T::lit(4.0))).l2();
    let lplus_rho = (&lp.apply(&b.rho)? - &b.y2_q).l2();
    let lminus_y_q = if b.grid.is_radial() {
        // L-(x_j Q) + 2∂_j Q = x_j g(r) with g = -Δ_{N+2} Q + Q - Q^{1+4/N} + 2Q'/r
        let grid = &b.grid;
        let lap = grid.laplacian_in_dim(b.q.values(), grid.dim() + 2);
        let g: Vec<_> = b
            .q
            .values()
            .iter()
            .zip(lap.iter())
            .zip(lm.potential_profile.values())
            .zip(b.grad_q[0].values())
            .zip(grid.coords())
            .map(|((((&q, &l), w), &dq), &r)| (q - l - q * w.re + dq * T::lit(2.0) / r) * r)
            .collect();
        ComplexField::new(grid.clone(), g)?.l2()
    } else {
        (&lm.apply(&b.y_q[0])? + &b.grad_q[0].scale_real(T::lit(2.0))).l2()
    };
    // the unit-coefficient variant differs from the exact identity by exactly ∇Q
    let grad_norm = b.grad_q[0].l2();
    let lminus_y_q_unit = if b.grid.is_radial() {
        grad_norm
    } else {
        (&lm.apply(&b.y_q[0])? + &b.grad_q[0]).l2()
    };
    Ok(IdentityResiduals {
        lminus_q,
        lplus_lam_q,
        lminus_y2_q,
        lplus_rho,
        lminus_y_q,
        lminus_y_q_unit,
    })
}

/// Coercivity witness for the quadratic form `<L+ Re u, Re u> + <L- Im u, Im u>`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MuEstimate {
    /// `min(mu_plus, mu_minus)`
    pub mu: f64,
    /// smallest eigenvalue of `L+` against the H¹ Gram matrix on `{Q, yQ, |y|²Q}^⊥`
    pub mu_plus: f64,
    /// smallest eigenvalue of `L-` against the H¹ Gram matrix on `{ρ}^⊥`
    pub mu_minus: f64,
    /// smallest eigenvalue of `L+` without constraints (negative)
    pub unconstrained_plus: f64,
}

/// Estimates the coercivity constant by projected generalized eigenproblems.
///
/// Both forms are assembled in their energy representation
/// `D^T W D + W - W diag(c Q^{4/N})`, which is symmetric by construction;
/// `W` holds the quadrature weights and `D` the spectral derivative.
/// Radial meshes only see radial perturbations.
pub fn estimate_mu<T: Real>(b: &ProfileBundle<T>) -> Result<MuEstimate> {
    let grid = &b.grid;
    let n = grid.points();
    let w = DVector::from_iterator(n, grid.weights().iter().map(|v| v.f64()));
    let d = operator_matrix(grid, |v| grid.derivative(v));
    let wd = DMatrix::from_fn(n, n, |i, j| w[i] * d[(i, j)]);
    let grad = d.transpose() * wd;
    let mass = DMatrix::from_diagonal(&w);
    let gram = &grad + &mass;
    let form = |kind| {
        let op = LinearizedOperator::new(kind, &b.q);
        let pot = DVector::from_iterator(n, op.potential_profile.values().iter().zip(w.iter()).map(|(z, wi)| z.re.f64() * wi));
        &gram - DMatrix::from_diagonal(&pot)
    };
    let a_plus = form(OperatorKind::Lplus);
    let a_minus = form(OperatorKind::Lminus);
    let constraint = |f: &ComplexField<T>| DVector::from_iterator(n, f.values().iter().zip(w.iter()).map(|(z, wi)| z.re.f64() * wi));
    let mut plus_constraints = vec![constraint(&b.q), constraint(&b.y2_q)];
    if !grid.is_radial() {
        plus_constraints.push(constraint(&b.y_q[0]));
    }
    let mu_plus = constrained_min_eigenvalue(&a_plus, &gram, &plus_constraints)?;
    let mu_minus = constrained_min_eigenvalue(&a_minus, &gram, &[constraint(&b.rho)])?;
    let unconstrained_plus = constrained_min_eigenvalue(&a_plus, &gram, &[])?;
    Ok(MuEstimate {
        mu: mu_plus.min(mu_minus),
        mu_plus,
        mu_minus,
        unconstrained_plus,
    })
}
