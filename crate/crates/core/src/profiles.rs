//! Ground state `Q` and the fixed profiles built from it.

use std::collections::BTreeMap;

use nalgebra::DVector;
use num_complex::Complex;
use serde::Serialize;

use crate::dense::operator_matrix;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::grid::{Geometry, SpatialGrid};
use crate::linops::solve_rho;
use crate::scalar::Real;

/// Mass-critical power `4/N`.
pub fn critical_power<T: Real>(dim: usize) -> T {
    T::lit(4.0) / T::count(dim)
}

/// Residual `|| -ΔQ + Q - Q^{1+4/N} ||_2`.
pub fn ground_state_residual<T: Real>(q: &ComplexField<T>) -> Result<T> {
    let p = critical_power::<T>(q.grid().dim());
    let lap = q.laplacian()?;
    let r = q.zip_map(&lap, |z, l| -l + z - z * z.norm().powf(p))?;
    Ok(r.l2())
}

/// Ground state with its residual history.
#[derive(Clone, Debug)]
pub struct GroundState<T: Real> {
    pub q: ComplexField<T>,
    pub residuals: Vec<T>,
}

const MAX_ITER: usize = 3000;

/// Solves `-ΔQ + Q - Q^{1+4/N} = 0` by Petviashvili iteration.
pub fn solve_ground_state<T: Real>(grid: &SpatialGrid<T>, tol: T) -> Result<ComplexField<T>> {
    Ok(solve_ground_state_with_history(grid, tol)?.q)
}

pub fn solve_ground_state_with_history<T: Real>(grid: &SpatialGrid<T>, tol: T) -> Result<GroundState<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let p = critical_power::<T>(grid.dim());
    // stabilizing exponent for a nonlinearity homogeneous of degree 1 + p
    let gamma = (T::one() + p) / p;
    let inverse = HelmholtzInverse::new(grid)?;
    let mut q: Vec<T> = grid.coords().iter().map(|&x| T::lit(1.5) / x.cosh()).collect();
    let mut residuals = Vec::new();
    let mut best = T::infinity();
    let mut since_best = 0usize;
    let mut converged_at = None;
    for it in 0..MAX_ITER {
        let field = ComplexField::from_real(grid, &q)?;
        let res = ground_state_residual(&field)?;
        residuals.push(res);
        if res < best * T::lit(0.99) {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if res < tol && converged_at.is_none() {
            converged_at = Some(it);
        }
        // once below tolerance keep polishing until the residual floor is reached
        if let Some(c) = converged_at {
            if since_best >= 5 || it >= c + 60 {
                return Ok(GroundState { q: field, residuals });
            }
        } else if since_best >= 100 {
            break;
        }
        let nl: Vec<T> = q.iter().map(|&v| v.abs().powf(T::one() + p)).collect();
        let lap = grid.laplacian(field.values());
        let w = grid.weights();
        let mut num = T::zero();
        let mut den = T::zero();
        for j in 0..q.len() {
            num = num + w[j] * (q[j] - lap[j].re) * q[j];
            den = den + w[j] * nl[j] * q[j];
        }
        let m = num / den;
        let scale = m.powf(gamma);
        let solved = inverse.apply(&nl)?;
        q = solved.into_iter().map(|v| (scale * v).abs()).collect();
    }
    let last = residuals.last().map(|r| r.f64()).unwrap_or(f64::NAN);
    Err(Error::NoConvergence {
        what: "Petviashvili iteration",
        iterations: residuals.len(),
        last,
        history: residuals.iter().map(|r| r.f64()).collect(),
    })
}

/// `(1 - Δ)^{-1}` on real samples.
enum HelmholtzInverse<T: Real> {
    Spectral(SpatialGrid<T>),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<T: Real> HelmholtzInverse<T> {
    fn new(grid: &SpatialGrid<T>) -> Result<Self> {
        match grid.geometry() {
            Geometry::PeriodicLine => Ok(Self::Spectral(grid.clone())),
            Geometry::Radial => {
                let lap = operator_matrix(grid, |v| grid.laplacian(v));
                let n = grid.points();
                let a = nalgebra::DMatrix::identity(n, n) - lap;
                Ok(Self::Dense(a.lu()))
            }
        }
    }

    fn apply(&self, rhs: &[T]) -> Result<Vec<T>> {
        match self {
            Self::Spectral(grid) => {
                let v: Vec<_> = rhs.iter().map(|&x| Complex::new(x, T::zero())).collect();
                let out = grid.apply_multiplier(&v, |_, k| Complex::new(T::one() / (T::one() + k * k), T::zero()));
                Ok(out.into_iter().map(|z| z.re).collect())
            }
            Self::Dense(lu) => {
                let b = DVector::from_iterator(rhs.len(), rhs.iter().map(|x| x.f64()));
                let x = lu
                    .solve(&b)
                    .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
                Ok(x.iter().map(|&v| T::lit(v)).collect())
            }
        }
    }
}

/// `Q` together with the profiles derived from it.
///
/// On radial meshes vector-valued profiles are stored by their radial
/// component: `y_q` holds `r Q(r)` and `grad_q` holds `Q'(r)`; the
/// Cartesian components are these times `x_j / r`.
#[derive(Clone, Debug)]
pub struct ProfileBundle<T: Real> {
    pub grid: SpatialGrid<T>,
    pub q: ComplexField<T>,
    pub lam_q: ComplexField<T>,
    pub y2_q: ComplexField<T>,
    pub y_q: Vec<ComplexField<T>>,
    pub rho: ComplexField<T>,
    pub grad_q: Vec<ComplexField<T>>,
    pub ip_table: BTreeMap<String, T>,
    pub ground_state_residual: T,
    pub rho_residual: T,
}

/// Default Petviashvili tolerance used by [`build_bundle`].
pub const DEFAULT_GROUND_STATE_TOL: f64 = 1e-10;

pub fn build_bundle<T: Real>(grid: &SpatialGrid<T>) -> Result<ProfileBundle<T>> {
    let q = solve_ground_state(grid, T::lit(DEFAULT_GROUND_STATE_TOL))?;
    bundle_from_ground_state(q)
}

/// Builds the profile bundle around an already computed ground state.
pub fn bundle_from_ground_state<T: Real>(q: ComplexField<T>) -> Result<ProfileBundle<T>> {
    let grid = q.grid().clone();
    let dim = grid.dim();
    let half_n = T::count(dim) * T::lit(0.5);
    let dq = q.gradient()?;
    let lam_q = q.scale_real(half_n).zip_map(&dq.map(|x, z| z * x), |a, b| a + b)?;
    let y2_q = q.map(|x, z| z * x * x);
    let y_q = vec![q.map(|x, z| z * x)];
    let grad_q = vec![dq];
    let (rho, rho_residual) = solve_rho(&q)?;
    let gs_res = ground_state_residual(&q)?;
    let mut bundle = ProfileBundle {
        grid,
        q,
        lam_q,
        y2_q,
        y_q,
        rho,
        grad_q,
        ip_table: BTreeMap::new(),
        ground_state_residual: gs_res,
        rho_residual,
    };
    bundle.ip_table = inner_product_table(&bundle);
    Ok(bundle)
}

fn inner_product_table<T: Real>(b: &ProfileBundle<T>) -> BTreeMap<String, T> {
    let ip = |f: &ComplexField<T>, g: &ComplexField<T>| f.inner_unchecked(g);
    let dim = T::count(b.grid.dim());
    let p = critical_power::<T>(b.grid.dim());
    let mut t = BTreeMap::new();
    let q2 = ip(&b.q, &b.q);
    let yq2 = ip(&b.y_q[0], &b.y_q[0]);
    t.insert("(Q,Q)".to_string(), q2);
    t.insert("(Q,rho)".to_string(), ip(&b.q, &b.rho));
    t.insert("(yQ,yQ)".to_string(), yq2);
    t.insert("(yQ,yQ)/4".to_string(), yq2 / T::lit(4.0));
    // per-component pairing (d_j Q, y_j Q); radial storage needs the 1/N angular average
    let djq = ip(&b.grad_q[0], &b.y_q[0]);
    let djq = if b.grid.is_radial() { djq / dim } else { djq };
    t.insert("(djQ,yjQ)".to_string(), djq);
    t.insert("(LamQ,Q)".to_string(), ip(&b.lam_q, &b.q));
    t.insert("(LamQ,LamQ)".to_string(), ip(&b.lam_q, &b.lam_q));
    t.insert("(LamQ,y2Q)".to_string(), ip(&b.lam_q, &b.y2_q));
    t.insert("(LamQ,rho)".to_string(), ip(&b.lam_q, &b.rho));
    t.insert("(y2Q,Q)".to_string(), ip(&b.y2_q, &b.q));
    t.insert("(y2Q,y2Q)".to_string(), ip(&b.y2_q, &b.y2_q));
    t.insert("(rho,y2Q)".to_string(), ip(&b.rho, &b.y2_q));
    t.insert("(rho,rho)".to_string(), ip(&b.rho, &b.rho));
    t.insert("(Q,yQ)".to_string(), ip(&b.q, &b.y_q[0]));
    t.insert("(Q^(1+4/N),Q)".to_string(), b.q.lp_pow(T::lit(2.0) + p));
    t.insert("(gradQ,gradQ)".to_string(), ip(&b.grad_q[0], &b.grad_q[0]));
    t
}

/// One Gagliardo–Nirenberg comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GnEntry<T> {
    pub lhs: T,
    pub rhs: T,
    pub ratio: T,
}

/// Compares `||v||_{2+4/N}^{2+4/N}` with `(1+2/N)(||v||_2/||Q||_2)^{4/N} ||∇v||_2^2`.
pub fn check_gn_constant<T: Real>(q: &ComplexField<T>, trials: &[ComplexField<T>]) -> Result<Vec<GnEntry<T>>> {
    let p = critical_power::<T>(q.grid().dim());
    let qn = q.l2();
    trials
        .iter()
        .map(|v| {
            v.same_grid(q)?;
            let mass = v.l2();
            if mass == T::zero() {
                return Err(Error::InvalidArgument("trial function is zero".into()));
            }
            let lhs = v.lp_pow(T::lit(2.0) + p);
            let rhs = (T::one() + p * T::lit(0.5)) * (mass / qn).powf(p) * v.grad_sq();
            Ok(GnEntry { lhs, rhs, ratio: lhs / rhs })
        })
        .collect()
}

/// Fitted constants of the pointwise decay bounds.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport<T> {
    /// `sup |∇Q| / Q`
    pub c_grad: T,
    /// `sup |∇²Q| / Q` (largest Hessian entry)
    pub c_hess: T,
    /// `sup |ΛQ| / ((1+|y|) Q)`
    pub c_lam: T,
    /// fitted exponent in `|ρ| <= C (1+|y|)^κ Q`
    pub kappa_rho: T,
    pub c_rho: T,
    /// fitted exponential decay rate of `Q`
    pub decay_rate: T,
    /// scan radius
    pub radius: T,
}

/// `sup_{|y| <= radius} |f| / ((1+|y|)^power |q|)`; rejects a zero reference field.
pub fn ratio_scan<T: Real>(f: &ComplexField<T>, q: &ComplexField<T>, power: T, radius: T) -> Result<T> {
    f.same_grid(q)?;
    if q.max_abs() == T::zero() {
        return Err(Error::InvalidArgument("reference field is zero".into()));
    }
    let mut sup = T::zero();
    for ((a, b), &x) in f.values().iter().zip(q.values()).zip(q.grid().coords()) {
        if x.abs() <= radius && b.norm() > T::zero() {
            sup = sup.max(a.norm() / ((T::one() + x.abs()).powf(power) * b.norm()));
        }
    }
    Ok(sup)
}

/// Exponential decay rate of a positive profile from a log-linear tail fit.
pub fn decay_rate<T: Real>(q: &ComplexField<T>) -> T {
    let r = q.grid().half_width();
    let (lo, hi) = (r / T::lit(8.0), r / T::lit(2.0));
    let pts: Vec<(f64, f64)> = q
        .grid()
        .coords()
        .iter()
        .zip(q.values())
        .filter(|(&x, z)| x.abs() >= lo && x.abs() <= hi && z.norm() > T::zero())
        .map(|(&x, z)| (x.abs().f64(), z.norm().f64().ln()))
        .collect();
    T::lit(-linear_slope(&pts))
}

pub(crate) fn linear_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub fn check_decay<T: Real>(bundle: &ProfileBundle<T>) -> Result<DecayReport<T>> {
    let grid = &bundle.grid;
    let radius = grid.half_width() * T::lit(0.5);
    let q = &bundle.q;
    let dq = &bundle.grad_q[0];
    let c_grad = ratio_scan(dq, q, T::zero(), radius)?;
    let d2 = ComplexField::from_parts(grid.clone(), grid.second_derivative(q.values()));
    let mut c_hess = ratio_scan(&d2, q, T::zero(), radius)?;
    if grid.is_radial() {
        let tangential = dq.map(|r, z| z / r);
        c_hess = c_hess.max(ratio_scan(&tangential, q, T::zero(), radius)?);
    }
    let c_lam = ratio_scan(&bundle.lam_q, q, T::one(), radius)?;
    let lo = grid.half_width() / T::lit(8.0);
    let pts: Vec<(f64, f64)> = grid
        .coords()
        .iter()
        .zip(bundle.rho.values().iter().zip(q.values()))
        .filter(|(&x, (r, qv))| x.abs() >= lo && x.abs() <= radius && r.norm() > T::zero() && qv.norm() > T::zero())
        .map(|(&x, (r, qv))| ((T::one() + x.abs()).f64().ln(), (r.norm() / qv.norm()).f64().ln()))
        .collect();
    let kappa = T::lit(linear_slope(&pts).max(0.0));
    let c_rho = ratio_scan(&bundle.rho, q, kappa, radius)?;
    Ok(DecayReport {
        c_grad,
        c_hess,
        c_lam,
        kappa_rho: kappa,
        c_rho,
        decay_rate: decay_rate(q),
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> SpatialGrid<f64> {
        SpatialGrid::periodic(20.0, n).unwrap()
    }

    #[test]
    fn one_dimensional_ground_state_matches_closed_form() {
        let gs = solve_ground_state_with_history(&line(1024), 1e-10).unwrap();
        let q = &gs.q;
        let n = q.len();
        assert!((q.values()[n / 2].re - 3f64.powf(0.25)).abs() < 1e-8);
        assert!((q.l2_sq() - 3f64.sqrt() * PI / 2.0).abs() < 1e-8);
        assert!(ground_state_residual(q).unwrap() < 1e-10);
        let exact = ComplexField::from_real_fn(q.grid(), |x| 3f64.powf(0.25) / (2.0 * x).cosh().sqrt()).unwrap();
        // compare away from the periodic wrap, where images of Q contribute O(e^{-R})
        let inner = (q - &exact).map(|x, z| if x.abs() <= 10.0 { z } else { Complex::new(0.0, 0.0) });
        assert!(inner.max_abs() < 1e-9);
        assert!(q.asymmetry() < 1e-12);
        assert!(q.values().iter().all(|z| z.re > 0.0 && z.im == 0.0));
    }

    #[test]
    fn residual_history_decreases_before_convergence() {
        let gs = solve_ground_state_with_history(&line(1024), 1e-10).unwrap();
        let first_below = gs.residuals.iter().position(|&r| r < 1e-10).unwrap();
        let tail = &gs.residuals[first_below.saturating_sub(10)..=first_below];
        assert!(tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        assert!(solve_ground_state(&line(256), 0.0).is_err());
    }

    #[test]
    fn mass_is_grid_converged() {
        let a = solve_ground_state(&line(1024), 1e-10).unwrap().l2();
        let b = solve_ground_state(&line(2048), 1e-10).unwrap().l2();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn bundle_identities() {
        let b = build_bundle(&line(1024)).unwrap();
        assert!(b.lam_q.inner(&b.q).unwrap().abs() < 1e-10);
        assert!(b.y_q[0].inner(&b.q).unwrap().abs() < 1e-12);
        assert_eq!(b.ip_table["(Q,rho)"], b.q.inner(&b.rho).unwrap());
        // (Q, rho) = (L+ Q... ) reduces to ||yQ||^2 / 2
        assert!((b.ip_table["(Q,rho)"] - 0.5 * b.ip_table["(yQ,yQ)"]).abs() < 1e-8);
        // (d_j Q, y_j Q) = -||Q||^2 / 2 by integration by parts
        assert!((b.ip_table["(djQ,yjQ)"] + 0.5 * b.ip_table["(Q,Q)"]).abs() < 1e-10);
        assert!((b.ip_table["(LamQ,y2Q)"] + b.ip_table["(yQ,yQ)"]).abs() < 1e-9);
    }

    #[test]
    fn gn_constant() {
        let g = line(1024);
        let q = solve_ground_state(&g, 1e-10).unwrap();
        let gauss = ComplexField::from_real_fn(&g, |x| (-x * x).exp()).unwrap();
        let twice = q.scale_real(2.0);
        let r = check_gn_constant(&q, &[q.clone(), gauss, twice]).unwrap();
        assert!((r[0].ratio - 1.0).abs() < 1e-8);
        assert!(r[1].ratio < 1.0 - 1e-3);
        assert!((r[2].ratio - r[0].ratio).abs() < 1e-10);
        assert!(check_gn_constant(&q, &[ComplexField::zeros(&g)]).is_err());
    }

    #[test]
    fn decay_bounds() {
        let b = build_bundle(&line(1024)).unwrap();
        let d = check_decay(&b).unwrap();
        assert!(d.c_grad < 2.0 && d.c_grad > 0.9, "{d:?}");
        assert!(d.c_lam.is_finite() && d.c_hess.is_finite());
        assert!((d.decay_rate - 1.0).abs() < 0.05, "{d:?}");
        assert!(d.kappa_rho.is_finite() && d.c_rho.is_finite());
        assert!(ratio_scan(&b.q, &ComplexField::zeros(&b.grid), 0.0, 5.0).is_err());
    }

    #[test]
    fn radial_ground_state_two_dimensions() {
        let g = SpatialGrid::<f64>::radial(2, 20.0, 256).unwrap();
        let q = solve_ground_state(&g, 1e-10).unwrap();
        assert!(ground_state_residual(&q).unwrap() < 1e-10);
        assert!((q.l2_sq() - 11.7008965246).abs() < 1e-8, "{}", q.l2_sq());
        // critical energy vanishes: ||∇Q||^2 / 2 - ∫Q^4 / 4
        let e = 0.5 * q.grad_sq() - 0.25 * q.lp_pow(4.0);
        assert!(e.abs() < 1e-8, "{e}");
        assert!(q.values().windows(2).all(|w| w[1].re < w[0].re));
    }
}
