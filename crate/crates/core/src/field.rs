//! Sampled complex fields with quadrature norms and the real L2 pairing.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::scalar::Real;

/// A complex function sampled on a [`SpatialGrid`]. Samples are always finite.
#[derive(Clone, Debug)]
pub struct ComplexField<T: Real> {
    grid: SpatialGrid<T>,
    values: Vec<Complex<T>>,
}

/// Norms of a field, all computed by grid quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Norms<T> {
    pub l2: T,
    pub h1: T,
    pub sigma1: T,
    pub sigma2: T,
    /// `|| |x| f ||_2`
    pub weighted_l2: T,
}

impl<T: Real> ComplexField<T> {
    pub fn new(grid: SpatialGrid<T>, values: Vec<Complex<T>>) -> Result<Self> {
        grid.check_len(values.len())?;
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("field samples"));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values produced by finite arithmetic on finite inputs.
    pub(crate) fn from_parts(grid: SpatialGrid<T>, values: Vec<Complex<T>>) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid, values }
    }

    pub fn zeros(grid: &SpatialGrid<T>) -> Self {
        let n = grid.points();
        Self::from_parts(grid.clone(), vec![Complex::new(T::zero(), T::zero()); n])
    }

    /// Samples `f` at the grid coordinates (`x` or `r`).
    pub fn from_fn<F: Fn(T) -> Complex<T>>(grid: &SpatialGrid<T>, f: F) -> Result<Self> {
        let values = grid.coords().iter().map(|&x| f(x)).collect();
        Self::new(grid.clone(), values)
    }

    pub fn from_real_fn<F: Fn(T) -> T>(grid: &SpatialGrid<T>, f: F) -> Result<Self> {
        Self::from_fn(grid, |x| Complex::new(f(x), T::zero()))
    }

    pub fn from_real(grid: &SpatialGrid<T>, values: &[T]) -> Result<Self> {
        Self::new(grid.clone(), values.iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    pub fn grid(&self) -> &SpatialGrid<T> {
        &self.grid
    }
    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }
    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn re(&self) -> Vec<T> {
        self.values.iter().map(|z| z.re).collect()
    }
    pub fn im(&self) -> Vec<T> {
        self.values.iter().map(|z| z.im).collect()
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    fn checked(self, what: &'static str) -> Result<Self> {
        if self.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            Err(Error::NonFinite(what))
        } else {
            Ok(self)
        }
    }

    pub fn laplacian(&self) -> Result<Self> {
        Self::from_parts(self.grid.clone(), self.grid.laplacian(&self.values)).checked("laplacian")
    }

    /// Derivative along the grid coordinate: `d/dx` on the line, `d/dr` on radial meshes.
    pub fn gradient(&self) -> Result<Self> {
        Self::from_parts(self.grid.clone(), self.grid.derivative(&self.values)).checked("gradient")
    }

    pub fn map<F: Fn(T, Complex<T>) -> Complex<T>>(&self, f: F) -> Self {
        let values = self
            .grid
            .coords()
            .iter()
            .zip(self.values.iter())
            .map(|(&x, &z)| f(x, z))
            .collect();
        Self::from_parts(self.grid.clone(), values)
    }

    pub fn zip_map<F: Fn(Complex<T>, Complex<T>) -> Complex<T>>(&self, other: &Self, f: F) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(other.values.iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.grid.clone(), values))
    }

    pub fn scale(&self, c: Complex<T>) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|&z| z * c).collect())
    }

    pub fn scale_real(&self, c: T) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|&z| z * c).collect())
    }

    /// Multiplication by `i`.
    pub fn times_i(&self) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|z| Complex::new(-z.im, z.re)).collect())
    }

    pub fn conj(&self) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|z| z.conj()).collect())
    }

    /// Pointwise product with a real weight sampled on the grid.
    pub fn mul_real(&self, w: &[T]) -> Self {
        let values = self.values.iter().zip(w.iter()).map(|(&z, &w)| z * w).collect();
        Self::from_parts(self.grid.clone(), values)
    }

    /// Real pairing `Re int f conj(g)`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.same_grid(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.grid.weights().iter())
            .map(|((a, b), &w)| w * (a.re * b.re + a.im * b.im))
            .sum()
    }

    pub fn l2_sq(&self) -> T {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(z, &w)| w * z.norm_sqr())
            .sum()
    }

    pub fn l2(&self) -> T {
        self.l2_sq().sqrt()
    }

    /// `||grad f||_2^2`.
    pub fn grad_sq(&self) -> T {
        let d = self.grid.derivative(&self.values);
        d.iter().zip(self.grid.weights()).map(|(z, &w)| w * z.norm_sqr()).sum()
    }

    pub fn h1_sq(&self) -> T {
        self.l2_sq() + self.grad_sq()
    }

    /// `|| |x|^p f ||_2^2`.
    pub fn moment_sq(&self, p: i32) -> T {
        self.values
            .iter()
            .zip(self.grid.weights())
            .zip(self.grid.coords())
            .map(|((z, &w), &x)| w * x.abs().powi(2 * p) * z.norm_sqr())
            .sum()
    }

    /// Sum of squared second derivatives, `sum_{|a|=2} ||d^a f||_2^2`.
    pub fn hessian_sq(&self) -> T {
        let g = &self.grid;
        let d2 = g.second_derivative(&self.values);
        if g.is_radial() {
            let d1 = g.derivative(&self.values);
            let tangential = T::count(g.dim() - 1);
            d2.iter()
                .zip(d1.iter())
                .zip(g.coords())
                .zip(g.weights())
                .map(|(((a, b), &r), &w)| w * (a.norm_sqr() + tangential * b.norm_sqr() / (r * r)))
                .sum()
        } else {
            d2.iter().zip(g.weights()).map(|(z, &w)| w * z.norm_sqr()).sum()
        }
    }

    pub fn norms(&self) -> Norms<T> {
        let l2 = self.l2_sq();
        let grad = self.grad_sq();
        let m1 = self.moment_sq(1);
        let m2 = self.moment_sq(2);
        let hess = self.hessian_sq();
        Norms {
            l2: l2.sqrt(),
            h1: (l2 + grad).sqrt(),
            sigma1: (l2 + grad + m1).sqrt(),
            sigma2: (l2 + grad + hess + m2).sqrt(),
            weighted_l2: m1.sqrt(),
        }
    }

    /// `int |f|^p`.
    pub fn lp_pow(&self, p: T) -> T {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(z, &w)| w * z.norm().powf(p))
            .sum()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// Largest deviation from evenness `max |f(x) - f(-x)|` on the periodic line.
    /// Radial fields are even by construction and report zero.
    pub fn asymmetry(&self) -> T {
        if self.grid.is_radial() {
            return T::zero();
        }
        let n = self.values.len();
        (1..n).fold(T::zero(), |m, j| m.max((self.values[j] - self.values[n - j]).norm()))
    }

    /// Minimizes `||self - e^{i theta} other||_2` over the global phase and returns the distance.
    pub fn gauge_distance(&self, other: &Self) -> Result<T> {
        self.same_grid(other)?;
        let mut z = Complex::new(T::zero(), T::zero());
        for ((a, b), &w) in self.values.iter().zip(other.values.iter()).zip(self.grid.weights()) {
            z = z + a * b.conj() * w;
        }
        // optimal rotation z/|z|, then the distance is formed directly to avoid cancellation
        let r = z.norm();
        let c = if r > T::zero() { z / r } else { Complex::new(T::one(), T::zero()) };
        let d: T = self
            .values
            .iter()
            .zip(other.values.iter())
            .zip(self.grid.weights())
            .map(|((a, b), &w)| w * (a - b * c).norm_sqr())
            .sum();
        Ok(d.sqrt())
    }
}

impl<T: Real> Add for &ComplexField<T> {
    type Output = ComplexField<T>;
    /// Panics when the operands live on different grids.
    fn add(self, rhs: Self) -> ComplexField<T> {
        self.zip_map(rhs, |a, b| a + b).expect("fields on the same grid")
    }
}

impl<T: Real> Sub for &ComplexField<T> {
    type Output = ComplexField<T>;
    /// Panics when the operands live on different grids.
    fn sub(self, rhs: Self) -> ComplexField<T> {
        self.zip_map(rhs, |a, b| a - b).expect("fields on the same grid")
    }
}

impl<T: Real> Mul<T> for &ComplexField<T> {
    type Output = ComplexField<T>;
    fn mul(self, rhs: T) -> ComplexField<T> {
        self.scale_real(rhs)
    }
}

impl<T: Real> Neg for &ComplexField<T> {
    type Output = ComplexField<T>;
    fn neg(self) -> ComplexField<T> {
        self.scale_real(-T::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line() -> SpatialGrid<f64> {
        SpatialGrid::periodic(20.0, 2048).unwrap()
    }

    #[test]
    fn zero_field_norms_vanish() {
        let f = ComplexField::zeros(&line());
        assert_eq!(f.norms(), Norms::default());
    }

    #[test]
    fn rejects_non_finite_samples() {
        let g = line();
        let mut v = vec![Complex::new(0.0, 0.0); g.points()];
        v[3] = Complex::new(f64::NAN, 0.0);
        assert!(matches!(ComplexField::new(g, v), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gaussian_mass() {
        let f = ComplexField::from_real_fn(&line(), |x| (-x * x / 2.0).exp()).unwrap();
        assert!((f.l2_sq() - PI.sqrt()).abs() < 1e-13);
        // ||f'||^2 = sqrt(pi)/2, || x f ||^2 = sqrt(pi)/2
        let n = f.norms();
        assert!((n.h1 * n.h1 - 1.5 * PI.sqrt()).abs() < 1e-12);
        assert!((n.weighted_l2 * n.weighted_l2 - 0.5 * PI.sqrt()).abs() < 1e-12);
        // ||f''||^2 = 3 sqrt(pi)/4, || x^2 f ||^2 = 3 sqrt(pi)/4
        let s2 = 1.0 + 0.5 + 0.75 + 0.75;
        assert!((n.sigma2 * n.sigma2 - s2 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_ground_state_mass() {
        let f = ComplexField::from_real_fn(&line(), |x| 3f64.powf(0.25) / (2.0 * x).cosh().sqrt()).unwrap();
        let exact = 3f64.sqrt() * PI / 2.0;
        assert!((f.l2_sq() - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn parseval() {
        let g = line();
        let f = ComplexField::from_fn(&g, |x| Complex::new((-x * x).exp(), (x / 3.0).sin() * (-x * x / 4.0).exp())).unwrap();
        let spec = g.spectrum(f.values());
        let spectral: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.spacing() / g.points() as f64;
        assert!((spectral - f.l2_sq()).abs() < 1e-12);
    }

    #[test]
    fn inner_products() {
        let g = line();
        let f = ComplexField::from_fn(&g, |x| Complex::new((-x * x).exp(), 0.3 * x * (-x * x).exp())).unwrap();
        let q = ComplexField::from_real_fn(&g, |x| 1.0 / x.cosh()).unwrap();
        let yq = q.map(|x, z| z * x);
        assert!((f.inner(&f).unwrap() - f.l2_sq()).abs() < 1e-15);
        assert!(q.inner(&yq).unwrap().abs() < 1e-12);
        assert!(f.times_i().inner(&f).unwrap().abs() < 1e-15);
    }

    #[test]
    fn laplacian_is_symmetric() {
        let g = line();
        let f = ComplexField::from_fn(&g, |x| Complex::new((-x * x).exp(), (x * 0.5).sin() / (x * x).cosh())).unwrap();
        let h = ComplexField::from_real_fn(&g, |x| 1.0 / (1.5 * x).cosh()).unwrap();
        let a = f.laplacian().unwrap().inner(&h).unwrap();
        let b = f.inner(&h.laplacian().unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn radial_symmetric_laplacian() {
        let g = SpatialGrid::<f64>::radial(2, 15.0, 256).unwrap();
        let f = ComplexField::from_real_fn(&g, |r| (-r * r).exp()).unwrap();
        let h = ComplexField::from_real_fn(&g, |r| 1.0 / (r * r + 1.0).powi(3)).unwrap();
        let a = f.laplacian().unwrap().inner(&h).unwrap();
        let b = f.inner(&h.laplacian().unwrap()).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = ComplexField::zeros(&line());
        let b = ComplexField::zeros(&SpatialGrid::periodic(10.0, 2048).unwrap());
        assert!(matches!(a.inner(&b), Err(Error::GridMismatch)));
    }

    #[test]
    fn gauge_distance_ignores_global_phase() {
        let g = line();
        let f = ComplexField::from_fn(&g, |x| Complex::new((-x * x).exp(), x * (-x * x).exp())).unwrap();
        let rotated = f.scale(Complex::from_polar(1.0, 2.1));
        assert!(f.gauge_distance(&rotated).unwrap() < 1e-14);
        assert!((&f - &rotated).l2() > 1.0);
    }

    #[test]
    fn norms_converge_under_refinement() {
        // a field with a finite-smoothness kink converges algebraically; successive differences shrink
        let mut prev = None;
        let mut diffs = Vec::new();
        for n in [256, 512, 1024, 2048] {
            let g = SpatialGrid::<f64>::periodic(10.0, n).unwrap();
            let f = ComplexField::from_real_fn(&g, |x| (-x.abs().powi(3)).exp()).unwrap();
            let v = f.norms().h1;
            if let Some(p) = prev {
                diffs.push(f64::abs(v - p));
            }
            prev = Some(v);
        }
        assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    }
}
