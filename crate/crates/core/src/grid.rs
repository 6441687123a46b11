//! Spatial discretizations of R^N and their spectral calculus.
//!
//! Two geometries are supported. The periodic line samples `[-R, R)` at
//! `n` equispaced nodes. The radial mesh samples `(0, R)` at the cell
//! centres `r_j = (j + 1/2) h`; derivatives are taken spectrally on the
//! even extension of the samples to `(-R, R)`, which builds the regularity
//! condition `f_r(0) = 0` into the representation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{two_product, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    PeriodicLine,
    Radial,
}

struct GridInner<T: Real> {
    dim: usize,
    geometry: Geometry,
    half_width: T,
    points: usize,
    spacing: T,
    coords: Vec<T>,
    weights: Vec<T>,
    wavenumbers: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

/// Immutable, cheaply clonable grid description.
#[derive(Clone)]
pub struct SpatialGrid<T: Real> {
    inner: Arc<GridInner<T>>,
}

impl<T: Real> PartialEq for SpatialGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.geometry == other.inner.geometry
                && self.inner.points == other.inner.points
                && self.inner.half_width == other.inner.half_width)
    }
}

impl<T: Real> fmt::Debug for SpatialGrid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialGrid")
            .field("dim", &self.inner.dim)
            .field("geometry", &self.inner.geometry)
            .field("half_width", &self.inner.half_width)
            .field("points", &self.inner.points)
            .finish()
    }
}

/// Surface area of the unit sphere in R^N.
pub fn sphere_area(dim: usize) -> f64 {
    // Gamma(N/2) by the half-integer recursion
    let mut gamma = if dim % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if dim % 2 == 0 { 1.0 } else { 0.5 };
    while x + 0.5 < dim as f64 / 2.0 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(dim as f64 / 2.0) / gamma
}

impl<T: Real> SpatialGrid<T> {
    /// Grid for dimension `dim`: periodic line when `dim == 1`, radial mesh otherwise.
    pub fn new(dim: usize, half_width: T, points: usize) -> Result<Self> {
        match dim {
            0 => Err(Error::InvalidGrid("dimension must be positive".into())),
            1 => Self::periodic(half_width, points),
            _ => Self::radial(dim, half_width, points),
        }
    }

    pub fn periodic(half_width: T, points: usize) -> Result<Self> {
        if !(half_width > T::zero()) || !half_width.is_finite() {
            return Err(Error::InvalidGrid("half width must be positive".into()));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "periodic grid needs a power of two >= 8 points, got {points}"
            )));
        }
        let h = T::lit(2.0) * half_width / T::count(points);
        let coords = (0..points).map(|j| -half_width + T::count(j) * h).collect();
        let weights = vec![h; points];
        Ok(Self::assemble(1, Geometry::PeriodicLine, half_width, points, h, coords, weights))
    }

    pub fn radial(dim: usize, half_width: T, points: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidGrid("radial grids need dimension >= 2".into()));
        }
        if !(half_width > T::zero()) || !half_width.is_finite() {
            return Err(Error::InvalidGrid("half width must be positive".into()));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "radial grid needs a power of two >= 8 points, got {points}"
            )));
        }
        let h = half_width / T::count(points);
        let coords = (0..points).map(|j| (T::count(j) + T::lit(0.5)) * h).collect();
        let weights = radial_weights(dim, half_width.f64(), points)
            .into_iter()
            .map(T::lit)
            .collect();
        Ok(Self::assemble(dim, Geometry::Radial, half_width, points, h, coords, weights))
    }

    fn assemble(
        dim: usize,
        geometry: Geometry,
        half_width: T,
        points: usize,
        spacing: T,
        coords: Vec<T>,
        weights: Vec<T>,
    ) -> Self {
        let m = match geometry {
            Geometry::PeriodicLine => points,
            Geometry::Radial => 2 * points,
        };
        let kappa = T::PI() / half_width;
        let wavenumbers = (0..m)
            .map(|i| {
                let q = if i <= m / 2 { i as i64 } else { i as i64 - m as i64 };
                kappa * T::lit(q as f64)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        Self {
            inner: Arc::new(GridInner {
                dim,
                geometry,
                half_width,
                points,
                spacing,
                coords,
                weights,
                wavenumbers,
                fwd,
                inv,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }
    pub fn geometry(&self) -> Geometry {
        self.inner.geometry
    }
    pub fn half_width(&self) -> T {
        self.inner.half_width
    }
    pub fn points(&self) -> usize {
        self.inner.points
    }
    pub fn spacing(&self) -> T {
        self.inner.spacing
    }
    /// Node coordinates: `x_j` on the periodic line, `r_j` on the radial mesh.
    pub fn coords(&self) -> &[T] {
        &self.inner.coords
    }
    /// Quadrature weights, including the `r^{N-1}` sphere factor for radial meshes.
    pub fn weights(&self) -> &[T] {
        &self.inner.weights
    }
    pub fn is_radial(&self) -> bool {
        self.inner.geometry == Geometry::Radial
    }
    /// Size of the spectral array (the even extension has twice the points).
    pub fn spectral_len(&self) -> usize {
        self.inner.wavenumbers.len()
    }
    pub fn wavenumbers(&self) -> &[T] {
        &self.inner.wavenumbers
    }
    /// Largest resolved wavenumber `pi / h`.
    pub fn max_wavenumber(&self) -> T {
        T::PI() / self.inner.spacing
    }
    /// Size of the neglected tail `exp(-R)` of an `exp(-|x|)` profile.
    pub fn tail_bound(&self) -> T {
        (-self.inner.half_width).exp()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.inner.points {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {len}",
                self.inner.points
            )));
        }
        Ok(())
    }

    /// Forward transform of the (extended) samples, unnormalized.
    pub fn spectrum(&self, values: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.inner.points;
        let mut buf = match self.inner.geometry {
            Geometry::PeriodicLine => values.to_vec(),
            Geometry::Radial => {
                let mut ext = vec![Complex::new(T::zero(), T::zero()); 2 * n];
                for j in 0..n {
                    ext[n + j] = values[j];
                    ext[n - 1 - j] = values[j];
                }
                ext
            }
        };
        self.inner.fwd.process(&mut buf);
        buf
    }

    /// Unnormalized forward FFT of a buffer of spectral length.
    pub(crate) fn fft_in_place(&self, buf: &mut [Complex<T>]) {
        self.inner.fwd.process(buf);
    }

    /// Normalized inverse FFT of a buffer of spectral length.
    pub(crate) fn ifft_in_place(&self, buf: &mut [Complex<T>]) {
        self.inner.inv.process(buf);
        let scale = T::one() / T::count(buf.len());
        buf.iter_mut().for_each(|z| *z = *z * scale);
    }

    /// Inverse of [`spectrum`](Self::spectrum), restricted back to the grid nodes.
    pub fn from_spectrum(&self, mut spec: Vec<Complex<T>>) -> Vec<Complex<T>> {
        let m = spec.len();
        self.inner.inv.process(&mut spec);
        let scale = T::one() / T::count(m);
        let n = self.inner.points;
        let out = match self.inner.geometry {
            Geometry::PeriodicLine => spec,
            Geometry::Radial => spec[n..].to_vec(),
        };
        out.into_iter().map(|z| z * scale).collect()
    }

    /// Applies the Fourier multiplier `mult(index, k)` to the samples.
    pub fn apply_multiplier<F>(&self, values: &[Complex<T>], mult: F) -> Vec<Complex<T>>
    where
        F: Fn(usize, T) -> Complex<T>,
    {
        let mut spec = self.spectrum(values);
        for (i, (z, &k)) in spec.iter_mut().zip(self.inner.wavenumbers.iter()).enumerate() {
            *z = *z * mult(i, k);
        }
        self.from_spectrum(spec)
    }

    fn nyquist(&self) -> usize {
        self.spectral_len() / 2
    }

    /// First derivative along the grid coordinate (`d/dx` or `d/dr`).
    pub fn derivative(&self, values: &[Complex<T>]) -> Vec<Complex<T>> {
        let nyq = self.nyquist();
        self.apply_multiplier(values, |i, k| {
            if i == nyq {
                Complex::new(T::zero(), T::zero())
            } else {
                Complex::new(T::zero(), k)
            }
        })
    }

    /// Second derivative along the grid coordinate.
    pub fn second_derivative(&self, values: &[Complex<T>]) -> Vec<Complex<T>> {
        self.apply_multiplier(values, |_, k| Complex::new(-k * k, T::zero()))
    }

    /// Laplacian in the grid dimension.
    pub fn laplacian(&self, values: &[Complex<T>]) -> Vec<Complex<T>> {
        self.laplacian_in_dim(values, self.inner.dim)
    }

    /// Radial Laplacian `f'' + (d-1)/r f'` for an arbitrary dimension `d`.
    /// On the periodic line only `d = 1` is meaningful.
    pub fn laplacian_in_dim(&self, values: &[Complex<T>], dim: usize) -> Vec<Complex<T>> {
        match self.inner.geometry {
            Geometry::PeriodicLine => self.second_derivative(values),
            Geometry::Radial => {
                let spec = self.spectrum(values);
                let nyq = self.nyquist();
                let k = &self.inner.wavenumbers;
                let d2: Vec<_> = spec.iter().zip(k).map(|(z, &k)| *z * (-k * k)).collect();
                let d1: Vec<_> = spec
                    .iter()
                    .zip(k)
                    .enumerate()
                    .map(|(i, (z, &k))| {
                        if i == nyq {
                            Complex::new(T::zero(), T::zero())
                        } else {
                            *z * Complex::new(T::zero(), k)
                        }
                    })
                    .collect();
                let d2 = self.from_spectrum(d2);
                let d1 = self.from_spectrum(d1);
                let c = T::count(dim - 1);
                d2.iter()
                    .zip(d1.iter())
                    .zip(self.inner.coords.iter())
                    .map(|((a, b), &r)| *a + *b * (c / r))
                    .collect()
            }
        }
    }

    /// Evaluates the trigonometric interpolant of the samples at
    /// `start + j * step`, `j = 0..count`, by a chirp-z transform.
    ///
    /// The interpolant is `2R`-periodic; on the radial mesh it is the even
    /// extension, so negative arguments are allowed. Points with
    /// `|z| > R` are wrapped, so callers mask them when the underlying
    /// function is not periodic.
    pub fn interpolate_uniform(&self, values: &[Complex<T>], start: T, step: T, count: usize) -> Vec<Complex<T>> {
        if count == 0 {
            return Vec::new();
        }
        let zero = Complex::new(T::zero(), T::zero());
        let spec = self.spectrum(values);
        let m = spec.len();
        let half = m / 2;
        let inv_m = T::one() / T::count(m);
        let kappa = T::PI() / self.inner.half_width;
        let x0 = match self.inner.geometry {
            Geometry::PeriodicLine => -self.inner.half_width,
            Geometry::Radial => -self.inner.half_width + self.inner.spacing * T::lit(0.5),
        };
        // coefficients for q = -m/2 ..= m/2 with the Nyquist mode split
        let tlen = m + 1;
        let beta = kappa * (start - x0);
        let mut a = vec![zero; tlen];
        for (t, slot) in a.iter_mut().enumerate() {
            let q = t as i64 - half as i64;
            let idx = if q >= 0 { q as usize } else { (q + m as i64) as usize };
            let mut c = spec[idx] * inv_m;
            if q.unsigned_abs() as usize == half {
                c = c * T::lit(0.5);
            }
            *slot = c * phase(beta, T::lit(q as f64));
        }
        let alpha = kappa * step;
        let half_alpha = alpha * T::lit(0.5);
        let q0 = -(half as f64);
        let p = (tlen + count - 1).next_power_of_two();
        let mut fa = vec![zero; p];
        for (t, &c) in a.iter().enumerate() {
            let tt = (t * t) as f64;
            fa[t] = c * phase(half_alpha, T::lit(tt));
        }
        let mut fc = vec![zero; p];
        for k in 0..count {
            fc[k] = phase(-half_alpha, T::lit((k * k) as f64));
        }
        for k in 1..tlen {
            fc[p - k] = phase(-half_alpha, T::lit((k * k) as f64));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(p);
        let inv = planner.plan_fft_inverse(p);
        fwd.process(&mut fa);
        fwd.process(&mut fc);
        for (x, y) in fa.iter_mut().zip(fc.iter()) {
            *x = *x * *y;
        }
        inv.process(&mut fa);
        let inv_p = T::one() / T::count(p);
        (0..count)
            .map(|j| {
                let jj = (j * j) as f64;
                let pre = phase(half_alpha, T::lit(jj)) * phase(alpha, T::lit(q0 * j as f64));
                fa[j] * inv_p * pre
            })
            .collect()
    }
}

/// `exp(i a b)` with the product formed without rounding loss.
#[inline]
fn phase<T: Real>(a: T, b: T) -> Complex<T> {
    let (hi, lo) = two_product(a, b);
    let (s1, c1) = hi.sin_cos();
    let (s2, c2) = lo.sin_cos();
    Complex::new(c1 * c2 - s1 * s2, s1 * c2 + c1 * s2)
}

/// Weights integrating the even trigonometric interpolant against
/// `sigma_{N-1} r^{N-1}` over `[0, R]` exactly.
fn radial_weights(dim: usize, r: f64, n: usize) -> Vec<f64> {
    let kappa = PI / r;
    let moments: Vec<f64> = (1..n).map(|q| cosine_moment(dim - 1, kappa * q as f64, r)).collect();
    // cos(pi k / (2n)) lookup; cos(kappa q r_j) = cos(pi q (2j+1) / (2n))
    let period = 4 * n;
    let table: Vec<f64> = (0..period).map(|k| (PI * k as f64 / (2 * n) as f64).cos()).collect();
    let base = r.powi(dim as i32) / dim as f64;
    let area = sphere_area(dim);
    (0..n)
        .map(|j| {
            let odd = 2 * j + 1;
            let mut acc = 0.0;
            for (qm1, mom) in moments.iter().enumerate() {
                let q = qm1 + 1;
                acc += table[(q * odd) % period] * mom;
            }
            area / n as f64 * (base + 2.0 * acc)
        })
        .collect()
}

/// `int_0^R r^p cos(a r) dr` by the integration-by-parts recursion.
fn cosine_moment(p: usize, a: f64, r: f64) -> f64 {
    let ia = Complex::new(0.0, a);
    let e = Complex::new((a * r).cos(), (a * r).sin());
    let mut i = (e - 1.0) / ia;
    let mut rp = 1.0;
    for m in 1..=p {
        rp *= r;
        i = (e * rp - i * m as f64) / ia;
    }
    i.re
}
