//! Strang-split pseudospectral integration, conserved quantities, and the
//! explicit blow-up solution
//! `S(t,x) = |t|^{-N/2} Q(x/t) e^{-i/t} e^{i|x|²/(4t)}`.
//!
//! The nonlinear and potential part of the flow preserves `|u|` pointwise,
//! so it is integrated exactly as a phase rotation by
//! `dt (g|u|^{4/N} - V)`. The linear part `i u_t + Δu = 0` is diagonal in
//! Fourier space on the line; on radial meshes it is applied by a
//! truncated Taylor series of `exp(i dt Δ)` with substeps.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSpec;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::grid::{Geometry, SpatialGrid};
use crate::profiles::critical_power;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub dt0: f64,
    /// `dt = dt0 * min(1, (|∇u0| / |∇u|)²)`
    pub adapt: bool,
    pub t_span: (f64, f64),
    pub dealias: bool,
    /// the run stops (without error) once `||∇u||_2` exceeds this value
    pub blowup_gradient_cap: f64,
    /// record a snapshot every this many steps; 0 keeps the endpoints only
    pub snapshot_every: usize,
    pub dt_min: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt0: 1e-4,
            adapt: true,
            t_span: (-1.0, -0.25),
            dealias: true,
            blowup_gradient_cap: 1e4,
            snapshot_every: 0,
            dt_min: 1e-14,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            bad.push("dt0 must be positive");
        }
        if !(self.t_span.0.is_finite() && self.t_span.1.is_finite()) || self.t_span.0 == self.t_span.1 {
            bad.push("t_span must have distinct finite endpoints");
        }
        if !(self.blowup_gradient_cap > 0.0) {
            bad.push("blowup_gradient_cap must be positive");
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt0) {
            bad.push("dt_min must lie in (0, dt0)");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConservedReport {
    pub mass: f64,
    pub energy: f64,
    /// `Im ∫ u ∇ū`; identically zero on radial meshes
    pub momentum: Vec<f64>,
}

/// Where the coefficients of the flow come from.
#[derive(Clone, Debug)]
enum Coefficients {
    /// `g(x)`, `V(x)` sampled once
    Static,
    /// Pseudo-conformal frame `σ = -1/t`: `g(y/σ)` and `1 + σ^{-2} V(y/σ)`.
    Frame(CoefficientSpec),
}

/// Reusable Strang integrator on a fixed grid.
pub struct SplitStep<T: Real> {
    grid: SpatialGrid<T>,
    half_p: T,
    quintic: bool,
    coefficients: Coefficients,
    g: Vec<T>,
    w: Vec<T>,
    mask: Option<Vec<T>>,
    buf: Vec<Complex<T>>,
    backup: Vec<Complex<T>>,
    /// linear propagators by step size, most recent first
    mult: Vec<(f64, Vec<Complex<T>>)>,
}

impl<T: Real> SplitStep<T> {
    /// Integrator for `i u_t + Δu + g|u|^{4/N}u - Vu = 0` in physical variables.
    pub fn physical(grid: &SpatialGrid<T>, spec: &CoefficientSpec, dealias: bool) -> Self {
        let g = spec.g_samples(grid);
        let w = spec.v_samples(grid);
        Self::build(grid, Coefficients::Static, g, w, dealias)
    }

    /// Integrator for the profile `v(σ, y)` in the pseudo-conformal frame
    /// `(λ, b, γ, w) = (1/σ, 1/σ, σ, 0)`, which satisfies
    /// `i v_σ + Δv - v + g(y/σ)|v|^{4/N}v - σ^{-2}V(y/σ)v = 0`.
    pub fn frame(grid: &SpatialGrid<T>, spec: &CoefficientSpec, dealias: bool) -> Self {
        let n = grid.points();
        if spec.is_free() {
            Self::build(grid, Coefficients::Static, vec![T::one(); n], vec![T::one(); n], dealias)
        } else {
            Self::build(
                grid,
                Coefficients::Frame(spec.clone()),
                vec![T::one(); n],
                vec![T::one(); n],
                dealias,
            )
        }
    }

    fn build(grid: &SpatialGrid<T>, coefficients: Coefficients, g: Vec<T>, w: Vec<T>, dealias: bool) -> Self {
        let cutoff = grid.max_wavenumber() * T::lit(2.0 / 3.0);
        let mask = dealias.then(|| {
            grid.wavenumbers()
                .iter()
                .map(|&k| if k.abs() <= cutoff { T::one() } else { T::zero() })
                .collect()
        });
        let dim = grid.dim();
        Self {
            grid: grid.clone(),
            half_p: critical_power::<T>(dim) * T::lit(0.5),
            quintic: dim == 1,
            coefficients,
            g,
            w,
            mask,
            buf: vec![Complex::new(T::zero(), T::zero()); grid.spectral_len()],
            backup: Vec::new(),
            mult: Vec::new(),
        }
    }

    pub fn grid(&self) -> &SpatialGrid<T> {
        &self.grid
    }

    fn sample_coefficients(&mut self, sigma: f64) {
        if let Coefficients::Frame(spec) = &self.coefficients {
            let inv = 1.0 / sigma;
            for ((g, w), &y) in self.g.iter_mut().zip(self.w.iter_mut()).zip(self.grid.coords()) {
                let x = y.f64() * inv;
                *g = T::lit(spec.g(x));
                *w = T::lit(1.0 + inv * inv * spec.v(x));
            }
        }
    }

    fn nonlinear(&self, v: &mut [Complex<T>], h: T) {
        for ((z, &g), &w) in v.iter_mut().zip(&self.g).zip(&self.w) {
            let a = z.norm_sqr();
            let ap = if self.quintic { a * a } else { a.powf(self.half_p) };
            let (s, c) = (h * (g * ap - w)).sin_cos();
            *z = *z * Complex::new(c, s);
        }
    }

    fn linear(&mut self, v: &mut [Complex<T>], dt: f64) {
        match self.grid.geometry() {
            Geometry::PeriodicLine => {
                let pos = match self.mult.iter().position(|m| m.0 == dt) {
                    Some(p) => p,
                    None => {
                        let mask = self.mask.as_deref();
                        let m = self
                            .grid
                            .wavenumbers()
                            .iter()
                            .enumerate()
                            .map(|(i, &k)| {
                                let m = mask.map_or(T::one(), |m| m[i]);
                                let (s, c) = (-(k * k) * T::lit(dt)).sin_cos();
                                Complex::new(c * m, s * m)
                            })
                            .collect();
                        if self.mult.len() == 4 {
                            self.mult.pop();
                        }
                        self.mult.insert(0, (dt, m));
                        0
                    }
                };
                self.buf.copy_from_slice(v);
                self.grid.fft_in_place(&mut self.buf);
                for (z, m) in self.buf.iter_mut().zip(&self.mult[pos].1) {
                    *z = *z * *m;
                }
                self.grid.ifft_in_place(&mut self.buf);
                v.copy_from_slice(&self.buf);
            }
            Geometry::Radial => {
                radial_schrodinger(&self.grid, v, dt);
                if let Some(mask) = &self.mask {
                    let out = self.grid.apply_multiplier(v, |i, _| Complex::new(mask[i], T::zero()));
                    v.copy_from_slice(&out);
                }
            }
        }
    }

    /// One Strang step from `t` to `t + dt` (`dt` may be negative). On a
    /// non-finite result the input is restored and blow-up is reported.
    pub fn step_in_place(&mut self, v: &mut [Complex<T>], t: f64, dt: f64) -> Result<()> {
        self.backup.clear();
        self.backup.extend_from_slice(v);
        let half = T::lit(0.5 * dt);
        self.sample_coefficients(t + 0.25 * dt);
        self.nonlinear(v, half);
        self.linear(v, dt);
        self.sample_coefficients(t + 0.75 * dt);
        self.nonlinear(v, half);
        if v.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            v.copy_from_slice(&self.backup);
            return Err(Error::BlowupSuspected {
                t,
                grad_norm: f64::INFINITY,
            });
        }
        Ok(())
    }

    /// Fourth-order step: the triple-jump composition of three Strang steps
    /// with weights `w₁, w₀, w₁`, `w₁ = 1/(2 - 2^{1/3})`, `w₀ = 1 - 2w₁`.
    /// Valid for time-dependent coefficients because the Strang step is
    /// symmetric.
    pub fn step4_in_place(&mut self, v: &mut [Complex<T>], t: f64, dt: f64) -> Result<()> {
        let w1 = 1.0 / (2.0 - 2f64.cbrt());
        let w0 = 1.0 - 2.0 * w1;
        let start = v.to_vec();
        let mut tt = t;
        for w in [w1, w0, w1] {
            if let Err(e) = self.step_in_place(v, tt, w * dt) {
                v.copy_from_slice(&start);
                return Err(e);
            }
            tt += w * dt;
        }
        Ok(())
    }
}

/// `exp(i dt Δ)` on a radial mesh by Taylor series, substepped so that each
/// substep has `|dt| ρ ≤ 1` with `ρ` bounding the spectral radius of `Δ`.
fn radial_schrodinger<T: Real>(grid: &SpatialGrid<T>, v: &mut [Complex<T>], dt: f64) {
    let k = grid.max_wavenumber().f64();
    let h = grid.spacing().f64();
    let rho = k * k + (grid.dim() as f64 - 1.0) * k * 2.0 / h;
    let sub = (dt.abs() * rho).ceil().max(1.0) as usize;
    let tau = dt / sub as f64;
    let mut term = vec![Complex::new(T::zero(), T::zero()); v.len()];
    for _ in 0..sub {
        term.copy_from_slice(v);
        let scale = v.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        for j in 1..60 {
            let lap = grid.laplacian(&term);
            let c = Complex::new(T::zero(), T::lit(tau / j as f64));
            let mut size = T::zero();
            for ((t, l), out) in term.iter_mut().zip(lap).zip(v.iter_mut()) {
                *t = l * c;
                *out = *out + *t;
                size = size.max(t.norm());
            }
            if size <= T::epsilon() * T::lit(1e-2) * scale {
                break;
            }
        }
    }
}

/// One Strang step of the physical equation (dealiased on the line).
pub fn step<T: Real>(u: &ComplexField<T>, spec: &CoefficientSpec, dt: T) -> Result<ComplexField<T>> {
    let mut s = SplitStep::physical(u.grid(), spec, !u.grid().is_radial());
    let mut v = u.values().to_vec();
    s.step_in_place(&mut v, 0.0, dt.f64())?;
    Ok(ComplexField::from_parts(u.grid().clone(), v))
}

/// Mass, energy and momentum of `u`.
pub fn conserved<T: Real>(u: &ComplexField<T>, spec: &CoefficientSpec) -> ConservedReport {
    let grid = u.grid();
    let p = critical_power::<T>(grid.dim()).f64();
    let mut pot = 0.0;
    let mut nl = 0.0;
    for ((z, &x), &w) in u.values().iter().zip(grid.coords()).zip(grid.weights()) {
        let a = z.norm_sqr().f64();
        let x = x.f64();
        let w = w.f64();
        pot += w * spec.v(x) * a;
        nl += w * spec.g(x) * a.powf(1.0 + 0.5 * p);
    }
    let energy = 0.5 * u.grad_sq().f64() - nl / (2.0 + p) + 0.5 * pot;
    ConservedReport {
        mass: u.l2_sq().f64(),
        energy,
        momentum: momentum(u),
    }
}

fn momentum<T: Real>(u: &ComplexField<T>) -> Vec<f64> {
    let grid = u.grid();
    if grid.is_radial() {
        return vec![0.0; grid.dim()];
    }
    // u = a + ib: Im(u ∂ū) = b ∂a - a ∂b
    let real = |f: &dyn Fn(&Complex<T>) -> T| -> Vec<Complex<T>> {
        u.values().iter().map(|z| Complex::new(f(z), T::zero())).collect()
    };
    let a = real(&|z| z.re);
    let b = real(&|z| z.im);
    let da = grid.derivative(&a);
    let db = grid.derivative(&b);
    let m: f64 = (0..a.len())
        .map(|j| (grid.weights()[j] * (b[j].re * da[j].re - a[j].re * db[j].re)).f64())
        .sum();
    vec![m]
}

/// Right-hand side of the momentum law
/// `d/dt Im∫u∇ū = ∫∇V|u|² - N/(N+2) ∫∇g |u|^{2+4/N}`.
pub fn momentum_rate<T: Real>(u: &ComplexField<T>, spec: &CoefficientSpec) -> Vec<f64> {
    let grid = u.grid();
    if grid.is_radial() {
        return vec![0.0; grid.dim()];
    }
    let n = grid.dim() as f64;
    let p = 4.0 / n;
    let mut acc = 0.0;
    for ((z, &x), &w) in u.values().iter().zip(grid.coords()).zip(grid.weights()) {
        let a = z.norm_sqr().f64();
        let x = x.f64();
        let dv = spec.v_jet(x).derivative(1);
        let dg = spec.g_jet(x).derivative(1);
        acc += w.f64() * (dv * a - n / (n + 2.0) * dg * a.powf(1.0 + 0.5 * p));
    }
    vec![acc]
}

/// Samples `S(t, ·)` on the grid of the discrete ground state `q`;
/// `Q(x/|t|)` is evaluated by spectral interpolation and set to zero where
/// `|x|/|t|` leaves the box.
pub fn exact_pc_solution<T: Real>(t: T, q: &ComplexField<T>) -> Result<ComplexField<T>> {
    if !(t < T::zero()) || !t.is_finite() {
        return Err(Error::InvalidArgument("the explicit solution needs t < 0".into()));
    }
    let grid = q.grid();
    let at = -t;
    let q = scaled_samples(q, T::one() / at);
    let amp = at.powf(-T::lit(0.5) * T::count(grid.dim()));
    let vals = q
        .iter()
        .zip(grid.coords())
        .map(|(z, &x)| {
            let ph = -T::one() / t + x * x / (T::lit(4.0) * t);
            *z * amp * Complex::new(ph.cos(), ph.sin())
        })
        .collect();
    Ok(ComplexField::from_parts(grid.clone(), vals))
}

/// Interpolated samples of `f(c x)` on the grid nodes, zero outside the box.
pub(crate) fn scaled_samples<T: Real>(f: &ComplexField<T>, c: T) -> Vec<Complex<T>> {
    let grid = f.grid();
    if c == T::one() {
        return f.values().to_vec();
    }
    let x0 = grid.coords()[0];
    let vals = grid.interpolate_uniform(f.values(), x0 * c, grid.spacing() * c, grid.points());
    mask_outside(grid, vals, |x| x * c)
}

pub(crate) fn mask_outside<T: Real>(
    grid: &SpatialGrid<T>,
    mut vals: Vec<Complex<T>>,
    arg: impl Fn(T) -> T,
) -> Vec<Complex<T>> {
    let r = grid.half_width();
    for (z, &x) in vals.iter_mut().zip(grid.coords()) {
        if arg(x).abs() > r {
            *z = Complex::new(T::zero(), T::zero());
        }
    }
    vals
}

/// Pseudo-conformal transform of a field `u` given at time `tau ≠ 0`:
/// returns `U(x) = |τ|^{N/2} u(-τx) e^{-iτ|x|²/4}` together with its time
/// `-1/τ`. It maps `Q e^{iτ}` to `S(-1/τ)`; applying it twice gives `u(-x)`.
pub fn pseudo_conformal<T: Real>(u: &ComplexField<T>, tau: T) -> Result<(ComplexField<T>, T)> {
    if tau == T::zero() || !tau.is_finite() {
        return Err(Error::InvalidArgument("the transform needs a nonzero finite time".into()));
    }
    let grid = u.grid();
    let c = if grid.is_radial() { tau.abs() } else { -tau };
    let vals = scaled_samples(u, c);
    let amp = tau.abs().powf(T::lit(0.5) * T::count(grid.dim()));
    let out = vals
        .iter()
        .zip(grid.coords())
        .map(|(z, &x)| {
            let ph = -tau * x * x / T::lit(4.0);
            *z * amp * Complex::new(ph.cos(), ph.sin())
        })
        .collect();
    Ok((ComplexField::from_parts(grid.clone(), out), -T::one() / tau))
}

#[derive(Clone, Debug)]
pub struct Snapshot<T: Real> {
    pub t: f64,
    pub field: ComplexField<T>,
    pub conserved: ConservedReport,
    pub grad_norm: f64,
    /// step size that led to this snapshot (0 for the initial one)
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    BlowupCap,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub snapshots: Vec<Snapshot<T>>,
    pub stop: StopReason,
    pub steps: usize,
    /// largest `|mass(t)/mass(t0) - 1|` over the snapshots
    pub mass_drift: f64,
    /// largest `|E(t) - E(t0)| / max(|E(t0)|, ||∇u0||²)` over the snapshots
    pub energy_drift: f64,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &Snapshot<T> {
        self.snapshots.last().expect("trajectory holds the initial snapshot")
    }
}

fn snapshot<T: Real>(t: f64, v: &[Complex<T>], grid: &SpatialGrid<T>, spec: &CoefficientSpec, conj: bool, dt: f64) -> Snapshot<T> {
    let vals = if conj { v.iter().map(|z| z.conj()).collect() } else { v.to_vec() };
    let field = ComplexField::from_parts(grid.clone(), vals);
    let grad_norm = field.grad_sq().f64().sqrt();
    Snapshot {
        t,
        conserved: conserved(&field, spec),
        field,
        grad_norm,
        dt,
    }
}

/// Integrates from `cfg.t_span.0` to `cfg.t_span.1`. Backward runs use the
/// conjugation symmetry `u(t) ↦ ū(-t)` so a single forward code path is used.
pub fn evolve_interval<T: Real>(u0: &ComplexField<T>, spec: &CoefficientSpec, cfg: &EvolveConfig) -> Result<Trajectory<T>> {
    cfg.validate()?;
    let grid = u0.grid().clone();
    let (t0, t1) = cfg.t_span;
    let backward = t1 < t0;
    let (tau0, tau1) = if backward { (-t0, -t1) } else { (t0, t1) };
    let to_t = |tau: f64| if backward { -tau } else { tau };
    let mut v: Vec<Complex<T>> = if backward {
        u0.values().iter().map(|z| z.conj()).collect()
    } else {
        u0.values().to_vec()
    };
    let mut stepper = SplitStep::physical(&grid, spec, cfg.dealias);
    let first = snapshot(t0, &v, &grid, spec, backward, 0.0);
    let g0 = first.grad_norm;
    let e_scale = first.conserved.energy.abs().max(g0 * g0).max(f64::MIN_POSITIVE);
    let m0 = first.conserved.mass;
    let mut snaps = vec![first];
    let mut tau = tau0;
    let mut steps = 0usize;
    let mut stop = StopReason::Completed;
    let mut grad = g0;
    let mut last_dt = 0.0;
    let span = tau1 - tau0;
    while tau < tau1 - 1e-14 * span.abs().max(1.0) {
        let mut dt = cfg.dt0;
        if cfg.adapt && grad > 0.0 && g0 > 0.0 {
            dt *= (g0 / grad).powi(2).min(1.0);
        }
        if dt < cfg.dt_min {
            return Err(Error::StepUnderflow { t: to_t(tau), dt });
        }
        if tau + dt > tau1 {
            dt = tau1 - tau;
        }
        stepper.step_in_place(&mut v, tau, dt).map_err(|e| match e {
            Error::BlowupSuspected { .. } => Error::BlowupSuspected {
                t: to_t(tau),
                grad_norm: grad,
            },
            other => other,
        })?;
        tau += dt;
        steps += 1;
        last_dt = dt;
        if cfg.adapt || cfg.blowup_gradient_cap.is_finite() {
            grad = grad_norm(&grid, &v);
        }
        let done = tau >= tau1 - 1e-14 * span.abs().max(1.0);
        let capped = grad > cfg.blowup_gradient_cap;
        if done || capped || (cfg.snapshot_every > 0 && steps % cfg.snapshot_every == 0) {
            snaps.push(snapshot(to_t(tau), &v, &grid, spec, backward, dt));
        }
        if capped {
            stop = StopReason::BlowupCap;
            break;
        }
    }
    if steps == 0 {
        snaps.push(snapshot(t1, &v, &grid, spec, backward, last_dt));
    }
    let mass_drift = snaps.iter().map(|s| (s.conserved.mass / m0 - 1.0).abs()).fold(0.0, f64::max);
    let e0 = snaps[0].conserved.energy;
    let energy_drift = snaps
        .iter()
        .map(|s| (s.conserved.energy - e0).abs() / e_scale)
        .fold(0.0, f64::max);
    Ok(Trajectory {
        snapshots: snaps,
        stop,
        steps,
        mass_drift,
        energy_drift,
    })
}

fn grad_norm<T: Real>(grid: &SpatialGrid<T>, v: &[Complex<T>]) -> f64 {
    let d = grid.derivative(v);
    d.iter()
        .zip(grid.weights())
        .map(|(z, &w)| (w * z.norm_sqr()).f64())
        .sum::<f64>()
        .sqrt()
}
