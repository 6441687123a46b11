//! Modulation decomposition
//! `u(t,x) = λ^{-N/2} (Q + ε)((x+w)/λ) e^{-i b|y|²/4 + iγ}`, `y = (x+w)/λ`,
//! with the orthogonality conditions
//! `(ε, iΛQ) = (ε, |y|²Q) = (ε, iρ) = (ε, yQ) = 0`,
//! and the diagnostics built on it: rescaled time, the modulation vector,
//! the ε-equation residual, and the modified energies `H` and `S = H/λ^m`.
//!
//! Fields may be stored in a modulation [`Frame`]: samples `v(z)` with
//! `u(x) = λ₀^{-N/2} v((x+w₀)/λ₀) e^{-i b₀|z|²/4 + iγ₀}`. Parameters are
//! always reported in physical variables.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSpec;
use crate::error::{Error, Result};
use crate::evolve::mask_outside;
use crate::field::ComplexField;
use crate::profiles::{critical_power, ProfileBundle};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub lambda0: f64,
    pub b0: f64,
    pub gamma0: f64,
    pub w0: Vec<f64>,
}

impl Frame {
    pub fn identity(dim: usize) -> Self {
        Self {
            lambda0: 1.0,
            b0: 0.0,
            gamma0: 0.0,
            w0: vec![0.0; dim],
        }
    }

    /// `(λ₀, b₀, γ₀, w₀) = (1/σ, 1/σ, σ, 0)`: the frame in which `S` is `Q`.
    pub fn pseudo_conformal(sigma: f64, dim: usize) -> Self {
        Self {
            lambda0: 1.0 / sigma,
            b0: 1.0 / sigma,
            gamma0: sigma,
            w0: vec![0.0; dim],
        }
    }
}

/// Modulation parameters `(λ, b, γ, w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda: f64,
    pub b: f64,
    pub gamma: f64,
    pub w: Vec<f64>,
}

impl Params {
    pub fn new(lambda: f64, b: f64, gamma: f64, w: Vec<f64>) -> Self {
        Self { lambda, b, gamma, w }
    }

    fn w1(&self) -> f64 {
        self.w.first().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeOptions {
    /// tube radius in H¹
    pub delta: f64,
    pub ortho_tol: f64,
    pub max_iter: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            delta: 0.2,
            ortho_tol: 1e-10,
            max_iter: 60,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionDiagnostics {
    /// `(ε, φ)` for the orthogonality directions, by name
    pub ortho: Vec<(String, f64)>,
    /// `(ε, Q) + ½||ε||²`, which vanishes when the mass equals `||Q||²`
    pub near_identity: f64,
    /// `(ε, i yQ)`, logged alongside the translation condition `(ε, yQ)`
    pub translation_imag: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

impl DecompositionDiagnostics {
    pub fn max_ortho(&self) -> f64 {
        self.ortho.iter().map(|o| o.1.abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct ModulationState<T: Real> {
    pub lambda: f64,
    pub b: f64,
    /// unwrapped phase
    pub gamma: f64,
    pub w: Vec<f64>,
    pub eps: ComplexField<T>,
    pub s: f64,
    pub t: f64,
    pub diagnostics: DecompositionDiagnostics,
}

impl<T: Real> ModulationState<T> {
    pub fn params(&self) -> Params {
        Params::new(self.lambda, self.b, self.gamma, self.w.clone())
    }

    /// `γ` reduced to `(-π, π]`.
    pub fn gamma_wrapped(&self) -> f64 {
        wrap_phase(self.gamma)
    }

    /// `||ε||²_{H¹} + b² || |y| ε ||²`
    pub fn eps_energy(&self) -> f64 {
        self.eps.h1_sq().f64() + self.b * self.b * self.eps.moment_sq(1).f64()
    }

    pub fn eps_h1(&self) -> f64 {
        self.eps.h1_sq().f64().sqrt()
    }
}

pub fn wrap_phase(g: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = g.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// `E(y) = (λ/λ₀)^{N/2} v(z) e^{-i b₀|z|²/4 + iγ₀} e^{i b|y|²/4 - iγ}`,
/// `z = (λy - w + w₀)/λ₀`, which equals `Q + ε` at the decomposition.
fn rescaled_profile<T: Real>(v: &ComplexField<T>, frame: &Frame, p: &Params) -> Vec<Complex<T>> {
    let grid = v.grid();
    let dim = grid.dim();
    let lr = p.lambda / frame.lambda0;
    let shift = (frame.w0.first().copied().unwrap_or(0.0) - p.w1()) / frame.lambda0;
    let y0 = grid.coords()[0].f64();
    let h = grid.spacing().f64();
    let vals = grid.interpolate_uniform(v.values(), T::lit(lr * y0 + shift), T::lit(lr * h), grid.points());
    let vals = mask_outside(grid, vals, |y| T::lit(lr * y.f64() + shift));
    let amp = lr.powf(0.5 * dim as f64);
    vals.iter()
        .zip(grid.coords())
        .map(|(z, &y)| {
            let y = y.f64();
            let zz = lr * y + shift;
            let ph = -frame.b0 * zz * zz / 4.0 + frame.gamma0 + p.b * y * y / 4.0 - p.gamma;
            *z * Complex::from_polar(T::lit(amp), T::lit(ph))
        })
        .collect()
}

/// Inverse of the decomposition: samples of the field in `frame` built from
/// the parameters and `ε`.
pub fn reconstruct<T: Real>(
    p: &Params,
    eps: &ComplexField<T>,
    frame: &Frame,
    bundle: &ProfileBundle<T>,
) -> Result<ComplexField<T>> {
    let grid = &bundle.grid;
    let qe = (&bundle.q + eps).into_values();
    let dim = grid.dim();
    let inv = frame.lambda0 / p.lambda;
    let shift = (p.w1() - frame.w0.first().copied().unwrap_or(0.0)) / p.lambda;
    let z0 = grid.coords()[0].f64();
    let h = grid.spacing().f64();
    let vals = grid.interpolate_uniform(&qe, T::lit(inv * z0 + shift), T::lit(inv * h), grid.points());
    let vals = mask_outside(grid, vals, |z| T::lit(inv * z.f64() + shift));
    let amp = inv.powf(0.5 * dim as f64);
    let out = vals
        .iter()
        .zip(grid.coords())
        .map(|(v, &z)| {
            let z = z.f64();
            let y = inv * z + shift;
            let ph = -p.b * y * y / 4.0 + p.gamma + frame.b0 * z * z / 4.0 - frame.gamma0;
            *v * Complex::from_polar(T::lit(amp), T::lit(ph))
        })
        .collect();
    ComplexField::new(grid.clone(), out)
}

struct Directions<T: Real> {
    names: Vec<&'static str>,
    fields: Vec<ComplexField<T>>,
}

fn directions<T: Real>(bundle: &ProfileBundle<T>) -> Directions<T> {
    let mut names = vec!["iLamQ", "|y|^2Q", "irho"];
    let mut fields = vec![bundle.lam_q.times_i(), bundle.y2_q.clone(), bundle.rho.times_i()];
    if !bundle.grid.is_radial() {
        names.push("yQ");
        fields.push(bundle.y_q[0].clone());
    }
    Directions { names, fields }
}

/// Removes from `eps` its components along the decomposition directions and
/// along `Q` (real `L²` pairing), leaving a witness for the coercivity of `H`.
pub fn project_orthogonal<T: Real>(eps: &ComplexField<T>, bundle: &ProfileBundle<T>) -> Result<ComplexField<T>> {
    eps.same_grid(&bundle.q)?;
    let mut dirs = directions(bundle).fields;
    dirs.push(bundle.q.clone());
    let k = dirs.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dirs[i].inner_unchecked(&dirs[j]).f64());
    let rhs = DVector::from_iterator(k, dirs.iter().map(|d| eps.inner_unchecked(d).f64()));
    let a = gram
        .lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok(dirs.iter().zip(a.iter()).fold(eps.clone(), |acc, (d, &c)| &acc - &d.scale_real(T::lit(c))))
}

fn residuals<T: Real>(e: &ComplexField<T>, dirs: &Directions<T>) -> Vec<f64> {
    dirs.fields.iter().map(|f| e.inner_unchecked(f).f64()).collect()
}

fn unpack(p: &Params, x: &[f64]) -> Params {
    let mut q = p.clone();
    q.lambda = x[0];
    q.b = x[1];
    q.gamma = x[2];
    if x.len() > 3 {
        q.w = vec![x[3]];
    }
    q
}

fn pack(p: &Params, radial: bool) -> Vec<f64> {
    let mut x = vec![p.lambda, p.b, p.gamma];
    if !radial {
        x.push(p.w1());
    }
    x
}

/// Parameter derivatives of `E`, one field per unknown.
fn jacobian_fields<T: Real>(e: &ComplexField<T>, p: &Params) -> Vec<ComplexField<T>> {
    let grid = e.grid();
    let de = e.gradient().expect("finite profile");
    let half_n = 0.5 * grid.dim() as f64;
    let (l, b) = (p.lambda, p.b);
    let d_lambda = ComplexField::from_parts(
        grid.clone(),
        e.values()
            .iter()
            .zip(de.values())
            .zip(grid.coords())
            .map(|((&z, &dz), &y)| {
                let y = y.f64();
                let lam = z * T::lit(half_n) + dz * T::lit(y);
                (lam - z * Complex::new(T::zero(), T::lit(0.5 * b * y * y))) * T::lit(1.0 / l)
            })
            .collect(),
    );
    let d_b = e.map(|y, z| z * Complex::new(T::zero(), y * y / T::lit(4.0)));
    let d_gamma = e.map(|_, z| z * Complex::new(T::zero(), -T::one()));
    let mut out = vec![d_lambda, d_b, d_gamma];
    if !grid.is_radial() {
        let d_w = ComplexField::from_parts(
            grid.clone(),
            e.values()
                .iter()
                .zip(de.values())
                .zip(grid.coords())
                .map(|((&z, &dz), &y)| {
                    (dz - z * Complex::new(T::zero(), T::lit(0.5 * b * y.f64()))) * T::lit(-1.0 / l)
                })
                .collect(),
        );
        out.push(d_w);
    }
    out
}

/// Newton solve of the orthogonality conditions for `(λ, b, γ, w)`.
///
/// `field` holds samples in `frame`; the result carries physical parameters
/// and `ε` on the `y`-grid. `s` is left at zero for the caller to fill in;
/// `t` is copied from the argument.
pub fn decompose<T: Real>(
    field: &ComplexField<T>,
    frame: &Frame,
    guess: &Params,
    bundle: &ProfileBundle<T>,
    opts: &DecomposeOptions,
    t: f64,
) -> Result<ModulationState<T>> {
    field.same_grid(&bundle.q)?;
    if !(guess.lambda > 0.0) || !guess.b.is_finite() || !guess.gamma.is_finite() || guess.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("decomposition guess must be finite with λ > 0".into()));
    }
    let radial = bundle.grid.is_radial();
    let dirs = directions(bundle);
    let eval = |p: &Params| -> (ComplexField<T>, Vec<f64>) {
        let e = ComplexField::from_parts(bundle.grid.clone(), rescaled_profile(field, frame, p));
        let eps = &e - &bundle.q;
        let r = residuals(&eps, &dirs);
        (e, r)
    };
    let norm = |r: &[f64]| r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut p = guess.clone();
    if radial {
        p.w = vec![0.0; bundle.grid.dim()];
    }
    let (mut e, mut r) = eval(&p);
    let mut history = vec![norm(&r)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let current = norm(&r);
        if current < 1e-3 * opts.ortho_tol || !current.is_finite() {
            break;
        }
        iterations += 1;
        let cols = jacobian_fields(&e, &p);
        let k = dirs.fields.len();
        let jac = DMatrix::from_fn(k, k, |i, j| cols[j].inner_unchecked(&dirs.fields[i]).f64());
        let rhs = DVector::from_iterator(k, r.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::NewtonStagnation { last: current, history });
        };
        let x0 = pack(&p, radial);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let x: Vec<f64> = x0.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if x[0] > 0.0 {
                let cand = unpack(&p, &x);
                let (ce, cr) = eval(&cand);
                if norm(&cr) < current {
                    accepted = Some((cand, ce, cr));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cp, ce, cr)) => {
                p = cp;
                e = ce;
                r = cr;
                history.push(norm(&r));
            }
            None => break,
        }
    }
    let last = norm(&r);
    if !(last < opts.ortho_tol) {
        return Err(Error::NewtonStagnation { last, history });
    }
    let eps = &e - &bundle.q;
    let dist = eps.h1_sq().f64().sqrt();
    if !(dist < opts.delta) {
        return Err(Error::OutsideTube {
            distance: dist,
            delta: opts.delta,
        });
    }
    let ortho = dirs
        .names
        .iter()
        .zip(r.iter())
        .map(|(n, v)| (n.to_string(), *v))
        .collect();
    let near_identity = eps.inner_unchecked(&bundle.q).f64() + 0.5 * eps.l2_sq().f64();
    let translation_imag = if radial {
        0.0
    } else {
        eps.inner_unchecked(&bundle.y_q[0].times_i()).f64()
    };
    Ok(ModulationState {
        lambda: p.lambda,
        b: p.b,
        gamma: p.gamma,
        w: p.w.clone(),
        eps,
        s: 0.0,
        t,
        diagnostics: DecompositionDiagnostics {
            ortho,
            near_identity,
            translation_imag,
            iterations,
            history,
        },
    })
}

/// `s(t) = s₁ - ∫_t^{t₁} λ(τ)^{-2} dτ` with `s₁ = -1/t₁` and `t₁` the latest
/// sample time. Each interval uses the rule that is exact for `λ` linear in
/// `t`, `∫ dτ/λ² = Δt/(λ_k λ_{k+1})`. Output follows the input order.
pub fn rescaled_time(ts: &[f64], lambdas: &[f64]) -> Result<Vec<f64>> {
    if ts.len() != lambdas.len() {
        return Err(Error::InvalidArgument("times and scales differ in length".into()));
    }
    if ts.is_empty() {
        return Ok(Vec::new());
    }
    if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("λ must stay positive".into()));
    }
    let mut idx: Vec<usize> = (0..ts.len()).collect();
    idx.sort_by(|&a, &b| ts[b].partial_cmp(&ts[a]).unwrap_or(std::cmp::Ordering::Equal));
    let t1 = ts[idx[0]];
    if !(t1 < 0.0) {
        return Err(Error::InvalidArgument("anchor time must be negative".into()));
    }
    let mut out = vec![0.0; ts.len()];
    let mut s = -1.0 / t1;
    out[idx[0]] = s;
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if ts[a] == ts[b] {
            return Err(Error::NonMonotoneTime);
        }
        s -= (ts[a] - ts[b]) / (lambdas[a] * lambdas[b]);
        out[b] = s;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModVector {
    /// `λ_s/λ + b`
    pub m1: f64,
    /// `b_s + b²`
    pub m2: f64,
    /// `1 - γ_s`
    pub m3: f64,
    /// `w_s`
    pub m4: Vec<f64>,
}

impl ModVector {
    pub fn norm(&self) -> f64 {
        (self.m1 * self.m1 + self.m2 * self.m2 + self.m3 * self.m3 + self.m4.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Second-order weights of the derivative at the middle of three nodes.
fn three_point(s: [f64; 3]) -> Result<[f64; 3]> {
    let h1 = s[1] - s[0];
    let h2 = s[2] - s[1];
    if !(h1 * h2 > 0.0) {
        return Err(Error::NonMonotoneTime);
    }
    Ok([-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))])
}

fn window<'a, T: Real>(states: &'a [ModulationState<T>]) -> Result<[&'a ModulationState<T>; 3]> {
    if states.len() < 3 {
        return Err(Error::InsufficientWindow(format!("{} states, need at least 3", states.len())));
    }
    let c = states.len() / 2;
    Ok([&states[c - 1], &states[c], &states[c + 1]])
}

/// Modulation vector at the middle state of the window, by second-order
/// central differences in `s` (nonuniform spacing allowed, either direction).
pub fn mod_vector<T: Real>(states: &[ModulationState<T>]) -> Result<ModVector> {
    let w = window(states)?;
    let c = three_point([w[0].s, w[1].s, w[2].s])?;
    let d = |f: &dyn Fn(&ModulationState<T>) -> f64| c[0] * f(w[0]) + c[1] * f(w[1]) + c[2] * f(w[2]);
    let mid = w[1];
    let m4 = (0..mid.w.len()).map(|j| d(&|st| st.w[j])).collect();
    Ok(ModVector {
        m1: d(&|st| st.lambda.ln()) + mid.b,
        m2: d(&|st| st.b) + mid.b * mid.b,
        m3: 1.0 - d(&|st| st.gamma),
        m4,
    })
}

/// [`mod_vector`] at every interior sample.
pub fn mod_series<T: Real>(states: &[ModulationState<T>]) -> Result<Vec<ModVector>> {
    if states.len() < 3 {
        return Ok(Vec::new());
    }
    (1..states.len() - 1).map(|k| mod_vector(&states[k - 1..=k + 1])).collect()
}

/// `∂ε/∂s` at the middle state of the window.
pub fn eps_derivative<T: Real>(states: &[ModulationState<T>]) -> Result<ComplexField<T>> {
    let w = window(states)?;
    let c = three_point([w[0].s, w[1].s, w[2].s])?;
    let vals = (0..w[1].eps.len())
        .map(|j| {
            w[0].eps.values()[j] * T::lit(c[0]) + w[1].eps.values()[j] * T::lit(c[1]) + w[2].eps.values()[j] * T::lit(c[2])
        })
        .collect();
    ComplexField::new(w[1].eps.grid().clone(), vals)
}

/// Left side of the ε-equation minus `Ψ = λ²V(λy - w)Q`; with
/// `include_psi = false` the `Ψ` term is left out.
pub fn epsilon_residual_field<T: Real>(
    state: &ModulationState<T>,
    eps_s: &ComplexField<T>,
    md: &ModVector,
    spec: &CoefficientSpec,
    bundle: &ProfileBundle<T>,
    include_psi: bool,
) -> Result<ComplexField<T>> {
    let grid = &bundle.grid;
    eps_s.same_grid(&state.eps)?;
    let half_p = critical_power::<f64>(grid.dim()) * 0.5;
    let (l, b) = (state.lambda, state.b);
    let w = state.w.first().copied().unwrap_or(0.0);
    let m4 = md.m4.first().copied().unwrap_or(0.0);
    let qe = &bundle.q + &state.eps;
    let lap = state.eps.laplacian()?;
    let dqe = qe.gradient()?;
    let half_n = 0.5 * grid.dim() as f64;
    let f = |z: Complex<T>| z * T::lit(z.norm_sqr().f64().powf(half_p));
    let vals = (0..grid.points())
        .map(|j| {
            let y = grid.coords()[j].f64();
            let x = l * y - w;
            let (g, v) = (spec.g(x), spec.v(x));
            let e = state.eps.values()[j];
            let q = bundle.q.values()[j];
            let z = qe.values()[j];
            let dz = dqe.values()[j];
            let lam = z * T::lit(half_n) + dz * T::lit(y);
            let i = Complex::new(T::zero(), T::one());
            let mut r = i * eps_s.values()[j] + lap.values()[j] - e;
            r = r + f(z) * T::lit(g) - f(q) - e * T::lit(l * l * v);
            r = r - i * lam * T::lit(md.m1) + z * T::lit(md.m3) + z * T::lit(md.m2 * y * y / 4.0);
            r = r - z * T::lit(md.m1 * b * y * y / 2.0);
            r = r + i * dz * T::lit(m4 / l) + z * T::lit(0.5 * b / l * m4 * y);
            if include_psi {
                r = r - q * T::lit(l * l * v);
            }
            r
        })
        .collect();
    Ok(ComplexField::from_parts(grid.clone(), vals))
}

pub fn epsilon_residual<T: Real>(
    state: &ModulationState<T>,
    eps_s: &ComplexField<T>,
    md: &ModVector,
    spec: &CoefficientSpec,
    bundle: &ProfileBundle<T>,
) -> Result<f64> {
    Ok(epsilon_residual_field(state, eps_s, md, spec, bundle, true)?.l2().f64())
}

/// Parameters of the modified energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub m: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// `L = 3/2 + 1/K`
    pub big_l: f64,
}

pub fn big_l(k: u32) -> f64 {
    1.5 + 1.0 / k as f64
}

/// `κ = (2 - L)/2`
pub fn kappa(k: u32) -> f64 {
    (2.0 - big_l(k)) / 2.0
}

impl EnergyParams {
    /// `ε₁ = 0.05`, `m` halfway between `2(1+ε₁)` and `2L`, `ε₂ = mμε₁/32`.
    pub fn defaults(mu: f64, k: u32) -> Self {
        let eps1 = 0.05;
        let l = big_l(k);
        let m = 0.5 * (2.0 * (1.0 + eps1) + 2.0 * l);
        Self {
            m,
            eps1,
            eps2: m * mu * eps1 / 32.0,
            big_l: l,
        }
    }

    /// All violated constraints, each naming its inequality.
    pub fn violations(&self, mu: f64) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.eps1 > 0.0) {
            v.push(format!("1 < 1+ε₁ fails: ε₁ = {}", self.eps1));
        }
        if !(1.0 + self.eps1 < self.m / 2.0) {
            v.push(format!("1+ε₁ < m/2 fails: ε₁ = {}, m = {}", self.eps1, self.m));
        }
        if !(self.m / 2.0 < self.big_l) {
            v.push(format!("m/2 < L fails: m = {}, L = {}", self.m, self.big_l));
        }
        let cap = self.m * mu * self.eps1 / 16.0;
        if !(self.eps2 > 0.0 && self.eps2 < cap) {
            v.push(format!("0 < ε₂ < mμε₁/16 fails: ε₂ = {}, mμε₁/16 = {cap}", self.eps2));
        }
        v
    }

    pub fn validate(&self, mu: f64) -> Result<()> {
        let v = self.violations(mu);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Constraint(v.join("; ")))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyDiagnostics {
    pub h: f64,
    pub s_energy: f64,
    /// `H`
    pub coercivity_lhs: f64,
    /// `(μ/4)||ε||²_{H¹} + ε₂ b² || |y| ε ||²`
    pub coercivity_rhs: f64,
    pub coercive: bool,
    /// `H / (||ε||²_{H¹} + b² || |y| ε ||²)`, the constant of the upper bound on `λ^m S`
    pub upper_ratio: f64,
    pub params: EnergyParams,
}

/// `F(Q+ε) - F(Q) - dF(Q)(ε)` for `F(z) = |z|^{p+2}/(p+2)`, without cancellation.
pub(crate) fn f_remainder(q: Complex<f64>, e: Complex<f64>, p: f64) -> f64 {
    let qn = p * 0.5 + 1.0;
    let c = q.norm_sqr();
    let en = e.norm_sqr();
    if c == 0.0 {
        return en.powf(qn) / (p + 2.0);
    }
    let delta = 2.0 * (q * e.conj()).re + en;
    let x = delta / c;
    let phi = if x.abs() < 0.5 {
        // (1+x)^q - 1 - qx as a binomial series
        let mut term = qn * (qn - 1.0) / 2.0 * x * x;
        let mut sum = 0.0_f64;
        let mut j = 2.0;
        while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) && j < 200.0 {
            sum += term;
            term *= (qn - j) / (j + 1.0) * x;
            j += 1.0;
        }
        sum
    } else {
        (1.0 + x).powf(qn) - 1.0 - qn * x
    };
    c.powf(qn) * phi / (p + 2.0) + 0.5 * c.powf(qn - 1.0) * en
}

/// Modified energy `H` and `S = H/λ^m` with the coercivity check.
pub fn energy_h<T: Real>(
    state: &ModulationState<T>,
    spec: &CoefficientSpec,
    params: &EnergyParams,
    mu: f64,
    bundle: &ProfileBundle<T>,
) -> Result<EnergyDiagnostics> {
    params.validate(mu)?;
    let grid = &bundle.grid;
    let p = critical_power::<f64>(grid.dim());
    let (l, b) = (state.lambda, state.b);
    let w = state.w.first().copied().unwrap_or(0.0);
    let h1 = state.eps.h1_sq().f64();
    let y2 = state.eps.moment_sq(1).f64();
    let mut nonlinear = 0.0;
    let mut potential = 0.0;
    for j in 0..grid.points() {
        let y = grid.coords()[j].f64();
        let wt = grid.weights()[j].f64();
        let x = l * y - w;
        let q = bundle.q.values()[j];
        let e = state.eps.values()[j];
        let qf = Complex::new(q.re.f64(), q.im.f64());
        let ef = Complex::new(e.re.f64(), e.im.f64());
        nonlinear += wt * spec.g(x) * f_remainder(qf, ef, p);
        potential += wt * spec.v(x) * ef.norm_sqr();
    }
    let h = 0.5 * h1 + params.eps2 * b * b * y2 - nonlinear + 0.5 * l * l * potential;
    let rhs = 0.25 * mu * h1 + params.eps2 * b * b * y2;
    let denom = h1 + b * b * y2;
    Ok(EnergyDiagnostics {
        h,
        s_energy: h / l.powf(params.m),
        coercivity_lhs: h,
        coercivity_rhs: rhs,
        coercive: h >= rhs,
        upper_ratio: if denom > 0.0 { h / denom } else { 0.0 },
        params: *params,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergySample {
    pub s: f64,
    pub s_energy: f64,
    pub b: f64,
    pub lambda: f64,
    pub in_regime: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub skipped: bool,
    pub reason: Option<String>,
    /// fraction of interior samples with `dS/ds ≥ -C_bound (b/λ^m) s^{-(2L+κ)}`
    pub fraction_ok: f64,
    pub c_bound: f64,
    /// 95th percentile of the constant each sample requires
    pub fitted_c: f64,
    pub samples: usize,
}

/// Default constant in the one-sided bound on `dS/ds`.
pub const MONOTONICITY_C: f64 = 1e3;

/// One-sided check of `dS/ds ≳ -(b/λ^m) s^{-(2L+κ)}` by finite differences.
pub fn energy_monotonicity_check(samples: &[EnergySample], params: &EnergyParams, k: u32, c_bound: f64) -> MonotonicityReport {
    let skipped = |reason: &str| MonotonicityReport {
        skipped: true,
        reason: Some(reason.to_string()),
        fraction_ok: 0.0,
        c_bound,
        fitted_c: f64::NAN,
        samples: samples.len(),
    };
    if samples.iter().any(|s| !s.in_regime) {
        return skipped("trajectory leaves the bootstrap regime");
    }
    if samples.len() < 3 {
        return skipped("fewer than three samples");
    }
    let expo = 2.0 * params.big_l + kappa(k);
    let mut needed = Vec::new();
    for win in samples.windows(3) {
        let Ok(c) = three_point([win[0].s, win[1].s, win[2].s]) else {
            return skipped("rescaled time is not monotone");
        };
        let ds = c[0] * win[0].s_energy + c[1] * win[1].s_energy + c[2] * win[2].s_energy;
        let mid = &win[1];
        let scale = mid.b / mid.lambda.powf(params.m) * mid.s.powf(-expo);
        needed.push((-ds / scale).max(0.0));
    }
    let ok = needed.iter().filter(|&&c| c <= c_bound).count();
    let mut sorted = needed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    MonotonicityReport {
        skipped: false,
        reason: None,
        fraction_ok: ok as f64 / needed.len() as f64,
        c_bound,
        fitted_c: sorted[idx],
        samples: needed.len(),
    }
}

/// Bootstrap parameters `K` and `M` with `L = 3/2 + 1/K`, `1 < M < 2(L-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub k: u32,
    pub m_exp: f64,
}

impl BootstrapParams {
    /// `M` at the midpoint of `(1, 2(L-1))`.
    pub fn new(k: u32) -> Self {
        Self {
            k,
            m_exp: 0.5 * (1.0 + 2.0 * (big_l(k) - 1.0)),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.k == 0 {
            v.push("K must be a positive integer".to_string());
            return v;
        }
        let hi = 2.0 * (big_l(self.k) - 1.0);
        if !(self.m_exp > 1.0 && self.m_exp < hi) {
            v.push(format!("1 < M < 2(L-1) fails: M = {}, 2(L-1) = {hi}", self.m_exp));
        }
        v
    }

    pub fn big_l(&self) -> f64 {
        big_l(self.k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapFlags {
    /// `||ε||²_{H¹} + b²|| |y|ε ||² < s^{-2L}`
    pub eps: bool,
    /// `|sλ - 1| < s^{-M}`
    pub lambda: bool,
    /// `|sb - 1| < s^{-M}`
    pub b: bool,
    /// `|w| < s^{-3/2}`
    pub w: bool,
    /// `(||ε||²_{H¹} + b²|| |y|ε ||²) s^{2L+κ}`, bounded under the refined estimate
    pub refined_eps: f64,
    /// `|w| s²`, bounded under the refined estimate
    pub refined_w: f64,
}

impl BootstrapFlags {
    pub fn all(&self) -> bool {
        self.eps && self.lambda && self.b && self.w
    }

    /// Compact flag string `ELBW`, with `-` for a failing inequality.
    pub fn code(&self) -> String {
        [(self.eps, 'E'), (self.lambda, 'L'), (self.b, 'B'), (self.w, 'W')]
            .iter()
            .map(|&(ok, c)| if ok { c } else { '-' })
            .collect()
    }
}

pub fn bootstrap_monitor<T: Real>(state: &ModulationState<T>, params: &BootstrapParams) -> BootstrapFlags {
    bootstrap_flags(state.s, state.lambda, state.b, &state.w, state.eps_energy(), params)
}

/// Flag evaluation from scalar data.
pub fn bootstrap_flags(s: f64, lambda: f64, b: f64, w: &[f64], eps_energy: f64, params: &BootstrapParams) -> BootstrapFlags {
    let l = params.big_l();
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sm = s.powf(-params.m_exp);
    BootstrapFlags {
        eps: eps_energy < s.powf(-2.0 * l),
        lambda: (s * lambda - 1.0).abs() < sm,
        b: (s * b - 1.0).abs() < sm,
        w: wn < s.powf(-1.5),
        refined_eps: eps_energy * s.powf(2.0 * l + kappa(params.k)),
        refined_w: wn * s * s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::exact_pc_solution;
    use crate::grid::SpatialGrid;
    use crate::linops::estimate_mu;
    use crate::profiles::build_bundle;

    fn bundle() -> ProfileBundle<f64> {
        build_bundle(&SpatialGrid::periodic(20.0, 1024).unwrap()).unwrap()
    }

    fn wide_bundle() -> ProfileBundle<f64> {
        build_bundle(&SpatialGrid::periodic(30.0, 2048).unwrap()).unwrap()
    }

    #[test]
    fn tube_point_round_trip() {
        let b = bundle();
        let p = Params::new(0.1, 0.05, 0.3, vec![0.0]);
        // samples stored in the point's own frame, as along a construction run
        let frame = Frame {
            lambda0: 0.1,
            b0: 0.05,
            gamma0: 0.3,
            w0: vec![0.0],
        };
        let zero = ComplexField::zeros(&b.grid);
        let u = reconstruct(&p, &zero, &frame, &b).unwrap();
        let guess = Params::new(0.104, 0.04, 0.28, vec![0.002]);
        let st = decompose(&u, &frame, &guess, &b, &DecomposeOptions::default(), -0.1).unwrap();
        assert!((st.lambda - 0.1).abs() < 1e-10);
        assert!((st.b - 0.05).abs() < 1e-10);
        assert!((st.gamma - 0.3).abs() < 1e-10);
        assert!(st.w[0].abs() < 1e-10);
        assert!(st.eps_h1() < 1e-10, "{}", st.eps_h1());
        assert!(st.diagnostics.max_ortho() < 1e-10);
    }

    #[test]
    fn tube_point_in_a_different_frame() {
        let b = wide_bundle();
        let p = Params::new(0.1, 0.05, 0.3, vec![0.001]);
        let frame = Frame {
            lambda0: 0.11,
            b0: 0.02,
            gamma0: 0.1,
            w0: vec![0.0],
        };
        let zero = ComplexField::zeros(&b.grid);
        let u = reconstruct(&p, &zero, &frame, &b).unwrap();
        let guess = Params::new(0.104, 0.04, 0.28, vec![0.002]);
        let st = decompose(&u, &frame, &guess, &b, &DecomposeOptions::default(), -0.1).unwrap();
        assert!((st.lambda - 0.1).abs() < 1e-10);
        assert!((st.b - 0.05).abs() < 1e-10);
        assert!((st.gamma - 0.3).abs() < 1e-10);
        assert!((st.w[0] - 0.001).abs() < 1e-10);
        assert!(st.eps_h1() < 1e-10, "{}", st.eps_h1());
        assert!(st.diagnostics.max_ortho() < 1e-10);
    }

    #[test]
    fn exact_solution_is_decomposed() {
        let b = bundle();
        let s = exact_pc_solution(-0.5, &b.q).unwrap();
        let guess = Params::new(0.45, 0.55, 2.1, vec![0.01]);
        let st = decompose(&s, &Frame::identity(1), &guess, &b, &DecomposeOptions::default(), -0.5).unwrap();
        assert!((st.lambda - 0.5).abs() < 1e-8);
        assert!((st.b - 0.5).abs() < 1e-8);
        assert!(wrap_phase(st.gamma - 2.0).abs() < 1e-8);
        assert!(st.w[0].abs() < 1e-10);
        assert!(st.eps_h1() < 1e-6, "{}", st.eps_h1());
        assert!(st.diagnostics.near_identity.abs() < 1e-8);
    }

    #[test]
    fn perturbed_field_keeps_orthogonality_and_mass_identity() {
        let b = wide_bundle();
        let p = Params::new(0.8, 0.1, -0.4, vec![0.05]);
        let bump = ComplexField::from_fn(&b.grid, |y| Complex::new(0.02 * (-(y - 0.3) * (y - 0.3)).exp(), 0.01 * y * (-y * y).exp())).unwrap();
        // rescale the perturbed profile to mass ||Q||²
        let raw = &b.q + &bump;
        let c = (b.q.l2_sq() / raw.l2_sq()).sqrt();
        let eps = &raw.scale_real(c) - &b.q;
        let u = reconstruct(&p, &eps, &Frame::identity(1), &b).unwrap();
        let st = decompose(&u, &Frame::identity(1), &Params::new(0.8, 0.1, -0.4, vec![0.05]), &b, &DecomposeOptions::default(), 0.0).unwrap();
        assert!(st.diagnostics.max_ortho() < 1e-10);
        assert!(st.diagnostics.near_identity.abs() < 1e-8, "{}", st.diagnostics.near_identity);
        assert!(st.eps_h1() > 1e-3);
        let again = reconstruct(&st.params(), &st.eps, &Frame::identity(1), &b).unwrap();
        assert!((&again - &u).l2() < 1e-10);
    }

    #[test]
    fn phase_rotation_shifts_gamma_only() {
        let b = bundle();
        let p = Params::new(0.9, 0.2, 0.5, vec![-0.03]);
        let bump = ComplexField::from_fn(&b.grid, |y| Complex::new(0.0, 0.03 * (-y * y).exp())).unwrap();
        let u = reconstruct(&p, &bump, &Frame::identity(1), &b).unwrap();
        let opts = DecomposeOptions::default();
        let a = decompose(&u, &Frame::identity(1), &p, &b, &opts, 0.0).unwrap();
        let rotated = u.scale(Complex::from_polar(1.0, 1.3));
        let mut guess = a.params();
        guess.gamma += 1.2;
        let c = decompose(&rotated, &Frame::identity(1), &guess, &b, &opts, 0.0).unwrap();
        assert!(wrap_phase(c.gamma - a.gamma - 1.3).abs() < 1e-10);
        assert!((c.lambda - a.lambda).abs() < 1e-10);
        assert!((c.b - a.b).abs() < 1e-10);
        assert!((c.w[0] - a.w[0]).abs() < 1e-10);
        assert!((c.eps_h1() - a.eps_h1()).abs() < 1e-10);
    }

    #[test]
    fn far_fields_are_rejected() {
        let b = bundle();
        let g = ComplexField::from_real_fn(&b.grid, |y| 2.0 * (-y * y).exp()).unwrap();
        let r = decompose(&g, &Frame::identity(1), &Params::new(1.0, 0.0, 0.0, vec![0.0]), &b, &DecomposeOptions::default(), 0.0);
        assert!(matches!(r, Err(Error::OutsideTube { .. }) | Err(Error::NewtonStagnation { .. })), "{r:?}");
    }

    #[test]
    fn rescaled_time_examples() {
        let ts: Vec<f64> = (0..=2000).map(|k| -1.0 + k as f64 * 0.9 / 2000.0).collect();
        let l: Vec<f64> = ts.iter().map(|t| t.abs()).collect();
        let s = rescaled_time(&ts, &l).unwrap();
        for (t, s) in ts.iter().zip(&s) {
            assert!((s * t.abs() - 1.0).abs() < 1e-8);
        }
        let ones = vec![1.0; ts.len()];
        let s = rescaled_time(&ts, &ones).unwrap();
        let t1 = *ts.last().unwrap();
        for (t, s) in ts.iter().zip(&s) {
            assert!((s - (-1.0 / t1 + (t - t1))).abs() < 1e-10);
        }
        // order of the input does not matter
        let rev: Vec<f64> = ts.iter().rev().cloned().collect();
        let sr = rescaled_time(&rev, &ones).unwrap();
        assert!((sr[0] - s[s.len() - 1]).abs() < 1e-14);
        assert!(rescaled_time(&[-1.0, -0.5], &[1.0, 0.0]).is_err());
    }

    fn exact_states(b: &ProfileBundle<f64>, s_mid: f64, h: f64) -> Vec<ModulationState<f64>> {
        let mut out = Vec::new();
        let mut guess = Params::new(1.0 / s_mid, 1.0 / s_mid, s_mid, vec![0.0]);
        for k in -1..=1 {
            let s = s_mid + k as f64 * h;
            let t = -1.0 / s;
            let u = exact_pc_solution(t, &b.q).unwrap();
            let mut st = decompose(&u, &Frame::identity(1), &guess, b, &DecomposeOptions::default(), t).unwrap();
            guess = st.params();
            st.s = s;
            out.push(st);
        }
        out
    }

    #[test]
    fn mod_vector_vanishes_on_exact_solution() {
        let b = bundle();
        let states = exact_states(&b, 1.5, 0.002);
        let m = mod_vector(&states).unwrap();
        assert!(m.norm() < 1e-6, "{m:?}");
        let mut bad = states.clone();
        bad.swap(0, 1);
        assert!(matches!(mod_vector(&bad), Err(Error::NonMonotoneTime)));
        assert!(matches!(mod_vector(&states[..2]), Err(Error::InsufficientWindow(_))));
    }

    #[test]
    fn epsilon_equation_on_exact_solution() {
        let b = wide_bundle();
        let spec = CoefficientSpec::free();
        let res = |h: f64| {
            let states = exact_states(&b, 1.5, h);
            let m = mod_vector(&states).unwrap();
            let es = eps_derivative(&states).unwrap();
            epsilon_residual(&states[1], &es, &m, &spec, &b).unwrap()
        };
        let r1 = res(0.01);
        let r2 = res(0.005);
        assert!(r2 < 1e-5, "{r2}");
        assert!((r1 / r2 - 4.0).abs() < 0.5, "{r1} {r2}");
    }

    #[test]
    fn modified_energy() {
        let b = bundle();
        let mu = estimate_mu(&build_bundle(&SpatialGrid::periodic(20.0, 256).unwrap()).unwrap()).unwrap().mu;
        let params = EnergyParams::defaults(mu, 8);
        let spec = CoefficientSpec::free();
        let zero = ModulationState {
            lambda: 0.1,
            b: 0.1,
            gamma: 0.0,
            w: vec![0.0],
            eps: ComplexField::zeros(&b.grid),
            s: 10.0,
            t: -0.1,
            diagnostics: DecompositionDiagnostics {
                ortho: Vec::new(),
                near_identity: 0.0,
                translation_imag: 0.0,
                iterations: 0,
                history: Vec::new(),
            },
        };
        let d = energy_h(&zero, &spec, &params, mu, &b).unwrap();
        assert_eq!(d.h, 0.0);
        assert_eq!(d.s_energy, 0.0);
        let bad = EnergyParams {
            eps2: params.m * mu * params.eps1 / 8.0,
            ..params
        };
        assert!(matches!(energy_h(&zero, &spec, &bad, mu, &b), Err(Error::Constraint(_))));
    }

    #[test]
    fn f_remainder_is_quadratic_for_small_perturbations() {
        let q = Complex::new(1.3_f64, 0.0);
        let e = Complex::new(1e-6, -2e-6);
        let p = 4.0;
        // second-order term: ½ d²F(Q)(ε, ε) = ½ Q^p ((p+1) Re ε² + Im ε²)
        let expected = 0.5 * q.re.powf(p) * ((p + 1.0) * e.re * e.re + e.im * e.im);
        assert!((f_remainder(q, e, p) / expected - 1.0).abs() < 1e-5);
        let big = Complex::new(0.7, 0.4);
        let direct = ((q + big).norm().powf(6.0) - q.re.powf(6.0)) / 6.0 - q.re.powf(5.0) * big.re;
        assert!((f_remainder(q, big, p) - direct).abs() < 1e-13);
        assert!((f_remainder(Complex::new(0.0, 0.0), big, p) - big.norm().powf(6.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_flags_examples() {
        let params = BootstrapParams::new(8);
        assert!(params.violations().is_empty());
        let ok = bootstrap_flags(20.0, 0.05, 0.05, &[0.0], 0.0, &params);
        assert!(ok.all());
        assert_eq!(ok.code(), "ELBW");
        let doubled = bootstrap_flags(20.0, 0.1, 0.05, &[0.0], 0.0, &params);
        assert!(!doubled.lambda && doubled.b);
        assert_eq!(doubled.code(), "E-BW");
        let bad = BootstrapParams { k: 8, m_exp: 1.3 };
        assert_eq!(bad.violations().len(), 1);
    }

    #[test]
    fn monotonicity_report_paths() {
        let params = EnergyParams::defaults(0.06, 8);
        let flat: Vec<EnergySample> = (0..10)
            .map(|k| EnergySample {
                s: 10.0 + k as f64,
                s_energy: 0.0,
                b: 0.1,
                lambda: 0.1,
                in_regime: true,
            })
            .collect();
        let r = energy_monotonicity_check(&flat, &params, 8, MONOTONICITY_C);
        assert!(!r.skipped);
        assert_eq!(r.fraction_ok, 1.0);
        let mut out = flat.clone();
        out[3].in_regime = false;
        let r = energy_monotonicity_check(&out, &params, 8, MONOTONICITY_C);
        assert!(r.skipped && r.reason.is_some());
    }

    mod coercivity {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn setup() -> &'static (ProfileBundle<f64>, f64) {
            static CELL: OnceLock<(ProfileBundle<f64>, f64)> = OnceLock::new();
            CELL.get_or_init(|| {
                let mu = estimate_mu(&build_bundle(&SpatialGrid::periodic(20.0, 256).unwrap()).unwrap()).unwrap().mu;
                (bundle(), mu)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn holds_for_small_orthogonal_perturbations(
                coeffs in proptest::collection::vec(-1.0f64..1.0, 12),
                size in 1e-4f64..3e-2,
            ) {
                let (b, mu) = setup();
                let raw = ComplexField::from_fn(&b.grid, |y| {
                    let g = (-0.5 * y * y).exp();
                    (0..6).fold(Complex::new(0.0, 0.0), |acc, k| {
                        acc + Complex::new(coeffs[2 * k], coeffs[2 * k + 1]) * y.powi(k as i32) * g
                    })
                }).unwrap();
                let eps = project_orthogonal(&raw, b).unwrap();
                prop_assume!(eps.h1_sq() > 1e-12);
                let eps = eps.scale_real(size / eps.h1_sq().sqrt());
                let st = ModulationState {
                    lambda: 0.1,
                    b: 0.1,
                    gamma: 0.0,
                    w: vec![0.0],
                    eps,
                    s: 10.0,
                    t: -0.1,
                    diagnostics: DecompositionDiagnostics {
                        ortho: Vec::new(),
                        near_identity: 0.0,
                        translation_imag: 0.0,
                        iterations: 0,
                        history: Vec::new(),
                    },
                };
                let params = EnergyParams::defaults(*mu, 8);
                let d = energy_h(&st, &CoefficientSpec::free(), &params, *mu, b).unwrap();
                prop_assert!(d.coercive, "{} < {}", d.coercivity_lhs, d.coercivity_rhs);
                // upper half of the sandwich: H is at most a fixed multiple of the weighted norm
                prop_assert!(d.upper_ratio < 1.0);
            }
        }
    }
}
