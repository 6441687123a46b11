//! Potentials `V` and nonlinearity coefficients `g`, assumption checks, and
//! the potential error term `Ψ(y) = λ² V(λy - w) Q(y)`.
//!
//! Coefficients are closed-form one-variable profiles evaluated in `f64`
//! with truncated Taylor arithmetic, which yields exact derivatives up to
//! fourth order. On radial meshes the variable is `r = |x|`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::grid::SpatialGrid;
use crate::profiles::{decay_rate, linear_slope, ProfileBundle};
use crate::scalar::Real;

const ORDER: usize = 5;

/// Truncated Taylor series `sum c_k h^k`, `k < 5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub c: [f64; ORDER],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; ORDER];
        c[0] = v;
        Self { c }
    }

    pub fn variable(x: f64) -> Self {
        let mut c = [0.0; ORDER];
        c[0] = x;
        c[1] = 1.0;
        Self { c }
    }

    /// `k`-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        const FACT: [f64; ORDER] = [1.0, 1.0, 2.0, 6.0, 24.0];
        self.c[k] * FACT[k]
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `f(self)` given `f^{(k)}(c_0)` for `k = 0..5`.
    fn compose(&self, d: [f64; ORDER]) -> Self {
        let mut h = *self;
        h.c[0] = 0.0;
        let mut out = Jet::constant(d[0]);
        let mut pow = Jet::constant(1.0);
        let mut fact = 1.0;
        for (k, dk) in d.iter().enumerate().skip(1) {
            pow = pow * h;
            fact *= k as f64;
            out = out + pow.scale(dk / fact);
        }
        out
    }

    pub fn scale(self, s: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().for_each(|v| *v *= s);
        Self { c }
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s, c])
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn tanh(self) -> Self {
        let t = self.c[0].tanh();
        let u = 1.0 - t * t;
        self.compose([t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0), u * (16.0 * t - 24.0 * t * t * t)])
    }

    pub fn powi(self, n: u32) -> Self {
        (0..n).fold(Jet::constant(1.0), |acc, _| acc * self)
    }

    pub fn recip(self) -> Self {
        let a = self.c[0];
        let mut out = [0.0; ORDER];
        out[0] = 1.0 / a;
        for k in 1..ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += self.c[j] * out[k - j];
            }
            out[k] = -s / a;
        }
        Self { c: out }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(o.c.iter()) {
            *a += b;
        }
        Jet { c }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut c = [0.0; ORDER];
        for i in 0..ORDER {
            for j in 0..ORDER - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Jet { c }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Closed-form one-variable profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * cos(x^4) / (1 + x^2)`
    OscillatoryPotential {
        amplitude: f64,
    },
    /// `amplitude * cos(x^4) / (1 + x^4)`
    OscillatoryNonlinearity {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `coeff/2 * x^2`, or `coeff/2 * cap^2 * tanh(x^2 / cap^2)` when capped
    Quadratic {
        coeff: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `slope * cap * tanh(x / cap)`: linear near the origin, bounded far out
    Tilt {
        slope: f64,
        cap: f64,
    },
    /// `sum_k coeffs[k] x^k`
    Polynomial {
        coeffs: Vec<f64>,
    },
    Sum {
        terms: Vec<Profile>,
    },
}

fn one() -> f64 {
    1.0
}

impl Profile {
    pub fn jet(&self, x: f64) -> Jet {
        let v = Jet::variable(x);
        match self {
            Profile::Zero => Jet::constant(0.0),
            Profile::Constant { value } => Jet::constant(*value),
            Profile::OscillatoryPotential { amplitude } => {
                (v.powi(4).cos() / (Jet::constant(1.0) + v.powi(2))).scale(*amplitude)
            }
            Profile::OscillatoryNonlinearity { amplitude } => {
                (v.powi(4).cos() / (Jet::constant(1.0) + v.powi(4))).scale(*amplitude)
            }
            Profile::Quadratic { coeff, cap } => match cap {
                None => v.powi(2).scale(0.5 * coeff),
                Some(c) => (v.powi(2).scale(1.0 / (c * c))).tanh().scale(0.5 * coeff * c * c),
            },
            Profile::Tilt { slope, cap } => v.scale(1.0 / cap).tanh().scale(slope * cap),
            Profile::Polynomial { coeffs } => coeffs
                .iter()
                .rev()
                .fold(Jet::constant(0.0), |acc, &c| acc * v + Jet::constant(c)),
            Profile::Sum { terms } => terms.iter().fold(Jet::constant(0.0), |acc, t| acc + t.jet(x)),
        }
    }

    /// Plain evaluation (no derivatives).
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => *value,
            Profile::OscillatoryPotential { amplitude } => {
                let x2 = x * x;
                amplitude * (x2 * x2).cos() / (1.0 + x2)
            }
            Profile::OscillatoryNonlinearity { amplitude } => {
                let x4 = x * x * x * x;
                amplitude * x4.cos() / (1.0 + x4)
            }
            Profile::Quadratic { coeff, cap } => match cap {
                None => 0.5 * coeff * x * x,
                Some(c) => 0.5 * coeff * c * c * (x * x / (c * c)).tanh(),
            },
            Profile::Tilt { slope, cap } => slope * cap * (x / cap).tanh(),
            Profile::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            Profile::Sum { terms } => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Zero => true,
            Profile::Constant { value } => *value == 0.0,
            Profile::OscillatoryPotential { amplitude } | Profile::OscillatoryNonlinearity { amplitude } => *amplitude == 0.0,
            Profile::Quadratic { coeff, .. } => *coeff == 0.0,
            Profile::Tilt { slope, .. } => *slope == 0.0,
            Profile::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            Profile::Sum { terms } => terms.iter().all(|t| t.is_zero()),
        }
    }

    /// Whether the profile is an even function (required on radial meshes for `V`, `g`
    /// evaluated at `|x|`, and convenient for symmetry arguments on the line).
    pub fn is_even(&self) -> bool {
        match self {
            Profile::Tilt { slope, .. } => *slope == 0.0,
            Profile::Polynomial { coeffs } => coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0),
            Profile::Sum { terms } => terms.iter().all(|t| t.is_even()),
            _ => true,
        }
    }

    /// Multiplies the profile by `c`.
    pub fn scaled(&self, c: f64) -> Profile {
        match self {
            Profile::Zero => Profile::Zero,
            Profile::Constant { value } => Profile::Constant { value: value * c },
            Profile::OscillatoryPotential { amplitude } => Profile::OscillatoryPotential { amplitude: amplitude * c },
            Profile::OscillatoryNonlinearity { amplitude } => Profile::OscillatoryNonlinearity { amplitude: amplitude * c },
            Profile::Quadratic { coeff, cap } => Profile::Quadratic { coeff: coeff * c, cap: *cap },
            Profile::Tilt { slope, cap } => Profile::Tilt { slope: slope * c, cap: *cap },
            Profile::Polynomial { coeffs } => Profile::Polynomial {
                coeffs: coeffs.iter().map(|v| v * c).collect(),
            },
            Profile::Sum { terms } => Profile::Sum {
                terms: terms.iter().map(|t| t.scaled(c)).collect(),
            },
        }
    }
}

/// A potential `V` and a nonlinearity coefficient `g`.
///
/// `V` is normalized to vanish at the origin: the stored profile is shifted
/// by `v_shift = profile(0)`, which is recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub name: String,
    pub potential: Profile,
    pub nonlinearity: Profile,
    #[serde(default)]
    pub v_shift: f64,
    /// Assumptions the entry is designed to satisfy (informational).
    #[serde(default)]
    pub satisfies: Vec<String>,
}

impl CoefficientSpec {
    /// Builds a coefficient set, shifting `V` so that `V(0) = 0`.
    pub fn new(name: &str, potential: Profile, nonlinearity: Profile) -> Self {
        let v_shift = potential.value(0.0);
        Self {
            name: name.to_string(),
            potential,
            nonlinearity,
            v_shift,
            satisfies: Vec::new(),
        }
    }

    pub fn free() -> Self {
        Self::new("free", Profile::Zero, Profile::Constant { value: 1.0 })
    }

    pub fn with_satisfies(mut self, list: &[&str]) -> Self {
        self.satisfies = list.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn v(&self, x: f64) -> f64 {
        self.potential.value(x) - self.v_shift
    }

    pub fn v_jet(&self, x: f64) -> Jet {
        self.potential.jet(x) - Jet::constant(self.v_shift)
    }

    pub fn g(&self, x: f64) -> f64 {
        self.nonlinearity.value(x)
    }

    pub fn g_jet(&self, x: f64) -> Jet {
        self.nonlinearity.jet(x)
    }

    pub fn is_free(&self) -> bool {
        self.potential.is_zero() && self.nonlinearity == Profile::Constant { value: 1.0 }
    }

    /// Same coefficients with `V` multiplied by `c` (the shift scales along).
    pub fn with_potential_scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.potential = self.potential.scaled(c);
        out.v_shift = self.v_shift * c;
        out
    }

    /// Samples `V` on the grid (at `|x|` on radial meshes).
    pub fn v_samples<T: Real>(&self, grid: &SpatialGrid<T>) -> Vec<T> {
        grid.coords().iter().map(|&x| T::lit(self.v(x.f64()))).collect()
    }

    pub fn g_samples<T: Real>(&self, grid: &SpatialGrid<T>) -> Vec<T> {
        grid.coords().iter().map(|&x| T::lit(self.g(x.f64()))).collect()
    }
}

/// The built-in coefficient library.
pub fn builtin_coefficients() -> Vec<CoefficientSpec> {
    vec![
        CoefficientSpec::free().with_satisfies(&["V1growth", "V2growth", "gflat", "gint", "ggrowth"]),
        CoefficientSpec::new(
            "oscillatory_v",
            Profile::OscillatoryPotential { amplitude: 1.0 },
            Profile::Constant { value: 1.0 },
        )
        .with_satisfies(&["V1growth", "V2growth", "gflat", "gint", "ggrowth"]),
        CoefficientSpec::new(
            "oscillatory_g",
            Profile::Zero,
            Profile::OscillatoryNonlinearity { amplitude: 1.0 },
        )
        .with_satisfies(&["V1growth", "V2growth", "gflat", "gint", "ggrowth"]),
        CoefficientSpec::new(
            "harmonic",
            Profile::Quadratic {
                coeff: 1.0,
                cap: Some(5.0),
            },
            Profile::Constant { value: 1.0 },
        )
        .with_satisfies(&["V1growth", "V2growth", "gflat", "gint", "ggrowth"]),
        CoefficientSpec::new(
            "tilted",
            Profile::Tilt { slope: 1.0, cap: 5.0 },
            Profile::Constant { value: 1.0 },
        )
        .with_satisfies(&["V1growth", "V2growth", "gflat", "gint", "ggrowth"]),
        CoefficientSpec::new(
            "steep_g",
            Profile::Zero,
            Profile::Polynomial { coeffs: vec![1.0, 0.0, 1.0] },
        )
        .with_satisfies(&["V1growth", "V2growth", "ggrowth"]),
    ]
}

/// Looks up a built-in entry by name.
pub fn builtin(name: &str) -> Option<CoefficientSpec> {
    builtin_coefficients().into_iter().find(|c| c.name == name)
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// main fitted quantity (constant, exponent or residual, depending on the check)
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Growth exponent of `sup |f|` over dyadic shells `[2^k, 2^{k+1})` inside the scan range.
fn growth_exponent(scan: &[(f64, f64)]) -> f64 {
    let top = scan.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let mut pts = Vec::new();
    let mut lo = 1.0;
    while lo < top {
        let hi = (2.0 * lo).min(top + 1e-12);
        let m = scan
            .iter()
            .filter(|p| p.0.abs() >= lo && p.0.abs() < hi)
            .map(|p| p.1.abs())
            .fold(0.0, f64::max);
        if hi - lo > 0.25 * lo {
            pts.push((0.5 * (lo + hi), m));
        }
        lo *= 2.0;
    }
    if pts.iter().all(|p| p.1 < 1e-12) {
        return 0.0;
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|p| (p.0.ln(), p.1.max(1e-300).ln())).collect();
    if logs.len() < 2 {
        return 0.0;
    }
    linear_slope(&logs)
}

const BOUNDED_SLACK: f64 = 0.25;

/// Scan-based verification of the growth and flatness assumptions on `[-R, R]`.
pub fn check_assumptions<T: Real>(spec: &CoefficientSpec, grid: &SpatialGrid<T>) -> AssumptionReport {
    let r = grid.half_width().f64();
    let h = grid.spacing().f64() / 8.0;
    let lo = if grid.is_radial() { 0.0 } else { -r };
    let count = ((r - lo) / h).floor() as usize + 1;
    let xs: Vec<f64> = (0..count).map(|j| lo + j as f64 * h).collect();
    let vj: Vec<Jet> = xs.iter().map(|&x| spec.v_jet(x)).collect();
    let gj: Vec<Jet> = xs.iter().map(|&x| spec.g_jet(x)).collect();
    let series = |jets: &[Jet], f: &dyn Fn(f64, &Jet) -> f64| -> Vec<(f64, f64)> {
        xs.iter().zip(jets).map(|(&x, j)| (x, f(x, j))).collect()
    };
    let mut checks = Vec::new();

    let v0 = spec.v(0.0).abs();
    checks.push(AssumptionCheck {
        name: "V(0)=0",
        passed: v0 < 1e-14,
        value: v0,
        detail: format!("shift recorded: {}", spec.v_shift),
    });

    let dv = series(&vj, &|_, j| j.derivative(1));
    let c1 = dv.iter().map(|(x, d)| d.abs() / (1.0 + x.abs())).fold(0.0, f64::max);
    let e1 = growth_exponent(&dv);
    checks.push(AssumptionCheck {
        name: "V1growth",
        passed: c1.is_finite() && e1 <= 1.0 + BOUNDED_SLACK,
        value: c1,
        detail: format!("sup |∇V|/(1+|x|) = {c1:.6e}, growth exponent {e1:.3}"),
    });

    let d2v = series(&vj, &|_, j| j.derivative(2));
    let e2 = growth_exponent(&d2v).max(0.0);
    checks.push(AssumptionCheck {
        name: "V2growth",
        passed: e2.is_finite(),
        value: e2,
        detail: format!("fitted r = {e2:.3}"),
    });

    let flat = (spec.g(0.0) - 1.0)
        .abs()
        .max(gj_at_zero(spec, 1).abs())
        .max(gj_at_zero(spec, 2).abs());
    checks.push(AssumptionCheck {
        name: "gflat",
        passed: flat < 1e-10,
        value: flat,
        detail: format!(
            "g(0)-1 = {:.3e}, g'(0) = {:.3e}, g''(0) = {:.3e}",
            spec.g(0.0) - 1.0,
            gj_at_zero(spec, 1),
            gj_at_zero(spec, 2)
        ),
    });

    let g0 = series(&gj, &|_, j| j.value());
    let g1 = series(&gj, &|_, j| j.derivative(1));
    let xg1 = series(&gj, &|x, j| x * j.derivative(1));
    let exps = [growth_exponent(&g0), growth_exponent(&g1), growth_exponent(&xg1)];
    let worst = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    checks.push(AssumptionCheck {
        name: "gint",
        passed: worst <= BOUNDED_SLACK,
        value: worst,
        detail: format!(
            "growth exponents of g, ∇g, x·∇g: {:.3}, {:.3}, {:.3}",
            exps[0], exps[1], exps[2]
        ),
    });

    let g34 = series(&gj, &|_, j| j.derivative(3).abs().max(j.derivative(4).abs()));
    let rg = growth_exponent(&g34).max(0.0);
    checks.push(AssumptionCheck {
        name: "ggrowth",
        passed: rg.is_finite(),
        value: rg,
        detail: format!("fitted r_g = {rg:.3}"),
    });

    AssumptionReport { checks }
}

fn gj_at_zero(spec: &CoefficientSpec, k: usize) -> f64 {
    spec.g_jet(0.0).derivative(k)
}

/// Physical point `λy - w` (radial meshes use `λr`, `w` is zero there).
fn scaled_arg<T: Real>(y: T, lambda: f64, w: &[f64]) -> f64 {
    lambda * y.f64() - w.first().copied().unwrap_or(0.0)
}

/// `Ψ(y) = λ² V(λy - w) Q(y)`.
pub fn psi<T: Real>(spec: &CoefficientSpec, lambda: T, w: &[T], bundle: &ProfileBundle<T>) -> Result<ComplexField<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let wf: Vec<f64> = w.iter().map(|v| v.f64()).collect();
    let l = lambda.f64();
    Ok(bundle.q.map(|y, q| q * T::lit(l * l * spec.v(scaled_arg(y, l, &wf)))))
}

/// `∇Ψ = λ³ ∇V(λy - w) Q + λ² V(λy - w) ∇Q`.
fn psi_gradient<T: Real>(spec: &CoefficientSpec, lambda: f64, w: &[f64], bundle: &ProfileBundle<T>) -> ComplexField<T> {
    let vals = bundle
        .grid
        .coords()
        .iter()
        .zip(bundle.q.values().iter().zip(bundle.grad_q[0].values()))
        .map(|(&y, (&q, &dq))| {
            let j = spec.v_jet(scaled_arg(y, lambda, w));
            q * T::lit(lambda.powi(3) * j.derivative(1)) + dq * T::lit(lambda * lambda * j.value())
        })
        .collect();
    ComplexField::from_parts(bundle.grid.clone(), vals)
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiEntry {
    pub lambda: f64,
    pub w: f64,
    /// `||e^{ε'|y|}Ψ||_2 + ||e^{ε'|y|}∇Ψ||_2`
    pub weighted_norm: f64,
    /// `weighted_norm / (λ²(λ + |w|))`
    pub norm_ratio: f64,
    /// `|(Ψ, φ)_2|` for `φ = Q, |y|²Q, ρ`
    pub pairings: [f64; 3],
    /// pairings divided by `λ²|w| + λ⁴`
    pub pairing_ratios: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiBoundsReport {
    pub eps_prime: f64,
    pub entries: Vec<PsiEntry>,
    pub sup_norm_ratio: f64,
    pub sup_pairing_ratio: f64,
    pub warnings: Vec<String>,
}

/// Default exponential weight in the weighted `Ψ` norms.
pub const DEFAULT_EPS_PRIME: f64 = 0.4;

pub fn psi_bounds_check<T: Real>(
    spec: &CoefficientSpec,
    lambdas: &[f64],
    ws: &[f64],
    bundle: &ProfileBundle<T>,
    eps_prime: f64,
) -> Result<PsiBoundsReport> {
    let mut warnings = Vec::new();
    let mut eps = eps_prime;
    let rate = decay_rate(&bundle.q).f64();
    if eps > 0.5 * rate {
        warnings.push(format!("ε' = {eps} exceeds half the decay rate {rate:.4}; clamped"));
        eps = 0.5 * rate;
    }
    let r = bundle.grid.half_width().f64();
    while !(eps * r).exp().is_finite() || (eps * r).exp() * bundle.q.max_abs().f64() > 1e150 {
        warnings.push(format!("exponential weight overflows at ε' = {eps}; halved"));
        eps *= 0.5;
    }
    let weight: Vec<T> = bundle.grid.coords().iter().map(|&y| T::lit((eps * y.f64().abs()).exp())).collect();
    let mut entries = Vec::new();
    for &l in lambdas {
        for &w in ws {
            let wv = vec![T::lit(w); if bundle.grid.is_radial() { 0 } else { 1 }];
            let p = psi(spec, T::lit(l), &wv, bundle)?;
            let dp = psi_gradient(spec, l, &[w], bundle);
            let weighted_norm = p.mul_real(&weight).l2().f64() + dp.mul_real(&weight).l2().f64();
            let scale = l * l * (l + w.abs());
            let pairings = [
                p.inner(&bundle.q)?.f64().abs(),
                p.inner(&bundle.y2_q)?.f64().abs(),
                p.inner(&bundle.rho)?.f64().abs(),
            ];
            let pscale = l * l * w.abs() + l.powi(4);
            entries.push(PsiEntry {
                lambda: l,
                w,
                weighted_norm,
                norm_ratio: weighted_norm / scale,
                pairings,
                pairing_ratios: pairings.map(|v| v / pscale),
            });
        }
    }
    let sup_norm_ratio = entries.iter().map(|e| e.norm_ratio).fold(0.0, f64::max);
    let sup_pairing_ratio = entries
        .iter()
        .flat_map(|e| e.pairing_ratios)
        .fold(0.0, f64::max);
    Ok(PsiBoundsReport {
        eps_prime: eps,
        entries,
        sup_norm_ratio,
        sup_pairing_ratio,
        warnings,
    })
}

/// Fourth-order central difference of `f` at `x` with step `h`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::build_bundle;

    #[test]
    fn jets_match_closed_form_derivatives() {
        let x = 0.7;
        let j = Jet::variable(x).powi(4).cos();
        // d/dx cos(x^4) = -4x^3 sin(x^4)
        assert!((j.derivative(1) + 4.0 * x.powi(3) * x.powi(4).sin()).abs() < 1e-13);
        let r = (Jet::constant(1.0) + Jet::variable(x).powi(2)).recip();
        // d²/dx² (1+x²)^{-1} = (6x² - 2)/(1+x²)^3
        assert!((r.derivative(2) - (6.0 * x * x - 2.0) / (1.0 + x * x).powi(3)).abs() < 1e-13);
        let t = Jet::variable(x).tanh();
        let h = 1e-3;
        let fd4 = (central_difference(|y| central_difference(|z| z.tanh(), y, h), x + h, h)
            - central_difference(|y| central_difference(|z| z.tanh(), y, h), x - h, h))
            / (2.0 * h);
        assert!((t.derivative(3) - fd4).abs() < 1e-5);
    }

    #[test]
    fn jets_agree_with_finite_differences_where_resolved() {
        let spec = builtin("oscillatory_v").unwrap();
        for &x in &[0.3, 0.9, 1.4] {
            let fd = central_difference(|y| spec.v(y), x, 1e-3);
            assert!((spec.v_jet(x).derivative(1) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn plain_values_match_jets() {
        for spec in builtin_coefficients() {
            for &x in &[-3.1, -0.4, 0.0, 0.77, 2.5, 12.0] {
                assert!((spec.v(x) - spec.v_jet(x).value()).abs() < 1e-14);
                assert!((spec.g(x) - spec.g_jet(x).value()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn library_contents() {
        let lib = builtin_coefficients();
        assert!(lib.len() >= 4);
        assert!(lib.iter().all(|c| c.v(0.0) == 0.0));
        let pv = builtin("oscillatory_v").unwrap();
        assert_eq!(pv.v_shift, 1.0);
        // V(x) = cos(x^4)/(1+x^2) - 1
        assert!((pv.v(1.0) - (1f64.cos() / 2.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn free_spec_passes_everything() {
        let g = SpatialGrid::<f64>::periodic(20.0, 1024).unwrap();
        let rep = check_assumptions(&CoefficientSpec::free(), &g);
        assert!(rep.all_passed(), "{rep:?}");
        assert_eq!(rep.get("gflat").unwrap().value, 0.0);
    }

    #[test]
    fn oscillatory_examples_pass_and_steep_g_is_flagged() {
        let g = SpatialGrid::<f64>::periodic(20.0, 1024).unwrap();
        let pv = check_assumptions(&builtin("oscillatory_v").unwrap(), &g);
        assert!(pv.all_passed(), "{pv:?}");
        assert!(pv.get("V1growth").unwrap().value < 10.0);
        let pg = check_assumptions(&builtin("oscillatory_g").unwrap(), &g);
        assert!(pg.all_passed(), "{pg:?}");
        let rg = pg.get("ggrowth").unwrap().value;
        assert!(rg.is_finite() && rg > 2.0, "{rg}");
        let bad = check_assumptions(&builtin("steep_g").unwrap(), &g);
        assert!(!bad.get("gflat").unwrap().passed);
        assert!(!bad.get("gint").unwrap().passed);
        for name in ["harmonic", "tilted"] {
            let rep = check_assumptions(&builtin(name).unwrap(), &g);
            assert!(rep.all_passed(), "{name}: {rep:?}");
        }
    }

    #[test]
    fn psi_examples() {
        let g = SpatialGrid::<f64>::periodic(20.0, 1024).unwrap();
        let b = build_bundle(&g).unwrap();
        let free = CoefficientSpec::free();
        assert_eq!(psi(&free, 0.1, &[0.0], &b).unwrap().max_abs(), 0.0);
        let linear = CoefficientSpec::new("linear", Profile::Polynomial { coeffs: vec![0.0, 1.0] }, Profile::Constant { value: 1.0 });
        let p = psi(&linear, 0.1, &[0.01], &b).unwrap();
        let expected = -0.01 * 0.01 * b.ip_table["(Q,Q)"];
        assert!(((p.inner(&b.q).unwrap() - expected) / expected).abs() < 1e-6);
        assert!(psi(&linear, 0.0, &[0.0], &b).is_err());
        // ||Ψ|| ~ λ² at fixed w
        let n1 = psi(&linear, 0.01, &[0.05], &b).unwrap().l2();
        let n2 = psi(&linear, 0.005, &[0.05], &b).unwrap().l2();
        let slope = (n1 / n2).ln() / 2f64.ln();
        assert!((slope - 2.0).abs() < 0.05, "{slope}");
        // scaling V scales Ψ exactly
        let pv = builtin("oscillatory_v").unwrap();
        let a = psi(&pv, 0.1, &[0.0], &b).unwrap();
        let c = psi(&pv.with_potential_scaled(3.0), 0.1, &[0.0], &b).unwrap();
        assert!((&c - &a.scale_real(3.0)).max_abs() < 1e-15);
    }

    #[test]
    fn psi_bounds() {
        let g = SpatialGrid::<f64>::periodic(20.0, 1024).unwrap();
        let b = build_bundle(&g).unwrap();
        let free = psi_bounds_check(&CoefficientSpec::free(), &[0.1], &[0.0], &b, DEFAULT_EPS_PRIME).unwrap();
        assert_eq!(free.sup_norm_ratio, 0.0);
        assert_eq!(free.sup_pairing_ratio, 0.0);
        let pv = builtin("oscillatory_v").unwrap();
        let rep = psi_bounds_check(&pv, &[0.1, 0.05, 0.025], &[0.0], &b, DEFAULT_EPS_PRIME).unwrap();
        assert!(rep.sup_norm_ratio.is_finite());
        let ratios: Vec<f64> = rep.entries.iter().map(|e| e.norm_ratio).collect();
        assert!(ratios.windows(2).all(|w| w[1] <= w[0]), "{ratios:?}");
        assert!(rep.warnings.is_empty());
        let linear = CoefficientSpec::new("linear", Profile::Polynomial { coeffs: vec![0.0, 1.0] }, Profile::Constant { value: 1.0 });
        let rep = psi_bounds_check(&linear, &[0.01, 0.001], &[0.01], &b, DEFAULT_EPS_PRIME).unwrap();
        let last = rep.entries.last().unwrap();
        let ratio = last.pairings[0] / (last.lambda * last.lambda * last.w);
        assert!((ratio - b.ip_table["(Q,Q)"]).abs() < 1e-6 * b.ip_table["(Q,Q)"]);
        let clamped = psi_bounds_check(&pv, &[0.1], &[0.0], &b, 0.9).unwrap();
        assert!(clamped.eps_prime <= 0.5 * 1.01 && !clamped.warnings.is_empty());
    }
}
