//! The construction as a numerical experiment: backward integration from
//! the modulated ground state at `t₁`, decomposition along the run, rate
//! fits, and the limit-sequence Cauchy test.
//!
//! Runs are integrated in the pseudo-conformal frame `σ = -1/t`, where the
//! blow-up profile stays of unit size however close `t₁` is to zero.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSpec;
use crate::error::{Error, Result};
use crate::evolve::{ConservedReport, SplitStep};
use crate::field::ComplexField;
use crate::grid::SpatialGrid;
use crate::modulation::{
    bootstrap_monitor, decompose, energy_h, energy_monotonicity_check, mod_vector, reconstruct, BootstrapFlags,
    BootstrapParams, DecomposeOptions, EnergyParams, EnergySample, Frame, ModVector, ModulationState,
    MonotonicityReport, Params, MONOTONICITY_C,
};
use crate::profiles::{critical_power, ProfileBundle};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            half_width: 20.0,
            points: 1024,
        }
    }
}

impl GridConfig {
    pub fn build<T: Real>(&self) -> Result<SpatialGrid<T>> {
        SpatialGrid::new(self.dim, T::lit(self.half_width), self.points)
    }
}

/// Time stepping of construction runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Strang,
    /// fourth order, three Strang substeps per step
    #[default]
    TripleJump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: CoefficientSpec,
    pub grid: GridConfig,
    /// anchor time, where the modulated ground state is placed
    pub t1: f64,
    /// end of the backward run, `t₀ < t₁ < 0`
    pub t0: f64,
    /// step in the frame time `σ = -1/t`
    pub frame_step: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    /// steps between recorded samples
    pub snapshot_every: usize,
    pub bootstrap: BootstrapParams,
    pub decompose: DecomposeOptions,
    /// `None` selects [`EnergyParams::defaults`]
    pub energy: Option<EnergyParams>,
    /// stop once a bootstrap inequality fails
    pub stop_on_exit: bool,
    /// keep the frame samples of every record entry
    pub keep_fields: bool,
    /// anchors `t_n` of the limit sequence
    pub schedule: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: CoefficientSpec::free(),
            grid: GridConfig::default(),
            t1: -0.02,
            t0: -0.1,
            frame_step: 1e-3,
            scheme: Scheme::TripleJump,
            dealias: true,
            snapshot_every: 20,
            bootstrap: BootstrapParams::new(8),
            decompose: DecomposeOptions::default(),
            energy: None,
            stop_on_exit: true,
            keep_fields: false,
            schedule: Vec::new(),
        }
    }
}

/// `t_n = first · ratio^n`, `n = 0..count`.
pub fn geometric_schedule(first: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|n| first * ratio.powi(n as i32)).collect()
}

impl ExperimentConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t1 < 0.0) {
            v.push(format!("t1 must be negative, got {}", self.t1));
        }
        if !(self.t0 < self.t1) {
            v.push(format!("t0 < t1 fails: t0 = {}, t1 = {}", self.t0, self.t1));
        }
        if self.bootstrap.k < 4 {
            v.push(format!("K >= 4 fails: K = {}", self.bootstrap.k));
        } else {
            v.extend(self.bootstrap.violations());
        }
        if !(self.frame_step > 0.0 && self.frame_step.is_finite()) {
            v.push(format!("frame step must be positive, got {}", self.frame_step));
        }
        if self.snapshot_every == 0 {
            v.push("snapshot cadence must be at least one step".to_string());
        }
        if !(self.decompose.delta > 0.0) || !(self.decompose.ortho_tol > 0.0) {
            v.push("tube radius and orthogonality tolerance must be positive".to_string());
        }
        if let Err(e) = self.grid.build::<f64>() {
            v.push(e.to_string());
        }
        for (i, &t) in self.schedule.iter().enumerate() {
            if !(t < 0.0 && t > self.t0) {
                v.push(format!("schedule entry {i} must lie in (t0, 0), got {t}"));
            }
        }
        if self.schedule.windows(2).any(|w| !(w[1] > w[0])) {
            v.push("schedule must increase toward 0".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }

    pub fn energy_params(&self, mu: f64) -> EnergyParams {
        self.energy.unwrap_or_else(|| EnergyParams::defaults(mu, self.bootstrap.k))
    }
}

/// `u(t₁,x) = λ₁^{-N/2} Q(x/λ₁) e^{-i b₁|x|²/(4λ₁²)}` with `λ₁ = b₁ = -t₁`,
/// sampled on the grid of `bundle`.
pub fn initial_data<T: Real>(t1: f64, bundle: &ProfileBundle<T>) -> Result<ComplexField<T>> {
    if !(t1 < 0.0) || !t1.is_finite() {
        return Err(Error::InvalidArgument("initial data needs t1 < 0".into()));
    }
    let dim = bundle.grid.dim();
    let p = Params::new(-t1, -t1, 0.0, vec![0.0; dim]);
    reconstruct(&p, &ComplexField::zeros(&bundle.grid), &Frame::identity(dim), bundle)
}

/// Mass, energy and momentum of the physical field whose samples in `frame` are `v`.
pub fn frame_conserved<T: Real>(v: &ComplexField<T>, frame: &Frame, spec: &CoefficientSpec) -> ConservedReport {
    let grid = v.grid();
    let p = critical_power::<f64>(grid.dim());
    let (l0, b0) = (frame.lambda0, frame.b0);
    let w0 = frame.w0.first().copied().unwrap_or(0.0);
    let dv = v.gradient().expect("finite samples");
    let mut grad = 0.0;
    let mut nl = 0.0;
    let mut pot = 0.0;
    let mut chirp = 0.0;
    for j in 0..grid.points() {
        let z = grid.coords()[j].f64();
        let wt = grid.weights()[j].f64();
        let a = v.values()[j];
        let a = Complex::new(a.re.f64(), a.im.f64());
        let d = dv.values()[j];
        let d = Complex::new(d.re.f64(), d.im.f64());
        let x = l0 * z - w0;
        grad += wt * (d - Complex::new(0.0, 0.5 * b0 * z) * a).norm_sqr();
        let m = a.norm_sqr();
        nl += wt * spec.g(x) * m.powf(1.0 + 0.5 * p);
        pot += wt * spec.v(x) * m;
        chirp += wt * 0.5 * b0 * z * m;
    }
    let momentum = if grid.is_radial() {
        vec![0.0; grid.dim()]
    } else {
        // u = a + ib: Im(u ∂ū) = b ∂a - a ∂b
        let re: Vec<Complex<T>> = v.values().iter().map(|z| Complex::new(z.re, T::zero())).collect();
        let im: Vec<Complex<T>> = v.values().iter().map(|z| Complex::new(z.im, T::zero())).collect();
        let (da, db) = (grid.derivative(&re), grid.derivative(&im));
        let m: f64 = (0..grid.points())
            .map(|j| (grid.weights()[j] * (im[j].re * da[j].re - re[j].re * db[j].re)).f64())
            .sum();
        vec![(m + chirp) / l0]
    };
    let inv2 = 1.0 / (l0 * l0);
    ConservedReport {
        mass: v.l2_sq().f64(),
        energy: 0.5 * inv2 * grad - inv2 * nl / (2.0 + p) + 0.5 * pot,
        momentum,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub t: f64,
    pub s: f64,
    pub lambda: f64,
    pub b: f64,
    pub gamma: f64,
    pub w: Vec<f64>,
    pub eps_h1: f64,
    /// `|| |y| ε ||₂`
    pub eps_weighted_l2: f64,
    /// `None` at the two ends of the record
    pub modulation: Option<ModVector>,
    pub h: f64,
    pub s_energy: f64,
    pub coercive: bool,
    pub coercivity_rhs: f64,
    pub upper_ratio: f64,
    pub conserved: ConservedReport,
    pub flags: BootstrapFlags,
    /// `(Im ε, ∇Q)₂`
    pub im_eps_grad_q: f64,
    pub near_identity: f64,
    pub translation_imag: f64,
    pub max_ortho: f64,
}

impl Sample {
    pub fn mod_norm(&self) -> Option<f64> {
        self.modulation.as_ref().map(ModVector::norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionStop {
    Completed,
    TubeExit,
    BootstrapExit,
}

#[derive(Clone, Debug)]
pub struct ConstructionRecord<T: Real> {
    /// in integration order: `t` decreasing from `t₁`
    pub samples: Vec<Sample>,
    /// decomposed states, aligned with `samples`
    pub states: Vec<ModulationState<T>>,
    /// frame samples aligned with `samples` when requested
    pub fields: Vec<(Frame, ComplexField<T>)>,
    pub stop: ConstructionStop,
    /// rescaled time of the first sample outside the regime
    pub s_star: Option<f64>,
    pub steps: usize,
    pub mass_drift: f64,
    pub mu: f64,
    pub energy_params: EnergyParams,
    pub bootstrap: BootstrapParams,
    pub monotonicity: MonotonicityReport,
    /// frame samples and frame at the last step
    pub final_frame: Frame,
    pub final_field: ComplexField<T>,
}

/// Backward run from `initial_data(t₁)` toward `t₀`, decomposed every
/// `snapshot_every` steps.
pub fn run_construction<T: Real>(cfg: &ExperimentConfig, bundle: &ProfileBundle<T>, mu: f64) -> Result<ConstructionRecord<T>> {
    cfg.validate()?;
    let energy_params = cfg.energy_params(mu);
    energy_params.validate(mu)?;
    let grid = &bundle.grid;
    let dim = grid.dim();
    let sigma1 = -1.0 / cfg.t1;
    let sigma0 = -1.0 / cfg.t0;
    let steps = ((sigma1 - sigma0) / cfg.frame_step).ceil().max(1.0) as usize;
    let dsigma = (sigma1 - sigma0) / steps as f64;
    let mut stepper = SplitStep::frame(grid, &cfg.spec, cfg.dealias);
    // the initial data is Q e^{-iσ₁} in the frame
    let phase = Complex::from_polar(T::one(), T::lit(-sigma1));
    let mut v: Vec<Complex<T>> = bundle.q.values().iter().map(|z| *z * phase).collect();

    let mut states: Vec<ModulationState<T>> = Vec::new();
    let mut fields = Vec::new();
    let mut stop = ConstructionStop::Completed;
    let mut s_star = None;
    let mut guess = Params::new(-cfg.t1, -cfg.t1, 0.0, vec![0.0; dim]);
    let mut last_sigma = sigma1;
    let mut conserved = Vec::new();
    let mut flags = Vec::new();
    let mut sigma = sigma1;
    let mut k = 0usize;
    loop {
        let frame = Frame::pseudo_conformal(sigma, dim);
        let field = ComplexField::from_parts(grid.clone(), v.clone());
        let t = -1.0 / sigma;
        let mut g = guess.clone();
        g.lambda *= last_sigma / sigma;
        g.b *= last_sigma / sigma;
        g.gamma += sigma - last_sigma;
        match decompose(&field, &frame, &g, bundle, &cfg.decompose, t) {
            Ok(mut st) => {
                st.s = match states.last() {
                    None => sigma1,
                    Some(prev) => prev.s - (prev.t - t) / (prev.lambda * st.lambda),
                };
                let f = bootstrap_monitor(&st, &cfg.bootstrap);
                let inside = f.all();
                guess = st.params();
                last_sigma = sigma;
                conserved.push(frame_conserved(&field, &frame, &cfg.spec));
                flags.push(f);
                if cfg.keep_fields {
                    fields.push((frame, field));
                }
                let s = st.s;
                states.push(st);
                if !inside && s_star.is_none() {
                    s_star = Some(s);
                    if cfg.stop_on_exit {
                        stop = ConstructionStop::BootstrapExit;
                        break;
                    }
                }
            }
            Err(Error::OutsideTube { .. }) | Err(Error::NewtonStagnation { .. }) if !states.is_empty() => {
                stop = ConstructionStop::TubeExit;
                s_star = states.last().map(|s| s.s);
                break;
            }
            Err(e) => return Err(e),
        }
        if k == steps {
            break;
        }
        let n = cfg.snapshot_every.min(steps - k);
        for _ in 0..n {
            match cfg.scheme {
                Scheme::Strang => stepper.step_in_place(&mut v, sigma, -dsigma)?,
                Scheme::TripleJump => stepper.step4_in_place(&mut v, sigma, -dsigma)?,
            }
            k += 1;
            sigma = sigma1 - k as f64 * dsigma;
        }
    }
    let final_frame = Frame::pseudo_conformal(sigma, dim);
    let final_field = ComplexField::from_parts(grid.clone(), v);

    let m0 = conserved[0].mass;
    let mass_drift = conserved.iter().map(|c| (c.mass / m0 - 1.0).abs()).fold(0.0, f64::max);
    let mut samples = Vec::with_capacity(states.len());
    for (i, st) in states.iter().enumerate() {
        let modulation = if i > 0 && i + 1 < states.len() {
            Some(mod_vector(&states[i - 1..=i + 1])?)
        } else {
            None
        };
        let en = energy_h(st, &cfg.spec, &energy_params, mu, bundle)?;
        let im_eps_grad_q = if grid.is_radial() {
            0.0
        } else {
            st.eps.inner(&bundle.grad_q[0].times_i())?.f64()
        };
        samples.push(Sample {
            t: st.t,
            s: st.s,
            lambda: st.lambda,
            b: st.b,
            gamma: st.gamma,
            w: st.w.clone(),
            eps_h1: st.eps_h1(),
            eps_weighted_l2: st.eps.moment_sq(1).f64().sqrt(),
            modulation,
            h: en.h,
            s_energy: en.s_energy,
            coercive: en.coercive,
            coercivity_rhs: en.coercivity_rhs,
            upper_ratio: en.upper_ratio,
            conserved: conserved[i].clone(),
            flags: flags[i].clone(),
            im_eps_grad_q,
            near_identity: st.diagnostics.near_identity,
            translation_imag: st.diagnostics.translation_imag,
            max_ortho: st.diagnostics.max_ortho(),
        });
    }
    // the energy check runs forward in s
    let mut esamples: Vec<EnergySample> = samples
        .iter()
        .map(|s| EnergySample {
            s: s.s,
            s_energy: s.s_energy,
            b: s.b,
            lambda: s.lambda,
            in_regime: s.flags.all(),
        })
        .collect();
    esamples.reverse();
    let monotonicity = energy_monotonicity_check(&esamples, &energy_params, cfg.bootstrap.k, MONOTONICITY_C);
    Ok(ConstructionRecord {
        samples,
        states,
        fields,
        stop,
        s_star,
        steps: k,
        mass_drift,
        mu,
        energy_params,
        bootstrap: cfg.bootstrap,
        monotonicity,
        final_frame,
        final_field,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub quantity: String,
    pub exponent: f64,
    /// fit window in rescaled time
    pub window: (f64, f64),
    /// root mean square residual of the log-log fit
    pub residual: f64,
    pub samples: usize,
    /// decades of the abscissa covered by the fit
    pub decades: f64,
    pub note: Option<String>,
}

/// Weighted least squares line `y = a + c x`; returns `(c, a, rms residual)`.
pub fn weighted_line(pts: &[(f64, f64)], weights: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = weights.iter().sum();
    let mx = pts.iter().zip(weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = pts.iter().zip(weights).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(weights).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(weights).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    let c = sxy / sxx;
    let a = my - c * mx;
    let res = (pts.iter().zip(weights).map(|(p, w)| w * (p.1 - a - c * p.0).powi(2)).sum::<f64>() / sw).sqrt();
    (c, a, res)
}

/// Log-log fit of `y` against `x`, weighted by the log spacing of the
/// abscissa, after dropping the 10% of samples nearest the start of the run
/// (the first entries of the input).
pub fn loglog_fit(name: &str, xs: &[f64], ys: &[f64], s: &[f64]) -> Result<RateFit> {
    let skip = xs.len() / 10;
    let mut pts: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(s)
        .skip(skip)
        .filter(|((x, y), _)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|((x, y), s)| (x.ln(), y.ln(), *s))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientWindow(format!("{name}: {} usable samples", pts.len())));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let n = pts.len();
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let lo = pts[i.saturating_sub(1)].0;
            let hi = pts[(i + 1).min(n - 1)].0;
            ((hi - lo) * 0.5).max(f64::MIN_POSITIVE)
        })
        .collect();
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
    let (c, _, res) = weighted_line(&xy, &weights);
    let decades = (pts[n - 1].0 - pts[0].0) / std::f64::consts::LN_10;
    let smin = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let smax = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    if decades < 0.5 {
        return Err(Error::InsufficientWindow(format!("{name}: window spans {decades:.3} decades")));
    }
    Ok(RateFit {
        quantity: name.to_string(),
        exponent: c,
        window: (smin, smax),
        residual: res,
        samples: n,
        decades,
        note: None,
    })
}

/// Values at or below this are treated as roundoff and left out of fits.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

/// Fits of `λ`, `b` against `|t|` and of `|Mod|`, `||ε||_{H¹}`, `|w|` against `s`.
pub fn rate_fits(samples: &[Sample]) -> Result<Vec<RateFit>> {
    let abs_t: Vec<f64> = samples.iter().map(|s| s.t.abs()).collect();
    let s: Vec<f64> = samples.iter().map(|s| s.s).collect();
    let col = |f: &dyn Fn(&Sample) -> f64| -> Vec<f64> { samples.iter().map(f).collect() };
    let mut fits = vec![
        loglog_fit("lambda_vs_abs_t", &abs_t, &col(&|x| x.lambda), &s)?,
        loglog_fit("b_vs_abs_t", &abs_t, &col(&|x| x.b), &s)?,
    ];
    let floor = |name: &str, ys: Vec<f64>| -> RateFit {
        let usable: Vec<f64> = ys.iter().map(|&y| if y > ROUNDOFF_FLOOR { y } else { f64::NAN }).collect();
        match loglog_fit(name, &s, &usable, &s) {
            Ok(f) => f,
            Err(e) => RateFit {
                quantity: name.to_string(),
                exponent: f64::NAN,
                window: (f64::NAN, f64::NAN),
                residual: f64::NAN,
                samples: 0,
                decades: 0.0,
                note: Some(format!("no fit: {e}; max value {:.3e}", ys.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max))),
            },
        }
    };
    fits.push(floor("mod_norm_vs_s", col(&|x| x.mod_norm().unwrap_or(f64::NAN))));
    fits.push(floor("eps_h1_vs_s", col(&|x| x.eps_h1)));
    fits.push(floor("w_vs_s", col(&|x| x.w.iter().map(|v| v * v).sum::<f64>().sqrt())));
    Ok(fits)
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentumReport {
    pub max_abs: f64,
    /// log-log slope of `|(Im ε, ∇Q)|` against `s`; `NaN` when at roundoff
    pub slope: f64,
    /// `max |(Im ε, ∇Q)| s²`
    pub fitted_c: f64,
    pub passed: bool,
}

/// `(Im ε, ∇Q)₂` along the run against the `s^{-2}` bound.
pub fn momentum_diagnostic(samples: &[Sample]) -> MomentumReport {
    let vals: Vec<f64> = samples.iter().map(|s| s.im_eps_grad_q.abs()).collect();
    let s: Vec<f64> = samples.iter().map(|s| s.s).collect();
    let max_abs = vals.iter().cloned().fold(0.0, f64::max);
    let fitted_c = vals.iter().zip(&s).map(|(v, s)| v * s * s).fold(0.0, f64::max);
    let usable: Vec<f64> = vals.iter().map(|&v| if v > ROUNDOFF_FLOOR { v } else { f64::NAN }).collect();
    let slope = loglog_fit("im_eps_grad_q", &s, &usable, &s).map(|f| f.exponent).unwrap_or(f64::NAN);
    let passed = max_abs < 1e-8 || (slope <= -1.5 && fitted_c < 1e2);
    MomentumReport {
        max_abs,
        slope,
        fitted_c,
        passed,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IntervalReport {
    /// `½|t| ≤ 1/s ≤ 2|t|` at every sample
    pub sandwich: bool,
    pub max_defect: f64,
    /// log-log slope of `|1/s - |t||` against `|t|`; `NaN` when the defect is negligible
    pub defect_slope: f64,
    pub required_slope: f64,
    pub passed: bool,
}

pub fn interval_conversion_check(samples: &[Sample], m_exp: f64) -> IntervalReport {
    let sandwich = samples
        .iter()
        .all(|x| 0.5 * x.t.abs() <= 1.0 / x.s && 1.0 / x.s <= 2.0 * x.t.abs());
    let defect: Vec<f64> = samples.iter().map(|x| (1.0 / x.s - x.t.abs()).abs()).collect();
    let max_defect = defect.iter().cloned().fold(0.0, f64::max);
    let abs_t: Vec<f64> = samples.iter().map(|x| x.t.abs()).collect();
    let s: Vec<f64> = samples.iter().map(|x| x.s).collect();
    let usable: Vec<f64> = defect
        .iter()
        .zip(&abs_t)
        .map(|(&d, &t)| if d > 1e-12 * t { d } else { f64::NAN })
        .collect();
    let negligible = max_defect < 1e-8;
    let defect_slope = if negligible {
        f64::NAN
    } else {
        loglog_fit("interval_defect", &abs_t, &usable, &s).map(|f| f.exponent).unwrap_or(f64::NAN)
    };
    let required_slope = m_exp + 1.0 - 0.5;
    IntervalReport {
        sandwich,
        max_defect,
        defect_slope,
        required_slope,
        passed: sandwich && (negligible || defect_slope >= required_slope),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitMember {
    pub t_n: f64,
    pub error: Option<String>,
    pub mass: f64,
    /// gauge-aligned distance to the oracle at `t₀`, when one exists
    pub oracle_distance: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitReport {
    pub t0: f64,
    pub members: Vec<LimitMember>,
    /// gauge-aligned pairwise distances at `t₀`; `NaN` for failed members
    pub cauchy: Vec<Vec<f64>>,
    /// `||u_n(t₀) - u_{n+1}(t₀)||₂` after gauge alignment
    pub successive: Vec<f64>,
    pub successive_ratios: Vec<f64>,
    pub successive_monotone: bool,
    pub oracle_monotone: Option<bool>,
    pub extrapolated_mass: f64,
    pub q_mass: f64,
    /// `| ||u_∞||₂ - ||Q||₂ | / ||Q||₂`
    pub mass_error: f64,
    pub partial: bool,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Multiplies `a` by the unit phase that best aligns it with `b`.
fn align<T: Real>(a: &ComplexField<T>, b: &ComplexField<T>) -> ComplexField<T> {
    let z: Complex<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .zip(a.grid().weights())
        .map(|((x, y), w)| {
            let p = *y * x.conj() * *w;
            Complex::new(p.re.f64(), p.im.f64())
        })
        .sum();
    if z.norm() == 0.0 {
        return a.clone();
    }
    let c = z / z.norm();
    a.scale(Complex::new(T::lit(c.re), T::lit(c.im)))
}

/// One construction run per anchor in `cfg.schedule`, all ending at `cfg.t0`,
/// compared in `L²` modulo the global phase. With `oracle` (the frame samples
/// of the exact solution at `t₀`), distances to it are reported as well.
pub fn limit_sequence<T: Real>(
    cfg: &ExperimentConfig,
    bundle: &ProfileBundle<T>,
    mu: f64,
    oracle: Option<&ComplexField<T>>,
) -> Result<LimitReport> {
    if cfg.schedule.len() < 4 {
        return Err(Error::InsufficientWindow(format!(
            "limit sequence needs at least 4 anchors, got {}",
            cfg.schedule.len()
        )));
    }
    cfg.validate()?;
    let runs: Vec<Result<ConstructionRecord<T>>> = cfg
        .schedule
        .par_iter()
        .map(|&t_n| {
            let member = ExperimentConfig {
                t1: t_n,
                stop_on_exit: false,
                keep_fields: false,
                ..cfg.clone()
            };
            run_construction(&member, bundle, mu)
        })
        .collect();
    let finals: Vec<Option<ComplexField<T>>> = runs
        .iter()
        .map(|r| match r {
            Ok(rec) if rec.stop == ConstructionStop::Completed => Some(rec.final_field.clone()),
            _ => None,
        })
        .collect();
    let members: Vec<LimitMember> = cfg
        .schedule
        .iter()
        .zip(&runs)
        .zip(&finals)
        .map(|((&t_n, r), f)| LimitMember {
            t_n,
            error: match r {
                Err(e) => Some(e.to_string()),
                Ok(rec) if rec.stop != ConstructionStop::Completed => Some(format!("stopped early: {:?}", rec.stop)),
                Ok(_) => None,
            },
            mass: f.as_ref().map_or(f64::NAN, |f| f.l2_sq().f64()),
            oracle_distance: match (f, oracle) {
                (Some(f), Some(o)) => f.gauge_distance(o).ok().map(|d| d.f64()),
                _ => None,
            },
            steps: r.as_ref().map_or(0, |rec| rec.steps),
        })
        .collect();
    let n = finals.len();
    let mut cauchy = vec![vec![f64::NAN; n]; n];
    for i in 0..n {
        for j in 0..n {
            if let (Some(a), Some(b)) = (&finals[i], &finals[j]) {
                cauchy[i][j] = a.gauge_distance(b)?.f64();
            }
        }
    }
    let successive: Vec<f64> = (0..n - 1).map(|i| cauchy[i][i + 1]).collect();
    let successive_ratios: Vec<f64> = successive.windows(2).map(|w| w[1] / w[0]).collect();
    let partial = finals.iter().any(Option::is_none);
    let oracle_monotone = oracle.map(|_| {
        let d: Vec<f64> = members.iter().map(|m| m.oracle_distance.unwrap_or(f64::NAN)).collect();
        strictly_decreasing(&d)
    });
    // extrapolate along the last three members with the observed contraction
    let q_mass = bundle.q.l2_sq().f64();
    let ok: Vec<&ComplexField<T>> = finals.iter().flatten().collect();
    let extrapolated_mass = match ok.len() {
        0 => f64::NAN,
        1 => ok[0].l2_sq().f64(),
        len => {
            let last = ok[len - 1];
            let prev = align(ok[len - 2], last);
            let ratio = if len >= 3 {
                let d1 = ok[len - 3].gauge_distance(ok[len - 2])?.f64();
                let d2 = prev.gauge_distance(last)?.f64();
                if d1 > 0.0 { (d2 / d1).clamp(0.0, 0.9) } else { 0.0 }
            } else {
                0.0
            };
            let c = T::lit(ratio / (1.0 - ratio));
            let lim = last.zip_map(&prev, |a, b| a + (a - b) * c)?;
            lim.l2_sq().f64()
        }
    };
    Ok(LimitReport {
        t0: cfg.t0,
        members,
        cauchy,
        successive_monotone: strictly_decreasing(&successive),
        successive,
        successive_ratios,
        oracle_monotone,
        extrapolated_mass,
        q_mass,
        mass_error: (extrapolated_mass.sqrt() - q_mass.sqrt()).abs() / q_mass.sqrt(),
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::conserved;
    use crate::modulation::bootstrap_flags;
    use crate::profiles::build_bundle;

    fn bundle() -> ProfileBundle<f64> {
        build_bundle(&SpatialGrid::periodic(20.0, 1024).unwrap()).unwrap()
    }

    fn synthetic(t: f64, s: f64, lambda: f64, b: f64, w: f64, im: f64) -> Sample {
        let zero = ConservedReport {
            mass: 0.0,
            energy: 0.0,
            momentum: vec![0.0],
        };
        Sample {
            t,
            s,
            lambda,
            b,
            gamma: s,
            w: vec![w],
            eps_h1: 0.0,
            eps_weighted_l2: 0.0,
            modulation: None,
            h: 0.0,
            s_energy: 0.0,
            coercive: true,
            coercivity_rhs: 0.0,
            upper_ratio: 0.0,
            conserved: zero,
            flags: bootstrap_flags(s, lambda, b, &[w], 0.0, &BootstrapParams::new(8)),
            im_eps_grad_q: im,
            near_identity: 0.0,
            translation_imag: 0.0,
            max_ortho: 0.0,
        }
    }

    #[test]
    fn initial_data_is_an_exact_tube_point() {
        // R = 30 so that the box edge sits where Q is below 1e-12
        let b = build_bundle(&SpatialGrid::<f64>::periodic(30.0, 2048).unwrap()).unwrap();
        let u = initial_data(-0.5, &b).unwrap();
        assert!((u.l2_sq() - b.q.l2_sq()).abs() < 1e-10);
        let c = conserved(&u, &CoefficientSpec::free());
        assert!(c.momentum[0].abs() < 1e-12);
        let st = decompose(&u, &Frame::identity(1), &Params::new(0.47, 0.52, 0.05, vec![0.01]), &b, &DecomposeOptions::default(), -0.5).unwrap();
        assert!((st.lambda - 0.5).abs() < 1e-10);
        assert!((st.b - 0.5).abs() < 1e-10);
        assert!(st.gamma.abs() < 1e-10);
        assert!(st.w[0].abs() < 1e-10);
        assert!(st.eps_h1() < 1e-10, "{}", st.eps_h1());
        assert!(initial_data(0.0, &b).is_err());
    }

    #[test]
    fn frame_quantities_match_physical_ones() {
        let b = bundle();
        let spec = crate::coeffs::builtin("oscillatory_v").unwrap().with_potential_scaled(0.1);
        let sigma = 2.0;
        let frame = Frame::pseudo_conformal(sigma, 1);
        // a profile that is neither real nor symmetric, so momentum is nonzero
        let v = ComplexField::from_fn(&b.grid, |y| {
            Complex::new((-(y - 0.3) * (y - 0.3)).exp(), 0.2 * y * (-y * y).exp())
        })
        .unwrap();
        let u = reconstruct(&Params::new(0.5, 0.5, 2.0, vec![0.0]), &(&v - &b.q), &Frame::identity(1), &b).unwrap();
        let fr = frame_conserved(&v, &frame, &spec);
        let ph = conserved(&u, &spec);
        assert!((fr.mass - ph.mass).abs() < 1e-12);
        assert!((fr.energy - ph.energy).abs() < 1e-9 * ph.energy.abs().max(1.0), "{} {}", fr.energy, ph.energy);
        assert!((fr.momentum[0] - ph.momentum[0]).abs() < 1e-9, "{} {}", fr.momentum[0], ph.momentum[0]);
        assert!(ph.momentum[0].abs() > 1e-3);
        // S has energy ||yQ||²/8 at every time
        let s = frame_conserved(&b.q, &frame, &CoefficientSpec::free());
        assert!((s.energy - b.q.moment_sq(1) / 8.0).abs() < 1e-9);
    }

    fn short_run(keep: bool) -> (ExperimentConfig, ConstructionRecord<f64>, ProfileBundle<f64>) {
        let b = bundle();
        let cfg = ExperimentConfig {
            t1: -0.05,
            t0: -0.1,
            frame_step: 2e-3,
            snapshot_every: 10,
            keep_fields: keep,
            ..Default::default()
        };
        let rec = run_construction(&cfg, &b, 0.06).unwrap();
        (cfg, rec, b)
    }

    #[test]
    fn free_construction_follows_the_explicit_solution() {
        let (cfg, rec, b) = short_run(true);
        assert_eq!(rec.stop, ConstructionStop::Completed);
        assert_eq!(rec.samples.len(), 501);
        assert!(rec.mass_drift < 1e-10, "{}", rec.mass_drift);
        for s in &rec.samples {
            assert!(s.flags.all(), "{}", s.s);
            assert!((s.s * s.lambda - 1.0).abs() < s.s.powf(-cfg.bootstrap.m_exp));
            assert!((s.s * s.lambda - 1.0).abs() < 1e-5);
            assert!(s.im_eps_grad_q.abs() < 1e-8);
            assert!(s.coercive);
        }
        let last = rec.samples.last().unwrap();
        assert!((last.t + 0.1).abs() < 1e-12);
        // stored fields decompose to the stored parameters
        for i in [0, 137, 500] {
            let (frame, field) = &rec.fields[i];
            let st = &rec.states[i];
            let again = decompose(field, frame, &st.params(), &b, &cfg.decompose, st.t).unwrap();
            assert!((again.lambda - st.lambda).abs() < 1e-9);
            assert!((again.b - st.b).abs() < 1e-9);
            assert!((again.gamma - st.gamma).abs() < 1e-9);
            assert!((again.w[0] - st.w[0]).abs() < 1e-9);
        }
        assert!(!rec.monotonicity.skipped);
        assert!(rec.monotonicity.fraction_ok >= 0.95);
    }

    #[test]
    fn construction_is_deterministic() {
        let (_, a, _) = short_run(false);
        let (_, b, _) = short_run(false);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
            assert_eq!(x.h.to_bits(), y.h.to_bits());
        }
        assert_eq!(a.final_field.values(), b.final_field.values());
    }

    #[test]
    fn leaving_the_regime_stops_the_run() {
        let b = bundle();
        // a strong potential pushes the trajectory out of the bootstrap regime
        let cfg = ExperimentConfig {
            spec: crate::coeffs::builtin("harmonic").unwrap().with_potential_scaled(-50.0),
            t1: -0.05,
            t0: -0.5,
            frame_step: 2e-3,
            snapshot_every: 10,
            ..Default::default()
        };
        let rec = run_construction(&cfg, &b, 0.06).unwrap();
        assert_ne!(rec.stop, ConstructionStop::Completed);
        let s_star = rec.s_star.unwrap();
        assert!(s_star > 2.0 && s_star < 20.0, "{s_star}");
        assert!(!rec.samples.last().unwrap().flags.all() || rec.stop == ConstructionStop::TubeExit);
    }

    #[test]
    fn rate_fits_on_exact_data() {
        let samples: Vec<Sample> = (0..=400)
            .map(|k| {
                let t = -0.02 - k as f64 * 0.08 / 400.0;
                let s = 1.0 / t.abs();
                synthetic(t, s, t.abs(), t.abs(), 0.0, 0.0)
            })
            .collect();
        let fits = rate_fits(&samples).unwrap();
        assert!((fits[0].exponent - 1.0).abs() < 1e-6);
        assert!((fits[1].exponent - 1.0).abs() < 1e-6);
        assert!(fits[0].decades >= 0.5);
        // quantities at zero are reported without a fit
        assert!(fits[4].exponent.is_nan() && fits[4].note.is_some());
        let short: Vec<Sample> = samples.iter().take(40).cloned().collect();
        assert!(matches!(rate_fits(&short), Err(Error::InsufficientWindow(_))));
    }

    #[test]
    fn w_fit_reports_a_negative_slope() {
        let samples: Vec<Sample> = (0..=400)
            .map(|k| {
                let t = -0.02 - k as f64 * 0.08 / 400.0;
                let s = 1.0 / t.abs();
                synthetic(t, s, t.abs(), t.abs(), 0.3 * s.powi(-2), 0.0)
            })
            .collect();
        let fits = rate_fits(&samples).unwrap();
        assert!((fits[4].exponent + 2.0).abs() < 1e-9);
    }

    #[test]
    fn momentum_and_interval_reports() {
        let make = |sign: f64| -> Vec<Sample> {
            (0..=200)
                .map(|k| {
                    let t = -0.02 - k as f64 * 0.08 / 200.0;
                    let s = 1.0 / t.abs();
                    synthetic(t, s, t.abs(), t.abs(), 0.0, sign * 5.0 * s.powi(-2))
                })
                .collect()
        };
        let a = momentum_diagnostic(&make(1.0));
        let b = momentum_diagnostic(&make(-1.0));
        assert!(a.passed && b.passed);
        assert!((a.slope + 2.0).abs() < 1e-9);
        assert_eq!(a.fitted_c.to_bits(), b.fitted_c.to_bits());
        assert!(momentum_diagnostic(&make(0.0)).passed);
        let r = interval_conversion_check(&make(0.0), 1.125);
        assert!(r.sandwich && r.passed && r.max_defect < 1e-8);
        let mut bad = make(0.0);
        bad[10].s *= 3.0;
        assert!(!interval_conversion_check(&bad, 1.125).sandwich);
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = ExperimentConfig {
            t1: 0.1,
            t0: 0.2,
            frame_step: -1.0,
            bootstrap: BootstrapParams { k: 2, m_exp: 1.1 },
            ..Default::default()
        };
        let v = cfg.violations();
        assert!(v.len() >= 4, "{v:?}");
        let cfg = ExperimentConfig {
            bootstrap: BootstrapParams { k: 8, m_exp: 1.3 },
            ..Default::default()
        };
        assert!(cfg.violations().iter().any(|m| m.contains("2(L-1)")));
        assert_eq!(geometric_schedule(-0.1, 0.5, 3), vec![-0.1, -0.05, -0.025]);
    }

    #[test]
    fn limit_sequence_needs_four_members() {
        let b = bundle();
        let cfg = ExperimentConfig {
            t0: -0.5,
            schedule: geometric_schedule(-0.1, 0.7, 3),
            ..Default::default()
        };
        assert!(matches!(limit_sequence(&cfg, &b, 0.06, None), Err(Error::InsufficientWindow(_))));
    }
}
